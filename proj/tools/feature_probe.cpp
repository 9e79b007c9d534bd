// SPDX-License-Identifier: Apache-2.0
//
// feature_probe: how well the stand-in actor features separate group
// activities. Centroids are fit on clips 1001..1100 and scored on 1..100.
#include <cstdio>

#include <CLI11.hpp>

#include "lirgad/probe.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Nearest-centroid and pair-similarity probe of actor features"};
  std::uint64_t feature_seed = 1234;
  std::size_t width = 64;
  std::vector<double> noises{0.0, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
  app.add_option("--feature-seed", feature_seed, "Feature projection seed");
  app.add_option("--width", width, "Feature width D_vis");
  app.add_option("--noise", noises, "Noise levels to sweep");
  CLI11_PARSE(app, argc, argv);

  const lirgad::FeatureProvider fp(feature_seed, width);
  const auto fit = lirgad::seeded_clips(1001, 100);
  const auto test = lirgad::seeded_clips(1, 100);
  std::printf("noise  centroid_acc  cos_same_group  cos_member_outlier\n");
  for (double s : noises) {
    const double acc = lirgad::nearest_centroid_accuracy(fit, test, fp, s);
    const auto sim = lirgad::pair_similarity(test, fp, s);
    std::printf("%-6.2f %-13.4f %-15.4f %.4f\n", s, acc, sim.same_group, sim.actor_outlier);
  }
  return 0;
}
