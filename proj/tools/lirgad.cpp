// SPDX-License-Identifier: Apache-2.0
//
// lirgad: dataset generation, training, evaluation, ablations and the
// gradient/oracle self-checks.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lirgad/gradcheck.hpp"
#include "lirgad/reference.hpp"
#include "lirgad/train.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file (flat dotted keys)");
  cmd->add_option("--seed", o.seed, "Overrides the `seed` key");
  cmd->add_option("--out", o.out, "Output directory (overrides the `out` key)");
  cmd->add_option("--set", o.overrides, "key=value override, repeatable")->take_all();
}

lirgad::ExperimentConfig resolve(const CommonOptions& o) {
  lirgad::ExperimentConfig cfg =
      o.config_path.empty() ? lirgad::ExperimentConfig{} : lirgad::ExperimentConfig::from_file(o.config_path);
  for (const auto& kv : o.overrides) cfg.set_override(kv);
  if (o.seed) cfg.set("seed", *o.seed);
  if (!o.out.empty()) cfg.set("out", o.out);
  return cfg;
}

void print_report(const lirgad::EvalReport& r) {
  const lirgad::Taxonomy tax;
  for (const auto& t : r.thresholds) {
    std::printf("Group mAP@%s  %.4f\n", lirgad::threshold_key(t.threshold).c_str(), t.map);
    for (std::size_t c = 0; c < t.class_ap.size(); ++c) {
      if (t.class_ap[c]) std::printf("  %-10s %.4f\n", tax.name(static_cast<int>(c)).c_str(), *t.class_ap[c]);
    }
  }
  std::printf("Outlier mIoU  %.4f\n", r.outlier_miou);
  for (std::size_t b = 0; b < lirgad::kSizeBucketNames.size(); ++b) {
    if (r.sizes.bucket_ap[b]) std::printf("AP %-6s     %.4f\n", lirgad::kSizeBucketNames[b], *r.sizes.bucket_ap[b]);
  }
  std::printf("size mAP      %.4f\n", r.sizes.map);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group activity detection with token-conditioned reasoning"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, ablate_o;
  auto* gen = app.add_subcommand("gen", "Generate the synthetic train/eval manifests");
  add_common(gen, gen_o);

  auto* train = app.add_subcommand("train", "Train, checkpoint and evaluate");
  add_common(train, train_o);
  std::optional<std::string> resume;
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a predictions file");
  add_common(eval, eval_o);
  std::optional<std::string> checkpoint, predictions;
  std::string split = "eval";
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default: <out>/checkpoint.json)");
  eval->add_option("--predictions", predictions, "Score this predictions document instead of a model");
  eval->add_option("--split", split, "Dataset split: train or eval")->check(CLI::IsMember({"train", "eval"}));

  auto* ablate = app.add_subcommand("ablate", "Component and fusion-variant ablations");
  add_common(ablate, ablate_o);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::uint64_t gc_seed = 1;
  gradcheck->add_option("--seed", gc_seed, "Randomization seed");

  auto* oracle = app.add_subcommand("oracle", "Matching and metric oracles");
  std::uint64_t or_seed = 1;
  std::size_t or_matrices = 1000, or_benchmarks = 200;
  oracle->add_option("--seed", or_seed, "Randomization seed");
  oracle->add_option("--matrices", or_matrices, "Random cost matrices");
  oracle->add_option("--benchmarks", or_benchmarks, "Random metric benchmarks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = resolve(gen_o);
      const auto summary = lirgad::cmd_gen(cfg);
      std::cout << summary.dump(2) << '\n';
    } else if (*train) {
      const auto cfg = resolve(train_o);
      print_report(lirgad::cmd_train(cfg, resume));
    } else if (*eval) {
      const auto cfg = resolve(eval_o);
      print_report(lirgad::cmd_eval(cfg, checkpoint, split, predictions));
    } else if (*ablate) {
      std::cout << lirgad::cmd_ablate(resolve(ablate_o));
    } else if (*gradcheck) {
      bool ok = true;
      for (const auto& op : lirgad::gradcheck_suite()) {
        const auto r = lirgad::run_gradcheck(op, gc_seed);
        std::printf("%-28s %s  max_rel_err=%.3e  entries=%zu  %.2fs\n", r.name.c_str(), r.passed() ? "PASS" : "FAIL",
                    r.max_rel_error, r.entries, r.seconds);
        ok = ok && r.passed();
      }
      return ok ? 0 : 1;
    } else if (*oracle) {
      const auto m = lirgad::reference::matching_oracle(or_seed, or_matrices);
      const auto e = lirgad::reference::metric_oracle(or_seed, or_benchmarks);
      std::printf("matching  %s  %zu matrices, %zu mismatches\n", m.passed() ? "PASS" : "FAIL", m.checked, m.mismatches);
      std::printf("metrics   %s  %zu benchmarks, %zu mismatches, max |diff| %.3e\n", e.passed() ? "PASS" : "FAIL",
                  e.checked, e.mismatches, e.max_abs_diff);
      return m.passed() && e.passed() ? 0 : 1;
    }
  } catch (const lirgad::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
