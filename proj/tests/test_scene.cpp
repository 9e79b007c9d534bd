// Synthetic scenes, stand-in features and the dataset manifest.
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "lirgad/probe.hpp"

using namespace lirgad;

namespace {

std::string tmp_path(const std::string& name) {
  std::filesystem::create_directories(LIRGAD_TEST_TMP);
  return (std::filesystem::path(LIRGAD_TEST_TMP) / name).string();
}

GeneratorParams two_groups_of_three_one_outlier() {
  GeneratorParams p;
  p.min_groups = p.max_groups = 2;
  p.min_group_size = p.max_group_size = 3;
  p.max_outliers = 1;
  p.outlier_prob = 1.0;
  return p;
}

}  // namespace

TEST(GenerateScene, SameSeedSameClip) {
  const GeneratorParams p;
  for (std::uint64_t s : {1u, 2u, 99u}) {
    const auto a = generate_scene(s, p), b = generate_scene(s, p);
    EXPECT_EQ(a, b);
    EXPECT_EQ(clip_to_json(a).dump(), clip_to_json(b).dump());
  }
}

TEST(GenerateScene, NoOutliersAtProbabilityZero) {
  GeneratorParams p;
  p.outlier_prob = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_TRUE(generate_scene(s, p).outlier_actor_ids.empty());
}

TEST(GenerateScene, TwoGroupsOfThreePlusOutlierIsSevenActors) {
  const auto clip = generate_scene(5, two_groups_of_three_one_outlier());
  EXPECT_EQ(clip.actors.size(), 7u);
  ASSERT_EQ(clip.groups.size(), 2u);
  for (const auto& g : clip.groups) EXPECT_EQ(g.member_ids.size(), 3u);
  for (ActorId id : clip.groups[0].member_ids) EXPECT_EQ(clip.groups[1].member_ids.count(id), 0u);
  EXPECT_EQ(clip.outlier_actor_ids.size(), 1u);
}

TEST(GenerateScene, InconsistentParamsAreConfigErrors) {
  GeneratorParams p;
  p.min_groups = 3;
  p.max_groups = 2;
  EXPECT_THROW(generate_scene(1, p), ConfigError);
  GeneratorParams q;
  q.max_groups = 13;  // above the K=12 budget
  EXPECT_THROW(generate_scene(1, q), ConfigError);
}

TEST(GenerateScene, EveryClipSatisfiesInvariants) {
  const GeneratorParams p;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto clip = generate_scene(s, p);
    EXPECT_NO_THROW(validate_clip(clip, Taxonomy{}, p.max_group_budget));
    EXPECT_LE(static_cast<int>(clip.groups.size()), p.max_groups);
  }
}

TEST(Featurize, NoiselessIsDeterministic) {
  const auto clip = generate_scene(3, GeneratorParams{});
  const auto a = featurize(clip, 1234, 0.0), b = featurize(clip, 1234, 0.0);
  EXPECT_EQ(a.actor_features.data(), b.actor_features.data());
  EXPECT_EQ(a.frame_features.data(), b.frame_features.data());
}

TEST(Featurize, NoisyIsDeterministicPerClip) {
  const auto clip = generate_scene(3, GeneratorParams{});
  EXPECT_EQ(featurize(clip, 1234, 0.1).actor_features.data(), featurize(clip, 1234, 0.1).actor_features.data());
  EXPECT_NE(featurize(clip, 1234, 0.1).actor_features.data(), featurize(clip, 1234, 0.0).actor_features.data());
}

TEST(Featurize, ShapesFollowActorsAndFrames) {
  const auto clip = generate_scene(5, two_groups_of_three_one_outlier());
  const auto f = featurize(clip, 1234, 0.05, 64);
  EXPECT_EQ(f.actor_features.shape(), (Shape{7, 64}));
  EXPECT_EQ(f.frame_features.shape(), (Shape{5, 64}));
  for (double v : f.actor_features.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Featurize, NegativeNoiseIsConfigError) {
  const auto clip = generate_scene(5, GeneratorParams{});
  EXPECT_THROW(featurize(clip, 1, -0.1), ConfigError);
}

TEST(Featurize, SameGroupPairsAreMoreSimilarThanOutlierPairs) {
  const FeatureProvider fp(1234, 64);
  const auto sim = pair_similarity(seeded_clips(1, 100), fp, 0.0);
  EXPECT_GT(sim.clips, 20u);
  EXPECT_GT(sim.same_group, sim.actor_outlier);
}

TEST(Featurize, NearestCentroidRecoversGroupActivity) {
  // Measured with tools/feature_probe: 1.0000 at noise 0 (see README).
  const FeatureProvider fp(1234, 64);
  const double acc = nearest_centroid_accuracy(seeded_clips(1001, 100), seeded_clips(1, 100), fp, 0.0);
  EXPECT_GT(acc, 0.95);
}

TEST(Manifest, RoundTripOfTenClips) {
  Dataset ds;
  for (std::uint64_t s = 0; s < 10; ++s) ds.clips.push_back(generate_scene(s, GeneratorParams{}));
  const auto path = tmp_path("roundtrip.json");
  write_dataset(ds, path);
  EXPECT_EQ(read_dataset(path), ds);
}

TEST(Manifest, EmptyClipListIsValid) {
  const auto path = tmp_path("empty.json");
  write_dataset(Dataset{}, path);
  const auto ds = read_dataset(path);
  EXPECT_TRUE(ds.clips.empty());
  EXPECT_EQ(ds.taxonomy, Taxonomy{});
}

TEST(Manifest, OverlappingMembershipsRejected) {
  auto clip = generate_scene(5, two_groups_of_three_one_outlier());
  clip.groups[1].member_ids.insert(*clip.groups[0].member_ids.begin());
  const auto path = tmp_path("overlap.json");
  write_dataset(Dataset{Taxonomy{}, {clip}}, path);
  EXPECT_THROW(read_dataset(path), ValidationError);
}

TEST(Manifest, MalformedFileReportsLine) {
  const auto path = tmp_path("malformed.json");
  std::ofstream(path) << "{\n  \"version\": 1,\n  \"clips\": [\n  oops\n]}\n";
  try {
    read_dataset(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MissingFieldNamesPath) {
  Dataset ds{Taxonomy{}, {generate_scene(1, GeneratorParams{})}};
  auto j = dataset_to_json(ds);
  j["clips"][0]["actors"][0].erase("boxes");
  try {
    dataset_from_string(j.dump());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("$.clips[0].actors[0]"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MissingFileIsIoError) { EXPECT_THROW(read_dataset(tmp_path("absent.json")), IoError); }
