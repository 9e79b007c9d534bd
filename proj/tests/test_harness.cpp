// Config, CLI commands, checkpoints and the self-check suites.
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "lirgad/gradcheck.hpp"
#include "lirgad/reference.hpp"
#include "lirgad/train.hpp"

using namespace lirgad;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const auto p = fs::path(LIRGAD_TEST_TMP) / "harness" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

/// K=4, N=1, width 16 and a handful of clips, so each command takes seconds.
ExperimentConfig tiny(const std::string& dir) {
  ExperimentConfig cfg;
  for (const char* kv : {"K=4", "N=1", "heads=2", "D_vis=16", "D_text=16", "decoder.layers=1", "decoder.heads=2",
                         "decoder.adapter_rank=2", "gen.train_clips=6", "gen.eval_clips=3", "gen.max_groups=3",
                         "gen.max_group_size=3", "epochs=2", "batch_size=2", "lr.warmup_epochs=1"})
    cfg.set_override(kv);
  cfg.set("dataset", dir + "/data");
  cfg.set("out", dir + "/run");
  return cfg;
}

std::string slurp(const std::string& path) { return read_text(path); }

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LIRGAD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsMatchReferenceSetup) {
  const ExperimentConfig cfg;
  EXPECT_EQ(cfg.size("K"), 12u);
  EXPECT_EQ(cfg.size("N"), 3u);
  EXPECT_EQ(cfg.size("heads"), 4u);
  EXPECT_EQ(cfg.size("T"), 5u);
  EXPECT_EQ(cfg.size("epochs"), 20u);
  EXPECT_EQ(cfg.size("batch_size"), 4u);
  EXPECT_EQ(cfg.size("D_vis"), 64u);
  EXPECT_EQ(cfg.get<double>("lr.base"), 1e-5);
  EXPECT_EQ(cfg.get<double>("lr.peak"), 1e-4);
  EXPECT_EQ(cfg.get<std::string>("mdaf.variant"), "sp2");
}

TEST(Config, UnknownKeyIsConfigError) {
  ExperimentConfig cfg;
  EXPECT_THROW(cfg.set_override("nope=1"), ConfigError);
  EXPECT_THROW(cfg.get<int>("nope"), ConfigError);
  EXPECT_THROW(cfg.merge(Json{{"K", 4}, {"also_nope", 1}}), ConfigError);
}

TEST(Config, OverridesAreTyped) {
  ExperimentConfig cfg;
  cfg.set_override("K=6");
  EXPECT_EQ(cfg.size("K"), 6u);
  cfg.set_override("lr.peak=1");
  EXPECT_EQ(cfg.get<double>("lr.peak"), 1.0);
  cfg.set_override("mdaf.variant=con2");
  EXPECT_EQ(cfg.model().variant, MdafVariant::kCON2);
  cfg.set_override("use_l_act=false");
  EXPECT_FALSE(cfg.get<bool>("use_l_act"));
  EXPECT_THROW(cfg.set_override("K=abc"), ConfigError);
  EXPECT_THROW(cfg.set_override("K=1.5"), ConfigError);
  EXPECT_THROW(cfg.set_override("use_l_act=2"), ConfigError);
  EXPECT_THROW(cfg.set_override("K"), ConfigError);
}

TEST(Config, InvalidModelSettingsRejected) {
  ExperimentConfig cfg;
  cfg.set_override("heads=5");  // 64 not divisible by 5
  EXPECT_THROW(cfg.model(), ConfigError);
  ExperimentConfig cfg2;
  cfg2.set_override("mdaf.variant=sp9");
  EXPECT_THROW(cfg2.model(), ConfigError);
  ExperimentConfig cfg3;
  cfg3.set_override("lambda.mem=-1");
  EXPECT_THROW(cfg3.losses(), ConfigError);
  ExperimentConfig cfg4;
  cfg4.set_override("ablate.seeds=1,x");
  EXPECT_THROW(cfg4.seed_list("ablate.seeds"), ConfigError);
}

TEST(Config, FileErrors) {
  const auto dir = scratch("config_files");
  EXPECT_THROW(ExperimentConfig::from_file(dir + "/absent.json"), IoError);
  std::ofstream(dir + "/bad.json") << "{ \"K\": ";
  EXPECT_THROW(ExperimentConfig::from_file(dir + "/bad.json"), ParseError);
  std::ofstream(dir + "/good.json") << "{ \"K\": 8, \"seed\": 7 }";
  const auto cfg = ExperimentConfig::from_file(dir + "/good.json");
  EXPECT_EQ(cfg.size("K"), 8u);
  EXPECT_EQ(cfg.get<std::uint64_t>("seed"), 7u);
}

TEST(Gen, DefaultSplitSizesAndHistogram) {
  const auto dir = scratch("gen_default");
  ExperimentConfig cfg;
  cfg.set("dataset", dir);
  const auto summary = cmd_gen(cfg);
  EXPECT_EQ(summary["train"]["clips"].get<std::size_t>(), 64u);
  EXPECT_EQ(summary["eval"]["clips"].get<std::size_t>(), 16u);
  std::size_t hist_total = 0;
  for (const auto& [size, count] : summary["total"]["group_size_histogram"].items()) hist_total += count.get<std::size_t>();
  EXPECT_EQ(hist_total, summary["total"]["groups"].get<std::size_t>());
  const auto train = read_dataset(dir + "/train.json");
  const auto eval = read_dataset(dir + "/eval.json");
  EXPECT_EQ(train.clips.size(), 64u);
  std::set<std::string> ids;
  for (const auto& c : train.clips) ids.insert(c.clip_id);
  for (const auto& c : eval.clips) EXPECT_EQ(ids.count(c.clip_id), 0u) << c.clip_id;
}

TEST(Gen, SameSeedSameBytes) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  ExperimentConfig cfg = tiny(a);
  cmd_gen(cfg);
  cfg.set("dataset", b + "/data");
  cmd_gen(cfg);
  for (const char* f : {"train.json", "eval.json", "summary.json"})
    EXPECT_EQ(slurp(a + "/data/" + f), slurp(b + "/data/" + f)) << f;
}

TEST(Train, SmokeRunWritesEveryOutput) {
  const auto dir = scratch("smoke");
  auto cfg = tiny(dir);
  cfg.set("max_steps", 10);
  cfg.set("epochs", 10);
  cmd_gen(cfg);
  cmd_train(cfg);
  const auto csv = slurp(dir + "/run/losses.csv");
  EXPECT_EQ(line_count(csv), 11u);
  EXPECT_EQ(csv.substr(0, csv.find('\n') + 1), csv_header());
  for (const char* f : {"config.json", "checkpoint.json", "predictions.json", "report.json", "report.csv", "run.json"})
    EXPECT_TRUE(fs::exists(dir + "/run/" + f)) << f;
  // Outputs re-read through their schemas.
  const auto report = report_from_json(parse_json_document(slurp(dir + "/run/report.json"), "report"), Taxonomy{});
  EXPECT_EQ(report.clip_count, 3u);
  EXPECT_NO_THROW(predictions_from_json(parse_json_document(slurp(dir + "/run/predictions.json"), "p"), Taxonomy{}));
  const auto run = parse_json_document(slurp(dir + "/run/run.json"), "run");
  EXPECT_EQ(run["steps"].get<int>(), 10);
  EXPECT_TRUE(run.contains("wall_clock_seconds"));
  const auto flat = slurp(dir + "/run/report.csv");
  EXPECT_EQ(line_count(flat), 2u);
  EXPECT_EQ(flat.substr(0, flat.find(',')), "clips");
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  const auto a = scratch("resume_a"), b = scratch("resume_b");
  auto cfg_a = tiny(a);
  cfg_a.set("max_steps", 4);
  cmd_gen(cfg_a);
  cmd_train(cfg_a);

  auto cfg_b = tiny(b);
  cfg_b.set("dataset", a + "/data");
  cfg_b.set("max_steps", 2);
  cmd_train(cfg_b);
  cfg_b.set("max_steps", 4);
  cmd_train(cfg_b, b + "/run/checkpoint.json");

  EXPECT_EQ(slurp(a + "/run/losses.csv"), slurp(b + "/run/losses.csv"));
  const auto ck_a = parse_checkpoint(slurp(a + "/run/checkpoint.json"));
  const auto ck_b = parse_checkpoint(slurp(b + "/run/checkpoint.json"));
  EXPECT_EQ(ck_a.global_step, 4);
  EXPECT_EQ(ck_b.global_step, 4);
  EXPECT_EQ(ck_a.params, ck_b.params);
  EXPECT_EQ(ck_a.adam, ck_b.adam);
  EXPECT_EQ(slurp(a + "/run/predictions.json"), slurp(b + "/run/predictions.json"));
}

TEST(Train, WithoutActTokenRuns) {
  const auto dir = scratch("no_act");
  auto cfg = tiny(dir);
  cfg.set("use_act_token", false);
  cfg.set("max_steps", 2);
  const auto d = generate_dataset(cfg);
  const auto res = run_experiment(cfg, d.train, d.eval);
  ASSERT_EQ(res.log.size(), 2u);
  for (const auto& r : res.log) EXPECT_TRUE(std::isfinite(r.total));
}

TEST(Train, StepCountFollowsSchedule) {
  const auto dir = scratch("steps");
  auto cfg = tiny(dir);  // 6 clips, batch 2, 2 epochs
  const auto d = generate_dataset(cfg);
  EXPECT_EQ(run_experiment(cfg, d.train, {}).log.size(), 6u);
  EXPECT_EQ(steps_per_epoch(6, 4), 2u);
  EXPECT_THROW(steps_per_epoch(6, 0), ConfigError);
}

TEST(Train, EpochOrderIsAPermutationAndReplayable) {
  const auto o = epoch_order(20, 9, 3);
  EXPECT_EQ(o, epoch_order(20, 9, 3));
  EXPECT_NE(o, epoch_order(20, 9, 4));
  auto sorted = o;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Checkpoint, MismatchesAreReported) {
  const auto dir = scratch("ck_mismatch");
  auto cfg = tiny(dir);
  cfg.set("max_steps", 1);
  cmd_gen(cfg);
  cmd_train(cfg);
  const auto ck_path = dir + "/run/checkpoint.json";

  auto wrong_k = cfg;
  wrong_k.set("K", 5);
  EXPECT_THROW(cmd_eval(wrong_k, ck_path, "eval"), ConfigError);

  auto wrong_width = cfg;
  wrong_width.set("D_vis", 8);
  try {
    cmd_eval(wrong_width, ck_path, "eval");
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("checkpoint parameter '"), std::string::npos) << e.what();
  }

  write_text(dir + "/bad_ck.json", "{\"format\": \"something-else\"}");
  EXPECT_THROW(cmd_eval(cfg, dir + "/bad_ck.json", "eval"), ValidationError);
  write_text(dir + "/trunc_ck.json", slurp(ck_path).substr(0, 100));
  EXPECT_THROW(cmd_eval(cfg, dir + "/trunc_ck.json", "eval"), ParseError);
}

TEST(Eval, CheckpointEvalMatchesTrainEval) {
  const auto dir = scratch("eval_ck");
  auto cfg = tiny(dir);
  cfg.set("max_steps", 2);
  cmd_gen(cfg);
  cmd_train(cfg);
  const auto after_train = slurp(dir + "/run/report.json");
  cmd_eval(cfg, std::nullopt, "eval");
  EXPECT_EQ(slurp(dir + "/run/report.json"), after_train);
  cmd_eval(cfg, std::nullopt, "eval");
  EXPECT_EQ(slurp(dir + "/run/report.json"), after_train);
}

TEST(Eval, GroundTruthReplayAndEmptyPredictions) {
  const auto dir = scratch("eval_replay");
  auto cfg = tiny(dir);
  cmd_gen(cfg);
  const auto eval = load_split(cfg, "eval");
  write_text(dir + "/gt.json", predictions_to_json(predictions_from_truth(eval), Taxonomy{}).dump());
  const auto perfect = cmd_eval(cfg, std::nullopt, "eval", dir + "/gt.json");
  EXPECT_EQ(perfect.map_at(1.0), 1.0);
  EXPECT_EQ(perfect.map_at(0.5), 1.0);
  EXPECT_EQ(perfect.outlier_miou, 1.0);

  write_text(dir + "/empty.json", "{}");
  const auto empty = cmd_eval(cfg, std::nullopt, "eval", dir + "/empty.json");
  EXPECT_EQ(empty.map_at(1.0), 0.0);
  EXPECT_EQ(empty.map_at(0.5), 0.0);
  EXPECT_EQ(empty.sizes.map, 0.0);
}

TEST(Eval, MalformedPredictionsRejected) {
  const auto dir = scratch("eval_bad_preds");
  auto cfg = tiny(dir);
  cmd_gen(cfg);
  write_text(dir + "/p.json", R"({"x": {"groups": [{"members": [1], "activity": "Dancing", "confidence": 1}], "outliers": []}})");
  EXPECT_THROW(cmd_eval(cfg, std::nullopt, "eval", dir + "/p.json"), ValidationError);
  write_text(dir + "/q.json", R"({"x": {"groups": []}})");
  EXPECT_THROW(cmd_eval(cfg, std::nullopt, "eval", dir + "/q.json"), ValidationError);
}

TEST(Eval, MissingDatasetIsIoError) {
  const auto dir = scratch("eval_nodata");
  EXPECT_THROW(cmd_eval(tiny(dir), std::nullopt, "eval"), IoError);
}

TEST(Ablate, TenRowsPerSeedAndReproducible) {
  const auto dir = scratch("ablate");
  auto cfg = tiny(dir);
  cfg.set("max_steps", 1);
  cfg.set("ablate.seeds", "4");
  cmd_gen(cfg);
  const auto first = cmd_ablate(cfg);
  EXPECT_EQ(line_count(first), 11u);
  EXPECT_EQ(first, cmd_ablate(cfg));
  EXPECT_EQ(slurp(dir + "/run/ablation.csv"), first);
  EXPECT_NE(first.find("components,Base,4,bypass,0,0,0,"), std::string::npos);
}

TEST(Ablate, RowTableMatchesComponentsAndVariants) {
  const auto& rows = ablation_rows();
  ASSERT_EQ(rows.size(), 10u);
  const auto base = ablation_config(ExperimentConfig{}, rows[0], 2);
  EXPECT_EQ(base.model().variant, MdafVariant::kBypass);
  EXPECT_FALSE(base.model().needs_decoder());
  EXPECT_EQ(base.get<std::uint64_t>("seed"), 2u);
  std::set<std::string> fusion;
  for (const auto& r : rows)
    if (std::string(r.table) == "fusion") fusion.insert(r.variant);
  EXPECT_EQ(fusion, (std::set<std::string>{"con1", "con2", "sp1", "sp2"}));
}

TEST(GradcheckSuite, EveryOpListedOnce) {
  std::set<std::string> names;
  for (const auto& op : gradcheck_suite()) EXPECT_TRUE(names.insert(op.name).second) << op.name;
  for (const char* required : {"matmul", "softmax_rows", "layer_norm", "attention", "bce_with_logits",
                               "cross_entropy_rows", "low_rank_adapter", "end_to_end_model"})
    EXPECT_EQ(names.count(required), 1u) << required;
}

TEST(GradcheckSuite, CorruptedBackwardIsCaught) {
  const auto r = run_gradcheck(corrupted_fixture(), 1);
  EXPECT_FALSE(r.passed());
  EXPECT_GT(r.max_rel_error, 0.05);
}

TEST(Oracles, SmallRunsPass) {
  EXPECT_TRUE(reference::matching_oracle(5, 100).passed());
  EXPECT_TRUE(reference::metric_oracle(5, 30).passed());
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("gen --set nope=1"), 2);
  EXPECT_NE(run_cli("bogus-command"), 0);
  const auto dir = scratch("cli");
  EXPECT_EQ(run_cli("gen --set gen.train_clips=2 --set gen.eval_clips=1 --set dataset=" + dir), 0);
  EXPECT_TRUE(fs::exists(dir + "/train.json"));
  EXPECT_EQ(run_cli("eval --set dataset=" + dir + "/absent"), 1);
}
