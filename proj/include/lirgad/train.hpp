// SPDX-License-Identifier: Apache-2.0
//
// Training, inference and the run-directory commands built on them.
//
// Run directory (all names fixed):
//   config.json       resolved configuration
//   losses.csv        step,lr,L_ind,L_group,L_mem,L_con,L_act,L_nll,total
//   checkpoint.json   parameters + optimizer state
//   predictions.json  decoded predictions on the evaluated split
//   report.json       EvalReport
//   run.json          run record (config, seed, report, wall clock, version)
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <thread>

#include "lirgad/checkpoint.hpp"
#include "lirgad/io.hpp"
#include "lirgad/metrics.hpp"
#include "lirgad/model.hpp"
#include "lirgad/optim.hpp"

namespace lirgad {

inline constexpr const char* kVersion = "0.1.0";

/// Verbosity from LIRGAD_LOG: 0 quiet, 1 progress (default), 2 per step.
inline int log_level() {
  const char* v = std::getenv("LIRGAD_LOG");
  if (!v || !*v) return 1;
  return std::atoi(v);
}

inline void log_line(int level, const std::string& msg) {
  if (log_level() >= level) std::cerr << msg << '\n';
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled by exactly one worker and results are written by index, so the
/// outcome does not depend on the thread count.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Datasets

inline std::string split_path(const std::string& dataset_dir, const std::string& split) {
  return (std::filesystem::path(dataset_dir) / (split + ".json")).string();
}

/// Clip seeds are disjoint between splits: train i ↦ base+i, eval i ↦ base+n_train+i.
inline std::uint64_t clip_seed(std::uint64_t seed, std::size_t index) { return (seed << 20) + index; }

struct GeneratedDataset {
  std::vector<SceneClip> train;
  std::vector<SceneClip> eval;
};

inline GeneratedDataset generate_dataset(const ExperimentConfig& cfg) {
  const auto params = cfg.generator();
  const std::uint64_t seed = cfg.get<std::uint64_t>("seed");
  const std::size_t n_train = cfg.size("gen.train_clips");
  const std::size_t n_eval = cfg.size("gen.eval_clips");
  std::vector<SceneClip> all(n_train + n_eval);
  parallel_for(all.size(), cfg.size("threads"), [&](std::size_t i) {
    all[i] = generate_scene(clip_seed(seed, i), params, Taxonomy{});
  });
  GeneratedDataset d;
  d.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  d.eval.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return d;
}

/// Clip count, group-size histogram and outlier rate.
inline Json dataset_summary(const std::vector<SceneClip>& clips) {
  std::map<std::size_t, std::size_t> hist;
  std::size_t groups = 0, actors = 0, outliers = 0;
  for (const auto& c : clips) {
    for (const auto& g : c.groups) ++hist[g.member_ids.size()];
    groups += c.groups.size();
    actors += c.actors.size();
    outliers += c.outlier_actor_ids.size();
  }
  Json h = Json::object();
  for (const auto& [size, count] : hist) h[std::to_string(size)] = count;
  return {{"clips", clips.size()},
          {"groups", groups},
          {"actors", actors},
          {"group_size_histogram", h},
          {"outlier_rate", actors ? static_cast<double>(outliers) / static_cast<double>(actors) : 0.0}};
}

inline std::vector<SceneClip> load_split(const ExperimentConfig& cfg, const std::string& split) {
  const auto path = split_path(cfg.get<std::string>("dataset"), split);
  if (!std::filesystem::exists(path)) {
    throw IoError("dataset split '" + path + "' not found (run `lirgad gen` first)");
  }
  return read_dataset(path, static_cast<int>(cfg.size("K"))).clips;
}

// ---------------------------------------------------------------------------
// Training

struct StepLog {
  std::int64_t step = 0;
  double lr = 0.0;
  double ind = 0, group = 0, mem = 0, con = 0, act = 0, nll = 0, total = 0;
};

inline std::string csv_header() { return "step,lr,L_ind,L_group,L_mem,L_con,L_act,L_nll,total\n"; }

inline std::string csv_row(const StepLog& r) {
  std::string s = std::to_string(r.step);
  for (double v : {r.lr, r.ind, r.group, r.mem, r.con, r.act, r.nll, r.total}) s += "," + fmt_real(v);
  return s + "\n";
}

inline std::vector<ClipInputs> prepare_inputs(const LirGadModel& model, const std::vector<SceneClip>& clips,
                                              const ExperimentConfig& cfg) {
  const auto seed = cfg.get<std::uint64_t>("features.seed");
  const double noise = cfg.get<double>("features.noise");
  const FeatureProvider provider(seed, model.config().d_vis, model.config().taxonomy);
  std::vector<ClipInputs> out(clips.size());
  parallel_for(clips.size(), cfg.size("threads"), [&](std::size_t i) {
    out[i] = model.prepare(clips[i], provider.featurize(clips[i], noise));
  });
  return out;
}

inline std::size_t steps_per_epoch(std::size_t clips, std::size_t batch) {
  if (batch == 0) throw ConfigError("batch_size must be >= 1");
  if (clips == 0) throw ConfigError("training split is empty");
  return (clips + batch - 1) / batch;
}

/// Epoch order depends only on (seed, epoch), so resuming mid-run replays it.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Gradient accumulation over each batch (clips run one at a time, each
/// contributing total/|batch|), then one Adam step. Returns the step log.
/// Stops after global step `max_steps` when it is positive.
inline std::vector<StepLog> train_model(LirGadModel& model, AdamState& adam, const ExperimentConfig& cfg,
                                        const std::vector<SceneClip>& clips,
                                        const std::vector<ClipInputs>& inputs, std::int64_t start_step = 0,
                                        const std::function<void(const StepLog&)>& on_step = {}) {
  const std::size_t batch = cfg.size("batch_size");
  const std::size_t spe = steps_per_epoch(clips.size(), batch);
  const LrSchedule schedule = cfg.schedule(spe);
  const LossOptions opt = cfg.losses();
  const std::uint64_t seed = cfg.get<std::uint64_t>("seed");
  const std::int64_t max_steps = cfg.get<std::int64_t>("max_steps");
  const std::int64_t total_steps = schedule.total_steps();
  const std::int64_t end = max_steps > 0 ? std::min(max_steps, total_steps) : total_steps;
  auto trainable = model.params().trainable();

  std::vector<StepLog> log;
  for (std::int64_t step = start_step; step < end; ++step) {
    const std::int64_t epoch = step / static_cast<std::int64_t>(spe);
    const std::size_t within = static_cast<std::size_t>(step % static_cast<std::int64_t>(spe));
    const auto order = epoch_order(clips.size(), seed, epoch);
    const std::size_t lo = within * batch;
    const std::size_t hi = std::min(lo + batch, clips.size());
    const double inv = 1.0 / static_cast<double>(hi - lo);

    StepLog row;
    row.step = step;
    row.lr = lr_at(schedule, step);
    model.params().zero_grad();
    for (std::size_t b = lo; b < hi; ++b) {
      const std::size_t i = order[b];
      Tape tape;
      TapeScope scope(tape);
      const auto fw = model.forward(inputs[i]);
      const auto loss = clip_loss(model, fw, inputs[i], clips[i], opt);
      const double nll = loss.parts.nll.defined() ? loss.parts.nll.item() : 0.0;
      if (!std::isfinite(loss.total.item())) {
        char buf[512];
        std::snprintf(buf, sizeof buf,
                      "non-finite loss at step %lld (clip %s): L_ind=%g L_group=%g L_mem=%g L_con=%g "
                      "L_act=%g L_nll=%g total=%g",
                      static_cast<long long>(step), clips[i].clip_id.c_str(), loss.parts.ind.item(),
                      loss.parts.group.item(), loss.parts.mem.item(), loss.parts.con.item(),
                      loss.parts.act.item(), nll, loss.total.item());
        throw NumericError(buf);
      }
      row.ind += inv * loss.parts.ind.item();
      row.group += inv * loss.parts.group.item();
      row.mem += inv * loss.parts.mem.item();
      row.con += inv * loss.parts.con.item();
      row.act += inv * loss.parts.act.item();
      row.nll += inv * nll;
      row.total += inv * loss.total.item();
      backward(scale(loss.total, inv), tape);
    }
    for (const auto& p : trainable) {
      if (p.has_grad() && !std::all_of(p.grad().begin(), p.grad().end(), [](double g) { return std::isfinite(g); })) {
        throw NumericError("non-finite gradient at step " + std::to_string(step));
      }
    }
    adam_step(trainable, adam, row.lr);
    log.push_back(row);
    if (on_step) on_step(row);
    if (log_level() >= 2 || (log_level() >= 1 && (step + 1) % 100 == 0)) {
      log_line(1, "step " + std::to_string(step) + " lr " + fmt_real(row.lr) + " total " + fmt_real(row.total));
    }
  }
  return log;
}

/// Teacher-forced decoder fit on prompts alone: minimizes
/// nll_act + nll_group with Adam at a constant rate over cycling batches.
struct ReasoningSample {
  PromptSequence prompt;
  FeatureBundle features;
};

inline double reasoning_nll(const ReasoningDecoder& dec, const ReasoningSample& s) {
  const auto out = dec.forward(s.prompt, s.features);
  return nll_act(out.logits, s.prompt, dec.vocab()).item() + nll_group(out.logits, s.prompt, dec.vocab()).item();
}

inline double corpus_nll(const ReasoningDecoder& dec, const std::vector<ReasoningSample>& corpus) {
  NoGradScope no_grad;
  double sum = 0.0;
  for (const auto& s : corpus) sum += reasoning_nll(dec, s);
  return sum / static_cast<double>(corpus.size());
}

/// Returns the mean corpus NLL before training and after every
/// `eval_every` steps (and after the last step).
inline std::vector<double> fit_reasoning(ReasoningDecoder& dec, const std::vector<ReasoningSample>& corpus,
                                         std::size_t steps, std::size_t batch, double lr,
                                         std::size_t eval_every = 0) {
  if (corpus.empty() || batch == 0) throw ConfigError("fit_reasoning: empty corpus or batch");
  ParamList params;
  dec.collect(params, "decoder");
  auto trainable = params.trainable();
  AdamState adam;
  std::vector<double> curve{corpus_nll(dec, corpus)};
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < steps; ++step) {
    params.zero_grad();
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& s = corpus[cursor++ % corpus.size()];
      Tape tape;
      TapeScope scope(tape);
      const auto out = dec.forward(s.prompt, s.features);
      const Tensor nll = add(nll_act(out.logits, s.prompt, dec.vocab()), nll_group(out.logits, s.prompt, dec.vocab()));
      backward(scale(nll, 1.0 / static_cast<double>(batch)), tape);
    }
    adam_step(trainable, adam, lr);
    if (step + 1 == steps || (eval_every && (step + 1) % eval_every == 0)) curve.push_back(corpus_nll(dec, corpus));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

inline std::vector<ActorId> actor_ids(const SceneClip& clip) {
  std::vector<ActorId> ids;
  for (const auto& a : clip.actors) ids.push_back(a.actor_id);
  return ids;
}

inline PredictionMap predict(const LirGadModel& model, const std::vector<SceneClip>& clips,
                             const std::vector<ClipInputs>& inputs, std::size_t threads = 1) {
  std::vector<ClipPrediction> out(clips.size());
  parallel_for(clips.size(), threads, [&](std::size_t i) {
    NoGradScope no_grad;
    const auto fw = model.forward(inputs[i]);
    out[i] = decode_predictions(fw.pred, actor_ids(clips[i]));
  });
  PredictionMap map;
  for (std::size_t i = 0; i < clips.size(); ++i) map[clips[i].clip_id] = std::move(out[i]);
  return map;
}

inline EvalReport evaluate_clips(const PredictionMap& preds, const std::vector<SceneClip>& clips) {
  return evaluate(preds, truth_from_clips(clips), Taxonomy{}.num_group_classes());
}

/// In-memory train-then-evaluate, used by the ablation driver and tests.
struct ExperimentResult {
  std::vector<StepLog> log;
  EvalReport train_report;
  EvalReport eval_report;
  PredictionMap eval_predictions;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::vector<SceneClip>& train,
                                       const std::vector<SceneClip>& eval, bool score_train = false) {
  LirGadModel model(cfg.model(), cfg.get<std::uint64_t>("seed"));
  AdamState adam;
  const auto train_in = prepare_inputs(model, train, cfg);
  ExperimentResult r;
  r.log = train_model(model, adam, cfg, train, train_in);
  const std::size_t threads = cfg.size("threads");
  if (score_train) r.train_report = evaluate_clips(predict(model, train, train_in, threads), train);
  if (!eval.empty()) {
    const auto eval_in = prepare_inputs(model, eval, cfg);
    r.eval_predictions = predict(model, eval, eval_in, threads);
    r.eval_report = evaluate_clips(r.eval_predictions, eval);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Commands

inline std::string out_file(const ExperimentConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.get<std::string>("out")) / name).string();
}

/// Writes train.json, eval.json and summary.json under `dataset`.
inline Json cmd_gen(const ExperimentConfig& cfg) {
  const auto d = generate_dataset(cfg);
  const auto dir = cfg.get<std::string>("dataset");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  write_dataset(Dataset{Taxonomy{}, d.train}, split_path(dir, "train"));
  write_dataset(Dataset{Taxonomy{}, d.eval}, split_path(dir, "eval"));
  std::vector<SceneClip> all = d.train;
  all.insert(all.end(), d.eval.begin(), d.eval.end());
  Json summary = {{"seed", cfg.get<std::uint64_t>("seed")},
                  {"train", dataset_summary(d.train)},
                  {"eval", dataset_summary(d.eval)},
                  {"total", dataset_summary(all)}};
  write_text((std::filesystem::path(dir) / "summary.json").string(), summary.dump(2) + "\n");
  return summary;
}

inline Json run_record(const ExperimentConfig& cfg, const EvalReport& report, double seconds, std::int64_t steps) {
  return {{"version", kVersion},
          {"seed", cfg.get<std::uint64_t>("seed")},
          {"config", cfg.json()},
          {"steps", steps},
          {"report", report_to_json(report, Taxonomy{})},
          {"wall_clock_seconds", seconds}};
}

inline void write_eval_outputs(const ExperimentConfig& cfg, const PredictionMap& preds, const EvalReport& report) {
  write_text(out_file(cfg, "predictions.json"), predictions_to_json(preds, Taxonomy{}).dump(2) + "\n");
  write_text(out_file(cfg, "report.json"), report_to_json(report, Taxonomy{}).dump(2) + "\n");
  write_text(out_file(cfg, "report.csv"), report_csv(report));
}

/// Trains on the train split (optionally resuming), checkpoints, then
/// evaluates on the eval split.
inline EvalReport cmd_train(const ExperimentConfig& cfg, const std::optional<std::string>& resume = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = load_split(cfg, "train");
  LirGadModel model(cfg.model(), cfg.get<std::uint64_t>("seed"));
  AdamState adam;
  std::int64_t start = 0;
  std::string csv = csv_header();
  if (resume) {
    const auto ck = parse_checkpoint(read_text(*resume));
    restore_checkpoint(ck, cfg, model, &adam);
    start = ck.global_step;
    // Keep the rows that led up to the checkpoint.
    const auto prev = std::filesystem::path(*resume).parent_path() / "losses.csv";
    if (std::filesystem::exists(prev)) {
      std::stringstream ss(read_text(prev.string()));
      std::string line;
      std::getline(ss, line);
      while (std::getline(ss, line))
        if (!line.empty() && std::stoll(line.substr(0, line.find(','))) < start) csv += line + "\n";
    }
  }
  write_text(out_file(cfg, "config.json"), cfg.dump());
  log_line(1, "preparing " + std::to_string(train.size()) + " training clips");
  const auto inputs = prepare_inputs(model, train, cfg);
  const auto log = train_model(model, adam, cfg, train, inputs, start);
  for (const auto& r : log) csv += csv_row(r);
  write_text(out_file(cfg, "losses.csv"), csv);
  const std::int64_t final_step = log.empty() ? start : log.back().step + 1;
  save_checkpoint(out_file(cfg, "checkpoint.json"), cfg, model, adam, final_step);

  const auto eval_path = split_path(cfg.get<std::string>("dataset"), "eval");
  const auto eval = std::filesystem::exists(eval_path) ? load_split(cfg, "eval") : train;
  const auto eval_in = prepare_inputs(model, eval, cfg);
  const auto preds = predict(model, eval, eval_in, cfg.size("threads"));
  const auto report = evaluate_clips(preds, eval);
  write_eval_outputs(cfg, preds, report);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(out_file(cfg, "run.json"), run_record(cfg, report, secs, final_step).dump(2) + "\n");
  return report;
}

/// Scores a checkpoint, or an existing predictions document, on a split.
inline EvalReport cmd_eval(const ExperimentConfig& cfg, const std::optional<std::string>& checkpoint,
                           const std::string& split, const std::optional<std::string>& predictions_path = {}) {
  const auto clips = load_split(cfg, split);
  PredictionMap preds;
  if (predictions_path) {
    preds = predictions_from_json(parse_json_document(read_text(*predictions_path), "predictions"), Taxonomy{});
  } else {
    const std::string path = checkpoint ? *checkpoint : out_file(cfg, "checkpoint.json");
    const auto ck = parse_checkpoint(read_text(path));
    LirGadModel model(cfg.model(), cfg.get<std::uint64_t>("seed"));
    restore_checkpoint(ck, cfg, model, nullptr);
    const auto inputs = prepare_inputs(model, clips, cfg);
    preds = predict(model, clips, inputs, cfg.size("threads"));
  }
  const auto report = evaluate_clips(preds, clips);
  write_eval_outputs(cfg, preds, report);
  return report;
}

struct AblationRow {
  const char* table;
  const char* name;
  const char* variant;
  bool group_tokens;
  bool act_token;
  bool l_act;
};

inline const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {"components", "Base", "bypass", false, false, false},
      {"components", "+GROUP", "sp2", true, false, false},
      {"components", "+ACT", "sp2", false, true, false},
      {"components", "+ACT+L_act", "sp2", false, true, true},
      {"components", "+GROUP+ACT", "sp2", true, true, false},
      {"components", "+GROUP+ACT+L_act", "sp2", true, true, true},
      {"fusion", "CON1", "con1", true, true, true},
      {"fusion", "CON2", "con2", true, true, true},
      {"fusion", "SP1", "sp1", true, true, true},
      {"fusion", "SP2", "sp2", true, true, true},
  };
  return rows;
}

inline ExperimentConfig ablation_config(ExperimentConfig cfg, const AblationRow& row, std::uint64_t seed) {
  cfg.set("seed", seed);
  cfg.set("mdaf.variant", row.variant);
  cfg.set("use_group_tokens", row.group_tokens);
  cfg.set("use_act_token", row.act_token);
  cfg.set("use_l_act", row.l_act);
  return cfg;
}

inline std::string ablation_header() {
  return "table,row,seed,variant,use_group_tokens,use_act_token,use_l_act,group_map_1.0,group_map_0.5,outlier_miou\n";
}

/// One CSV row per (row, seed); also written to <out>/ablation.csv.
inline std::string cmd_ablate(const ExperimentConfig& cfg) {
  const auto train = load_split(cfg, "train");
  const auto eval = load_split(cfg, "eval");
  std::string csv = ablation_header();
  for (const auto& row : ablation_rows()) {
    for (std::uint64_t seed : cfg.seed_list("ablate.seeds")) {
      log_line(1, std::string("ablation ") + row.table + " " + row.name + " seed " + std::to_string(seed));
      const auto rc = ablation_config(cfg, row, seed);
      const auto res = run_experiment(rc, train, eval);
      csv += std::string(row.table) + "," + row.name + "," + std::to_string(seed) + "," + row.variant + "," +
             (row.group_tokens ? "1" : "0") + "," + (row.act_token ? "1" : "0") + "," + (row.l_act ? "1" : "0") +
             "," + fmt_real(res.eval_report.map_at(1.0)) + "," + fmt_real(res.eval_report.map_at(0.5)) + "," +
             fmt_real(res.eval_report.outlier_miou) + "\n";
    }
  }
  write_text(out_file(cfg, "ablation.csv"), csv);
  return csv;
}

}  // namespace lirgad
