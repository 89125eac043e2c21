// vqloc: gen | train | infer | eval | gradcheck | bench
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 a checked
// threshold was not met (gradcheck tolerance, eval minimums).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqloc/checkpoint.hpp"
#include "vqloc/config.hpp"
#include "vqloc/data/io.hpp"
#include "vqloc/data/synthetic.hpp"
#include "vqloc/gradcheck.hpp"
#include "vqloc/inference.hpp"
#include "vqloc/metrics.hpp"
#include "vqloc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vqloc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitThreshold = 2;

ExperimentConfig resolve_config(const std::string& preset, const std::string& path) {
  ExperimentConfig base;
  if (preset == "toy") base = toy_experiment();
  else if (preset != "full") throw ConfigError("unknown preset '" + preset + "' (toy|full)");
  if (path.empty()) {
    base.validate();
    return base;
  }
  return load_experiment(path, base);
}

void echo_config(const fs::path& dir, const json& cfg) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << cfg.dump(2) << "\n";
}

/// Runs fn(i) for i in [0, n) on `workers` threads; each index is written by
/// exactly one thread, so results do not depend on scheduling.
template <class Fn>
void parallel_for(int n, int workers, Fn fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 0;
  int n = 4;
  std::string out, config, preset = "toy";
};

int cmd_gen(const GenArgs& a) {
  const ExperimentConfig cfg = resolve_config(a.preset, a.config);
  const auto samples = generate_dataset(a.seed, a.n, cfg.data);
  save_dataset(a.out, samples);
  echo_config(a.out, {{"command", "gen"}, {"seed", a.seed}, {"n", a.n}, {"data", to_json(cfg.data)}});
  std::vector<AnnotationRecord> recs;
  for (const auto& s : samples) recs.push_back(s.annotation);
  const DatasetStats st = dataset_stats(recs);
  std::printf("wrote %d videos to %s (track length mean %.2f, min %d, max %d; small/medium/large %d/%d/%d)\n", a.n,
              a.out.c_str(), st.mean_track_length, st.min_track_length, st.max_track_length, st.small, st.medium,
              st.large);
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, out, preset = "toy";
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
};

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = resolve_config(a.preset, a.config);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.train.seed = *a.seed;
  }
  if (a.iterations) {
    cfg.train.iterations = *a.iterations;
    cfg.train.warmup_iters = std::min(cfg.train.warmup_iters, cfg.train.iterations);
  }
  cfg.validate();
  const auto data = load_dataset(a.data);
  const fs::path out(a.out);
  echo_config(out, to_json(cfg));
  Model<float> model = Model<float>::create(cfg.model, cfg.seed);
  std::ofstream log(out / "train_log.jsonl");
  TrainHooks hooks;
  hooks.on_log = [&](const TrainLogRecord& r) {
    log << r.to_json().dump() << "\n";
    log.flush();
    if (r.iter % 100 == 0 || r.iter + 1 == cfg.train.iterations)
      std::printf("iter %5d  lr %.3g  total %.5f  bbox %.5f  prob %.5f\n", r.iter, r.lr, r.loss.total, r.loss.l_bbox,
                  r.loss.l_prob);
  };
  hooks.on_checkpoint = [&](int iter, const Model<float>& m) {
    save_checkpoint(out / ("checkpoint_" + std::to_string(iter)), m);
  };
  train(model, data, cfg.train, cfg.loss, hooks);
  save_checkpoint(out / "checkpoint", model);
  std::printf("checkpoint written to %s\n", (out / "checkpoint").c_str());
  return kExitOk;
}

struct InferArgs {
  std::string checkpoint, data, out, features;
  InferenceConfig inference;
  int workers = 1;
};

int cmd_infer(const InferArgs& a) {
  a.inference.validate();
  if (a.workers < 1) throw ConfigError("--workers must be >= 1");
  const Model<float> model = load_checkpoint(a.checkpoint);
  const fs::path root(a.data);
  const auto records = read_annotations(root / "annotations.json");
  std::vector<std::optional<ResponseTrack>> tracks(records.size());
  parallel_for(static_cast<int>(records.size()), a.workers, [&](int i) {
    const AnnotationRecord& rec = records[static_cast<std::size_t>(i)];
    EncodedVideo<float> ev;
    if (!a.features.empty()) {
      ev = load_precomputed_features<float>(fs::path(a.features) / (rec.video_id + ".json"), model.config());
    } else {
      Video v;
      v.id = rec.video_id;
      v.frames = read_image_stack(root / "videos" / (rec.video_id + ".json"));
      v.side = v.frames.front().side;
      ev = encode_video(model, v, read_image_stack(root / rec.query_image).front());
    }
    tracks[static_cast<std::size_t>(i)] = run_video(model, ev, a.inference).track;
  });
  std::vector<PredictionRecord> preds;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (tracks[i]) preds.push_back({records[i].query_id, *tracks[i]});
  const fs::path out(a.out);
  write_predictions(out / "predictions.json", preds);
  echo_config(out, {{"command", "infer"},
                    {"checkpoint", a.checkpoint},
                    {"data", a.data},
                    {"features", a.features},
                    {"inference", to_json(a.inference)},
                    {"workers", a.workers}});
  std::printf("%zu of %zu queries localized; predictions in %s\n", preds.size(), records.size(),
              (out / "predictions.json").c_str());
  return kExitOk;
}

struct EvalArgs {
  std::string predictions, annotations, out, csv;
  double min_stap = -1, min_tap = -1, min_recovery = -1, min_success = -1;
};

int cmd_eval(const EvalArgs& a) {
  const auto recs = read_annotations(a.annotations);
  const auto preds = read_predictions(a.predictions);
  std::map<std::string, ResponseTrack> by_id;
  for (const auto& p : preds)
    if (!by_id.emplace(p.query_id, p.track).second) throw SchemaError(p.query_id, "duplicate prediction");
  std::vector<EvalPair> pairs;
  for (const auto& r : recs) {
    auto it = by_id.find(r.query_id);
    pairs.push_back({r.query_id, it == by_id.end() ? std::nullopt : std::optional<ResponseTrack>(it->second), r.response_track});
  }
  for (const auto& [id, _] : by_id) {
    bool known = false;
    for (const auto& r : recs) known = known || r.query_id == id;
    if (!known) throw SchemaError(id, "prediction for a query absent from the annotations");
  }
  const MetricsReport rep = evaluate(pairs);
  json per = json::array();
  for (const auto& q : rep.per_query)
    per.push_back({{"query_id", q.query_id},
                   {"has_prediction", q.has_prediction},
                   {"score", q.score},
                   {"temporal_iou", q.temporal_iou},
                   {"spatiotemporal_iou", q.spatiotemporal_iou},
                   {"recovery_pct", q.recovery_pct},
                   {"success", q.success}});
  const json j = {{"tAP25", rep.tap25},
                  {"stAP25", rep.stap25},
                  {"recovery_pct", rep.recovery_pct},
                  {"success_pct", rep.success_pct},
                  {"queries", pairs.size()},
                  {"per_query", per}};
  if (!a.out.empty()) {
    const fs::path out(a.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << j.dump(2) << "\n";
  }
  if (!a.csv.empty()) {
    std::ofstream csv(a.csv);
    csv << "query_id,has_prediction,score,temporal_iou,spatiotemporal_iou,recovery_pct,success\n";
    for (const auto& q : rep.per_query)
      csv << q.query_id << "," << q.has_prediction << "," << q.score << "," << q.temporal_iou << ","
          << q.spatiotemporal_iou << "," << q.recovery_pct << "," << q.success << "\n";
  }
  std::printf("tAP25 %.4f  stAP25 %.4f  recovery %.2f%%  success %.2f%%  (%zu queries)\n", rep.tap25, rep.stap25,
              rep.recovery_pct, rep.success_pct, pairs.size());
  const bool ok = rep.stap25 >= a.min_stap && rep.tap25 >= a.min_tap && rep.recovery_pct >= a.min_recovery &&
                  rep.success_pct >= a.min_success;
  return ok ? kExitOk : kExitThreshold;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  int seeds = 5;
  std::string out;
  bool verbose = false;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.seeds < 1) throw ConfigError("--seeds must be >= 1");
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < a.seeds; ++k) seeds.push_back(a.seed + static_cast<std::uint64_t>(k));
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradcheck(seeds);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::map<std::string, double> worst;
  bool ok = true;
  json rows = json::array();
  for (const auto& e : entries) {
    worst[e.suite] = std::max(worst[e.suite], e.rel_error);
    ok = ok && e.pass;
    rows.push_back({{"suite", e.suite},
                    {"seed", e.seed},
                    {"tensor", e.tensor},
                    {"rel_error", e.rel_error},
                    {"zero_gradient", e.zero_gradient},
                    {"pass", e.pass}});
    if (a.verbose || !e.pass)
      std::printf("%-18s seed %llu  %-36s rel %.3e%s\n", e.suite.c_str(), static_cast<unsigned long long>(e.seed),
                  e.tensor.c_str(), e.rel_error, e.pass ? "" : "  FAIL");
  }
  for (const auto& [suite, w] : worst) std::printf("%-18s max rel error %.3e\n", suite.c_str(), w);
  std::printf("%zu tensors over %d seeds in %.1fs: %s\n", entries.size(), a.seeds, secs, ok ? "PASS" : "FAIL");
  if (!a.out.empty()) std::ofstream(a.out) << rows.dump(2) << "\n";
  return ok ? kExitOk : kExitThreshold;
}

struct BenchArgs {
  std::string checkpoint, data;
  int repeat = 3;
};

int cmd_bench(const BenchArgs& a) {
  if (a.repeat < 1) throw ConfigError("--repeat must be >= 1");
  const Model<float> model = load_checkpoint(a.checkpoint);
  const auto data = load_dataset(a.data);
  long frames = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < a.repeat; ++r)
    for (const auto& item : data) {
      run_video(model, item.video, item.query, InferenceConfig{});
      frames += item.video.frame_count();
    }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%ld frames in %.3fs: %.1f frames/s (encoder + correspondence + post-processing, 1 thread)\n", frames,
              secs, frames / secs);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual query localization on synthetic video"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_option("--n", gen.n, "Number of videos")->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--config", gen.config, "Experiment config (JSON); its data section is used");
  g->add_option("--preset", gen.preset, "Base config: toy|full");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Experiment config (JSON) applied on top of the preset");
  t->add_option("--preset", tr.preset, "Base config: toy|full");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--seed", tr.seed, "Overrides seed and train.seed");
  t->add_option("--iterations", tr.iterations, "Overrides train.iterations");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Predict response tracks");
  i->add_option("--checkpoint", inf.checkpoint, "Checkpoint directory")->required();
  i->add_option("--data", inf.data, "Dataset directory")->required();
  i->add_option("--out", inf.out, "Output directory")->required();
  i->add_option("--features", inf.features, "Directory of precomputed <video_id>.json feature manifests");
  i->add_option("--phi", inf.inference.phi, "Absolute probability pre-filter (0 disables)");
  i->add_option("--window", inf.inference.median_window, "Median filter kernel");
  i->add_option("--peak-ratio", inf.inference.peak_ratio, "Keep peaks >= ratio * highest peak");
  i->add_option("--extent-ratio", inf.inference.extent_ratio, "Extend track while score >= ratio * peak");
  i->add_option("--workers", inf.workers, "Queries processed in parallel");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predictions against annotations");
  e->add_option("--predictions", ev.predictions, "predictions.json")->required();
  e->add_option("--annotations", ev.annotations, "annotations.json")->required();
  e->add_option("--out", ev.out, "Metrics report (JSON)");
  e->add_option("--csv", ev.csv, "Per-query breakdown (CSV)");
  e->add_option("--min-stap", ev.min_stap, "Exit 2 when stAP25 is lower");
  e->add_option("--min-tap", ev.min_tap, "Exit 2 when tAP25 is lower");
  e->add_option("--min-recovery", ev.min_recovery, "Exit 2 when recovery (%) is lower");
  e->add_option("--min-success", ev.min_success, "Exit 2 when success (%) is lower");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference checks of every backward pass");
  c->add_option("--seed", gc.seed, "First seed");
  c->add_option("--seeds", gc.seeds, "Number of consecutive seeds");
  c->add_option("--out", gc.out, "Per-tensor results (JSON)");
  c->add_flag("--verbose", gc.verbose, "Print every tensor");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Inference throughput");
  b->add_option("--checkpoint", bn.checkpoint, "Checkpoint directory")->required();
  b->add_option("--data", bn.data, "Dataset directory")->required();
  b->add_option("--repeat", bn.repeat, "Passes over the dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*i) return cmd_infer(inf);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_gradcheck(gc);
    if (*b) return cmd_bench(bn);
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitInvalid;
  } catch (const SchemaError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitInvalid;
  } catch (const DomainError& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitInvalid;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kExitInvalid;
  }
  return kExitInvalid;
}
