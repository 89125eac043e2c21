// Acceptance checks, one per criterion. Each prints a single PASS/FAIL line
// followed by indented detail; the exit status is non-zero on any failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "../support/oracles.hpp"
#include "vqloc/config.hpp"
#include "vqloc/gradcheck.hpp"
#include "vqloc/inference.hpp"
#include "vqloc/metrics.hpp"
#include "vqloc/trainer.hpp"

using namespace vqloc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string summary;
  std::vector<std::string> detail;
};

// ---------------------------------------------------------------------------
// Shared training and evaluation helpers

struct RunSpec {
  ModelConfig model = toy_model_config();
  LossConfig loss;
  TrainConfig train;
  std::uint64_t init_seed = 1;
};

Model<float> train_model(const RunSpec& spec, const std::vector<DatasetItem>& data) {
  auto m = Model<float>::create(spec.model, spec.init_seed);
  train(m, data, spec.train, spec.loss, {});
  return m;
}

MetricsReport evaluate_items(const Model<float>& m, const std::vector<DatasetItem>& items) {
  std::vector<EvalPair> pairs;
  for (const auto& it : items) {
    const auto r = run_video(m, it.video, it.query, InferenceConfig{});
    pairs.push_back({it.annotation.query_id, r.track, it.annotation.response_track});
  }
  return evaluate(pairs);
}

/// The training video followed by a held-out clip of the same scene with the
/// query object removed: same distractors, fresh noise, motion reversed. The
/// gt track is unchanged, so any confident detection in the appended clip
/// becomes the most recent occurrence and costs temporal precision.
DatasetItem with_distractor_clip(const SyntheticSample& s) {
  SyntheticScene scene = s.scene;
  scene.objects[static_cast<std::size_t>(scene.query_object_id)].scheduled.clear();
  scene.noise_seed = ~scene.noise_seed;
  DatasetItem item{s.video, s.query, s.annotation};
  for (int t = scene.frame_count - 1; t >= 0; --t) item.video.frames.push_back(render_frame(scene, t));
  item.annotation.frame_count = item.video.frame_count();
  return item;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome criterion_1() {
  const auto t0 = Clock::now();
  const auto entries = run_gradcheck({11, 22, 33, 44, 55});
  const double secs = seconds_since(t0);
  Outcome o;
  std::map<std::string, double> worst;
  std::set<std::uint64_t> seeds;
  int failed = 0;
  for (const auto& e : entries) {
    worst[e.suite] = std::max(worst[e.suite], e.rel_error);
    seeds.insert(e.seed);
    if (!e.pass) {
      ++failed;
      o.detail.push_back("fail " + e.suite + " seed " + std::to_string(e.seed) + " " + e.tensor + " rel " +
                         fmt("%.3e", e.rel_error));
    }
  }
  for (const auto& [suite, err] : worst) o.detail.push_back(suite + " worst rel error " + fmt("%.3e", err));
  o.pass = failed == 0 && seeds.size() >= 5 && secs < 300;
  o.summary = std::to_string(entries.size()) + " tensor checks over " + std::to_string(seeds.size()) + " seeds, " +
              std::to_string(failed) + " failed, " + fmt("%.1f s", secs);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Window locality

Outcome criterion_2() {
  const auto t0 = Clock::now();
  Outcome o;
  o.pass = true;
  int checked = 0;
  const std::vector<std::pair<int, int>> variants{{1, 1}, {2, 1}, {1, 2}, {3, 1}};
  for (const auto& [L, w] : variants) {
    ModelConfig c = toy_model_config();
    c.zero_init_head_outputs = false;
    c.temporal_layers = L;
    c.window_half_width = w;
    const auto m = Model<float>::create(c, 100 + L * 10 + w);
    const auto sample = generate_dataset(7, 1, SyntheticConfig{})[0];
    std::vector<FeatureMap<float>> clip;
    for (int t = 0; t < c.clip_len; ++t) clip.push_back(to_model_input<float>(sample.video.frames[t]));
    const auto q = to_model_input<float>(sample.query);
    const auto base = forward(m, clip, q);
    int leaks = 0, dead = 0;
    for (int t = 0; t < c.clip_len; ++t) {
      auto moved = clip;
      moved[t] = to_model_input<float>(sample.video.frames[c.clip_len + t]);
      const auto out = forward(m, moved, q);
      for (int s = 0; s < c.clip_len; ++s) {
        const float diff = (out[s].probs - base[s].probs).cwiseAbs().maxCoeff() +
                           (out[s].deltas - base[s].deltas).cwiseAbs().maxCoeff();
        if (std::abs(s - t) > L * w) leaks += diff != 0.0f;
        else dead += diff == 0.0f;
        ++checked;
      }
    }
    o.detail.push_back("L=" + std::to_string(L) + " w=" + std::to_string(w) + ": " + std::to_string(leaks) +
                       " nonzero outside reach, " + std::to_string(dead) + " unchanged inside reach");
    o.pass = o.pass && leaks == 0 && dead == 0;
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < 60;
  o.summary = std::to_string(checked) + " (perturbed, observed) frame pairs, " + fmt("%.1f s", secs);
  return o;
}

// ---------------------------------------------------------------------------
// 3. Oracle equivalence

Outcome criterion_3() {
  const auto t0 = Clock::now();
  Outcome o;
  std::mt19937_64 rng(2024);

  // Box overlap against rasterization.
  double worst_iou = 0, worst_giou = 0;
  std::uniform_int_distribution<int> coord(0, 63);
  for (int k = 0; k < 5000; ++k) {
    Corners a, b;
    for (Corners* c : {&a, &b}) {
      int x1 = coord(rng), x2 = coord(rng), y1 = coord(rng), y2 = coord(rng);
      if (x1 > x2) std::swap(x1, x2);
      if (y1 > y2) std::swap(y1, y2);
      *c = {double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
    }
    const auto r = oracle::raster_overlap(a, b);
    worst_iou = std::max(worst_iou, std::abs(iou(from_corners(a), from_corners(b)) - r.iou));
    worst_giou = std::max(worst_giou, std::abs(giou(from_corners(a), from_corners(b)) - r.giou));
  }
  const bool boxes_ok = worst_iou <= 1e-9 && worst_giou <= 1e-9;
  o.detail.push_back("IoU/GIoU vs raster on 5000 integer pairs: max error " + fmt("%.2e", worst_iou) + " / " +
                     fmt("%.2e", worst_giou));

  // Hard negative mining against a full sort.
  int hnm_bad = 0;
  std::uniform_int_distribution<int> level(0, 25);
  for (int k = 0; k < 1000; ++k) {
    std::vector<NegativeCandidate> pool;
    for (int i = 0; i < 300; ++i) pool.push_back({{i % 4, (i / 4) % 4, (i / 16) % 8, i}, level(rng) / 25.0});
    const std::size_t K = 1 + static_cast<std::size_t>(k) % 120;
    hnm_bad += mine_hard_negatives(pool, K) != oracle::hnm_full_sort(pool, K);
  }
  o.detail.push_back("HNM top-K vs full sort: " + std::to_string(hnm_bad) + " mismatches in 1000");

  // Post-processing against brute force.
  int med_bad = 0, peak_bad = 0, track_bad = 0;
  std::uniform_int_distribution<int> len(1, 80), lvl(0, 12);
  const InferenceConfig icfg;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> p(static_cast<std::size_t>(len(rng)));
    for (double& x : p) x = lvl(rng) / 12.0;
    const auto sm = smooth_scores(p, icfg.median_window);
    med_bad += sm != oracle::median(p, icfg.median_window);
    peak_bad += detect_peaks(sm).peaks != oracle::peaks(sm);
    std::vector<FramePrediction> stream;
    for (std::size_t i = 0; i < p.size(); ++i) stream.push_back({int(i), BoundingBox{double(i) + 3, 5, 2, 2}, p[i]});
    const auto got = postprocess(stream, icfg);
    const auto want = oracle::track_range(p, icfg);
    track_bad += got.has_value() != want.has_value() ||
                 (got && (got->start != want->first || got->end != want->second));
  }
  o.detail.push_back("median / peaks / track vs brute force on 1000 sequences: " + std::to_string(med_bad) + " / " +
                     std::to_string(peak_bad) + " / " + std::to_string(track_bad) + " mismatches");

  // AP against a threshold sweep.
  int ap_bad = 0;
  std::uniform_int_distribution<int> nq(1, 10), st(0, 40), tl(0, 12), miss(0, 4);
  std::uniform_real_distribution<double> cc(5, 50), ss(2, 25), score(0, 1);
  for (int k = 0; k < 2000; ++k) {
    std::vector<EvalPair> pairs;
    const int n = nq(rng);
    for (int q = 0; q < n; ++q) {
      EvalPair e;
      e.query_id = "q" + std::to_string(q);
      const int gs = st(rng), ge = gs + tl(rng);
      e.ground_truth = {gs, ge, std::vector<BoundingBox>(ge - gs + 1, BoundingBox{cc(rng), cc(rng), ss(rng), ss(rng)}), 1};
      if (miss(rng)) {
        const int ps = st(rng), pe = ps + tl(rng);
        e.prediction = ResponseTrack{ps, pe, std::vector<BoundingBox>(pe - ps + 1, BoundingBox{cc(rng), cc(rng), ss(rng), ss(rng)}),
                                     score(rng)};
      }
      pairs.push_back(e);
    }
    ap_bad += average_precision(pairs, track_temporal_iou) != oracle::sweep_ap(pairs, track_temporal_iou);
    ap_bad += average_precision(pairs, spatiotemporal_iou) != oracle::sweep_ap(pairs, spatiotemporal_iou);
  }
  o.detail.push_back("tAP and stAP vs threshold sweep on 2000 instances (<= 10 queries): " + std::to_string(ap_bad) +
                     " mismatches");

  const double secs = seconds_since(t0);
  o.pass = boxes_ok && hnm_bad == 0 && med_bad == 0 && peak_bad == 0 && track_bad == 0 && ap_bad == 0 && secs < 120;
  o.summary = fmt("all oracle comparisons in %.1f s", secs);
  return o;
}

// ---------------------------------------------------------------------------
// 4. Overfit end to end

Outcome criterion_4() {
  const auto t0 = Clock::now();
  const auto data = to_items(generate_dataset(1, 4, SyntheticConfig{}));
  RunSpec spec;
  spec.train.log_every = 100;
  auto m = Model<float>::create(spec.model, spec.init_seed);
  Outcome o;
  const auto log = train(m, data, spec.train, spec.loss, {});
  for (const auto& r : log)
    if (r.iter % 500 == 0 || r.iter + 1 == spec.train.iterations)
      o.detail.push_back("iter " + std::to_string(r.iter) + " loss " + fmt("%.4f", r.loss.total));
  const auto rep = evaluate_items(m, data);
  for (const auto& q : rep.per_query)
    o.detail.push_back(q.query_id + " tIoU " + fmt("%.3f", q.temporal_iou) + " stIoU " +
                       fmt("%.3f", q.spatiotemporal_iou) + " recovery " + fmt("%.1f", q.recovery_pct));
  const double secs = seconds_since(t0);
  o.pass = rep.stap25 >= 0.9 && rep.recovery_pct >= 90.0 && secs < 1800;
  o.summary = "stAP25 " + fmt("%.3f", rep.stap25) + " (>= 0.9), recovery " + fmt("%.1f%%", rep.recovery_pct) +
              " (>= 90), tAP25 " + fmt("%.3f", rep.tap25) + ", success " + fmt("%.1f%%", rep.success_pct) + ", " +
              fmt("%.0f s", secs);
  return o;
}

// ---------------------------------------------------------------------------
// 5 and 6. Paired variant comparisons over three seeds

struct Variant {
  std::string name;
  std::function<void(RunSpec&)> apply;
};

Outcome compare_variants(const Variant& better, const Variant& worse, const RunSpec& base,
                         const SyntheticConfig& data_cfg, int n_videos, double budget_secs) {
  const auto t0 = Clock::now();
  Outcome o;
  o.pass = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto samples = generate_dataset(100 + seed, n_videos, data_cfg);
    const auto train_items = to_items(samples);
    std::vector<DatasetItem> eval_items;
    for (const auto& s : samples) eval_items.push_back(with_distractor_clip(s));
    double tap[2];
    for (int v = 0; v < 2; ++v) {
      RunSpec spec = base;
      spec.init_seed = seed;
      spec.train.seed = seed;
      (v == 0 ? better : worse).apply(spec);
      const auto m = train_model(spec, train_items);
      const auto rep = evaluate_items(m, eval_items);
      tap[v] = rep.tap25;
      o.detail.push_back("seed " + std::to_string(seed) + " " + (v == 0 ? better : worse).name + ": tAP25 " +
                         fmt("%.3f", rep.tap25) + ", stAP25 " + fmt("%.3f", rep.stap25) + ", recovery " +
                         fmt("%.1f", rep.recovery_pct));
    }
    o.pass = o.pass && tap[0] > tap[1];
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < budget_secs;
  o.summary = better.name + " tAP25 strictly above " + worse.name + " on every seed: " + (o.pass ? "yes" : "no") +
              ", " + fmt("%.0f s", secs);
  return o;
}

Outcome criterion_5() {
  RunSpec base;
  base.model.clip_len = 16;
  base.train.iterations = 1000;
  base.train.batch_size = 2;
  base.train.warmup_iters = 50;
  SyntheticConfig data;
  data.frame_count = 48;
  data.similar_distractor_prob = 1.0;
  return compare_variants({"window-5", [](RunSpec& s) { s.model.window_half_width = 2; }},
                          {"global", [](RunSpec& s) { s.model.window_half_width = -1; }}, base, data, 4, 3600);
}

Outcome criterion_6() {
  RunSpec base;
  base.train.iterations = 1000;
  base.train.warmup_iters = 50;
  SyntheticConfig data;
  data.distractors = 6;
  data.similar_distractor_prob = 1.0;
  return compare_variants({"bce+hnm", [](RunSpec& s) { s.loss.mode = ProbLossMode::kBceHnm; }},
                          {"bce", [](RunSpec& s) { s.loss.mode = ProbLossMode::kBce; }}, base, data, 4, 3600);
}

// ---------------------------------------------------------------------------
// 7. Determinism

Outcome criterion_7() {
  const auto t0 = Clock::now();
  const auto data = to_items(generate_dataset(5, 2, SyntheticConfig{}));
  TrainConfig tc;
  tc.iterations = 40;
  tc.batch_size = 2;
  tc.warmup_iters = 5;
  tc.seed = 9;
  auto run = [&] {
    auto m = Model<float>::create(toy_model_config(), 4);
    std::ostringstream log;
    train(m, data, tc, LossConfig{}, {[&](const TrainLogRecord& r) { log << r.to_json().dump() << "\n"; }, {}});
    std::ostringstream preds;
    for (const auto& it : data) {
      const auto r = run_video(m, it.video, it.query, InferenceConfig{});
      for (const auto& f : r.stream)
        preds << f.frame_idx << ' ' << fmt("%a", f.prob) << ' ' << fmt("%a", f.box.cx) << ' ' << fmt("%a", f.box.cy)
              << ' ' << fmt("%a", f.box.w) << ' ' << fmt("%a", f.box.h) << '\n';
      if (r.track) preds << "track " << r.track->start << ' ' << r.track->end << '\n';
    }
    return std::pair{log.str(), preds.str()};
  };
  const auto a = run();
  const auto b = run();
  Outcome o;
  o.pass = a.first == b.first && a.second == b.second && !a.first.empty();
  o.detail.push_back("training log bytes " + std::to_string(a.first.size()) + ", identical: " +
                     (a.first == b.first ? "yes" : "no"));
  o.detail.push_back("prediction dump bytes " + std::to_string(a.second.size()) + ", identical: " +
                     (a.second == b.second ? "yes" : "no"));
  o.summary = "two runs from one (seed, config), " + fmt("%.0f s", seconds_since(t0));
  return o;
}

// ---------------------------------------------------------------------------
// 8. Relative thresholds make the track invariant to probability scaling

Outcome criterion_8() {
  const auto t0 = Clock::now();
  Outcome o;
  int compared = 0, changed = 0, found = 0;
  const InferenceConfig cfg;
  auto check = [&](const std::vector<FramePrediction>& stream) {
    auto halved = stream;
    for (auto& f : halved) f.prob *= 0.5;
    const auto a = postprocess(stream, cfg);
    const auto b = postprocess(halved, cfg);
    ++compared;
    found += a.has_value();
    changed += a.has_value() != b.has_value() || (a && (a->range() != b->range() || a->boxes != b->boxes));
  };
  // Streams from a randomly initialized model on synthetic videos.
  ModelConfig c = toy_model_config();
  c.zero_init_head_outputs = false;
  const auto m = Model<float>::create(c, 8);
  for (const auto& s : generate_dataset(8, 6, SyntheticConfig{})) check(run_video(m, s.video, s.query, cfg).stream);
  // Random streams.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 2000; ++k) {
    std::vector<FramePrediction> stream;
    for (int t = 0; t < 50; ++t) stream.push_back({t, BoundingBox{u(rng) * 60 + 2, u(rng) * 60 + 2, 4, 4}, u(rng)});
    check(stream);
  }
  o.pass = changed == 0 && found > 0;
  o.summary = std::to_string(compared) + " streams (" + std::to_string(found) + " with a track), " +
              std::to_string(changed) + " changed under x0.5, " + fmt("%.1f s", seconds_since(t0));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "Run a single criterion (1-8); default runs all")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::function<Outcome()>> criteria{criterion_1, criterion_2, criterion_3, criterion_4,
                                                       criterion_5, criterion_6, criterion_7, criterion_8};
  bool all = true;
  for (int n = 1; n <= 8; ++n) {
    if (only != 0 && n != only) continue;
    Outcome o;
    try {
      o = criteria[n - 1]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.summary = std::string("error: ") + e.what();
    }
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.summary << "\n";
    for (const auto& d : o.detail) std::cout << "    " << d << "\n";
    std::cout.flush();
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
