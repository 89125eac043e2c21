#pragma once

// Training loop. Each iteration draws a batch of videos, samples one clip
// per video that overlaps its response track, augments clip and query, and
// scores every query against its own clip and against `cross_pairs` clips
// of other batch videos (negatives only). Gradients flow through the heads,
// both transformers, the downsampler and the shared encoder.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include <json.hpp>

#include "vqloc/augment.hpp"
#include "vqloc/data/io.hpp"
#include "vqloc/losses.hpp"
#include "vqloc/model.hpp"
#include "vqloc/optim.hpp"

namespace vqloc {

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 4;
  double peak_lr = 1e-3;
  double weight_decay = 0.05;
  int warmup_iters = 100;
  std::uint64_t seed = 0;
  int fps = 5;          // sampling rate; videos at a higher rate are strided
  int cross_pairs = 1;  // other-video clips scored against each query
  int log_every = 1;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  AugmentConfig augment;

  ScheduleConfig schedule() const { return {iterations, warmup_iters, peak_lr}; }

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (fps < 1) throw ConfigError("train: fps must be >= 1");
    if (cross_pairs < 0) throw ConfigError("train: cross_pairs must be >= 0");
    if (log_every < 1 || checkpoint_every < 0) throw ConfigError("train: invalid logging cadence");
    if (weight_decay < 0) throw ConfigError("train: weight decay must be >= 0");
    schedule().validate();
    augment.validate();
  }
};

// ---------------------------------------------------------------------------
// Clip sampling

struct TrainingClip {
  std::vector<int> frames;                     // source frame index per clip slot
  std::vector<bool> valid;                     // false on left padding
  std::vector<std::optional<BoundingBox>> gt;  // present only inside the track
};

/// Uniform over starts whose window intersects the track. Videos shorter
/// than the window are taken whole and left-padded with their first frame.
inline TrainingClip sample_training_clip(int frame_count, const ResponseTrack& track, int clip_len,
                                         std::mt19937_64& rng, int stride = 1) {
  track.validate();
  if (clip_len < 1 || stride < 1) throw ConfigError("sample_training_clip: clip_len and stride must be >= 1");
  if (frame_count < 1 || track.end >= frame_count) throw ConfigError("sample_training_clip: track outside video");
  TrainingClip c;
  auto push = [&](int f, bool valid) {
    c.frames.push_back(f);
    c.valid.push_back(valid);
    c.gt.push_back(valid && track.contains(f) ? std::optional<BoundingBox>(track.box_at(f)) : std::nullopt);
  };
  const int span = (clip_len - 1) * stride + 1;
  if (frame_count < span) {
    for (int k = 0; k < clip_len - frame_count; ++k) push(0, false);
    for (int f = std::max(0, frame_count - clip_len); f < frame_count; ++f) push(f, true);
    return c;
  }
  std::vector<int> starts;
  for (int s = 0; s + span <= frame_count; ++s) {
    for (int k = 0; k < clip_len; ++k) {
      if (track.contains(s + k * stride)) {
        starts.push_back(s);
        break;
      }
    }
  }
  if (starts.empty()) {
    // Track shorter than the stride gap: fall back to unit-stride windows.
    return sample_training_clip(frame_count, track, clip_len, rng, 1);
  }
  std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
  const int s = starts[pick(rng)];
  for (int k = 0; k < clip_len; ++k) push(s + k * stride, true);
  return c;
}

// ---------------------------------------------------------------------------
// One optimization step

template <class S>
struct GradientResult {
  LossReport loss;
  ParameterSet<S> grads;
};

/// Loss and full parameter gradient for a batch of examples.
template <class S>
GradientResult<S> batch_gradient(const Model<S>& model, const std::vector<std::vector<FeatureMap<S>>>& clips,
                                 const std::vector<FeatureMap<S>>& queries, const std::vector<std::vector<bool>>& valid,
                                 const std::vector<std::vector<std::optional<BoundingBox>>>& gt,
                                 const LossConfig& loss_cfg, int cross_pairs) {
  const auto& net = model.net;
  const auto& p = model.params;
  const std::size_t B = clips.size();
  GradientResult<S> out{{}, p.zeros_like()};

  std::vector<std::vector<ConvStackCache<S>>> clip_enc(B);
  std::vector<std::vector<FeatureMap<S>>> clip_feat(B);
  std::vector<ConvStackCache<S>> query_enc(B);
  std::vector<FeatureMap<S>> query_feat(B);
  for (std::size_t b = 0; b < B; ++b) {
    clip_enc[b].resize(clips[b].size());
    for (std::size_t t = 0; t < clips[b].size(); ++t)
      clip_feat[b].push_back(encode(net, p, clips[b][t], &clip_enc[b][t]));
    query_feat[b] = encode(net, p, queries[b], &query_enc[b]);
  }

  // (query video, clip video): own pairs first, then cyclic partners.
  std::vector<std::pair<std::size_t, std::size_t>> pair_ids;
  for (std::size_t b = 0; b < B; ++b) pair_ids.emplace_back(b, b);
  const std::size_t partners = std::min<std::size_t>(static_cast<std::size_t>(cross_pairs), B - 1);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 1; k <= partners; ++k) pair_ids.emplace_back(b, (b + k) % B);

  std::vector<CorrespondenceCache<S>> caches(pair_ids.size());
  std::vector<std::vector<FramePredictionRaw<S>>> preds(pair_ids.size());
  std::vector<PairPredictions<S>> pairs;
  for (std::size_t i = 0; i < pair_ids.size(); ++i) {
    const auto [qb, cb] = pair_ids[i];
    preds[i] = correspond_forward(net, p, clip_feat[cb], query_feat[qb], caches[i]);
    PairPredictions<S> pp;
    pp.query_video = static_cast<int>(qb);
    pp.clip_video = static_cast<int>(cb);
    pp.frames = &preds[i];
    pp.valid = valid[cb];
    pp.gt = qb == cb ? gt[cb] : std::vector<std::optional<BoundingBox>>(clips[cb].size());
    pairs.push_back(std::move(pp));
  }
  LossGrads<S> lg;
  out.loss = total_loss(model.grid, pairs, loss_cfg, net.config.input_side, &lg);

  std::vector<std::vector<Mat<S>>> d_clip(B);
  std::vector<Mat<S>> d_query(B);
  for (std::size_t i = 0; i < pair_ids.size(); ++i) {
    const auto [qb, cb] = pair_ids[i];
    auto g = correspond_backward(net, p, caches[i], lg.d_probs[i], lg.d_deltas[i], out.grads);
    if (d_clip[cb].empty()) d_clip[cb].resize(g.d_frames.size());
    for (std::size_t t = 0; t < g.d_frames.size(); ++t) {
      if (d_clip[cb][t].size() == 0) d_clip[cb][t] = std::move(g.d_frames[t].data);
      else d_clip[cb][t] += g.d_frames[t].data;
    }
    if (d_query[qb].size() == 0) d_query[qb] = std::move(g.d_query.data);
    else d_query[qb] += g.d_query.data;
  }
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < d_clip[b].size(); ++t)
      conv_stack_backward(net.encoder, p, clip_enc[b][t], d_clip[b][t], out.grads);
    conv_stack_backward(net.encoder, p, query_enc[b], d_query[b], out.grads);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loop

struct TrainLogRecord {
  int iter = 0;
  double lr = 0.0;
  LossReport loss;
  bool skipped = false;
  std::int64_t skipped_total = 0;

  nlohmann::json to_json() const {
    return {{"iter", iter},           {"lr", lr},       {"l_bbox", loss.l_bbox},
            {"l_prob", loss.l_prob},  {"total", loss.total}, {"n_pos", loss.n_pos},
            {"n_neg", loss.n_neg_sampled}, {"skipped", skipped}, {"skipped_total", skipped_total}};
  }
};

struct TrainHooks {
  std::function<void(const TrainLogRecord&)> on_log;
  std::function<void(int iter, const Model<float>&)> on_checkpoint;
};

/// Trains `model` in place on `data`. Bit-deterministic in (model init,
/// data, configs) since everything runs on one thread from one seed.
inline std::vector<TrainLogRecord> train(Model<float>& model, const std::vector<DatasetItem>& data,
                                         const TrainConfig& cfg, const LossConfig& loss_cfg,
                                         const TrainHooks& hooks = {}) {
  cfg.validate();
  loss_cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");
  const ModelConfig& mc = model.config();
  for (const auto& item : data)
    if (item.video.side != mc.input_side || item.query.side != mc.input_side)
      throw ConfigError("train: video '" + item.video.id + "' side " + std::to_string(item.video.side) +
                        " does not match model input " + std::to_string(mc.input_side));

  std::mt19937_64 rng(cfg.seed ^ 0x5eed'da7aULL);
  AdamConfig adam;
  adam.weight_decay = cfg.weight_decay;
  AdamState<float> state = AdamState<float>::init(model.params);
  const ScheduleConfig sched = cfg.schedule();

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  std::vector<TrainLogRecord> log;
  for (int it = 0; it < cfg.iterations; ++it) {
    const int B = std::min<int>(cfg.batch_size, static_cast<int>(data.size()));
    std::vector<std::vector<FeatureMap<float>>> clips(B);
    std::vector<FeatureMap<float>> queries(B);
    std::vector<std::vector<bool>> valid(B);
    std::vector<std::vector<std::optional<BoundingBox>>> gt(B);
    for (int b = 0; b < B; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const DatasetItem& item = data[order[cursor++]];
      const int stride = std::max(1, item.video.fps / cfg.fps);
      const TrainingClip tc =
          sample_training_clip(item.video.frame_count(), item.annotation.response_track, mc.clip_len, rng, stride);
      std::vector<Image> imgs;
      for (int f : tc.frames) imgs.push_back(item.video.frames[static_cast<std::size_t>(f)]);
      const AugmentParams clip_aug = draw_augment(cfg.augment, mc.input_side, rng);
      const AugmentedClip ac = augment(imgs, tc.gt, clip_aug);
      const AugmentParams query_aug = draw_augment(cfg.augment, mc.input_side, rng, item.annotation.query_box);
      for (const auto& im : ac.frames) clips[b].push_back(to_model_input<float>(im));
      queries[b] = to_model_input<float>(apply_augment(item.query, query_aug));
      valid[b] = tc.valid;
      gt[b] = ac.gt;
    }

    auto gr = batch_gradient(model, clips, queries, valid, gt, loss_cfg, cfg.cross_pairs);
    TrainLogRecord rec;
    rec.iter = it;
    rec.lr = lr_at(it, sched);
    rec.loss = gr.loss;
    rec.skipped = !optimizer_step(model.params, gr.grads, state, adam, rec.lr);
    rec.skipped_total = state.skipped;
    if (it % cfg.log_every == 0 || it + 1 == cfg.iterations) {
      log.push_back(rec);
      if (hooks.on_log) hooks.on_log(rec);
    }
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0)
      hooks.on_checkpoint(it + 1, model);
  }
  return log;
}

}  // namespace vqloc
