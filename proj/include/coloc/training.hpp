#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/features.hpp"
#include "coloc/geometry.hpp"
#include "coloc/model.hpp"
#include "coloc/rng.hpp"
#include "coloc/scenes.hpp"
#include "coloc/tracks.hpp"

namespace coloc {

inline constexpr double kLossNorm = 1.5;

/// Gradient of lp_norm(v, p) with respect to v; zero at the origin.
inline Vec3 lp_norm_grad(const Vec3& v, double p) {
  const double n = lp_norm(v, p);
  if (n == 0.0) return {};
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    const double a = std::abs(v[i]);
    g[i] = a == 0.0 ? 0.0 : std::copysign(std::pow(a / n, p - 1.0), v[i]);
  }
  return g;
}

/// min over targets of ||gt - pred||_1.5, or ||pred||_1.5 when there is no
/// target. `grad` receives dL/dpred (ties resolve to the first target).
inline double localizer_frame_loss(const std::vector<Doa>& targets, const Vec3& pred, Vec3* grad = nullptr) {
  if (targets.empty()) {
    if (grad) *grad = lp_norm_grad(pred, kLossNorm);
    return lp_norm(pred, kLossNorm);
  }
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double l = lp_norm(targets[i] - pred, kLossNorm);
    if (l < best) {
      best = l;
      arg = i;
    }
  }
  if (grad) *grad = -1.0 * lp_norm_grad(targets[arg] - pred, kLossNorm);
  return best;
}

/// -(1 - p_c)^gamma * ln(p_c) with p_c clamped to [1e-7, 1]; `dprob` (if
/// given) receives dL/dp_c.
inline double focal_loss(int gt_class, const std::vector<double>& probs, double gamma = 1.0, double* dprob = nullptr) {
  if (gt_class < 0 || gt_class >= int(probs.size())) throw Error("focal_loss: class index out of range");
  const double raw = probs[std::size_t(gt_class)];
  const double p = std::clamp(raw, 1e-7, 1.0);
  const double q = 1.0 - p;
  const double loss = -std::pow(q, gamma) * std::log(p);
  if (dprob) {
    if (raw < 1e-7 || raw > 1.0) {
      *dprob = 0.0;
    } else {
      const double dq = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * std::log(p);
      *dprob = dq - std::pow(q, gamma) / p;
    }
  }
  return loss;
}

// ------------------------------------------------------------ loss buckets

/// Buckets (r, k) with 0 <= r <= k <= N-1 plus one shared "target empty" bucket.
struct BucketSpace {
  int n_tracks = 3;

  int count() const { return n_tracks * (n_tracks + 1) / 2 + 1; }
  int empty_bucket() const { return count() - 1; }
  int index(int r, int k) const {
    if (r < 0 || k < r || k >= n_tracks) throw Error("BucketSpace: invalid (r, k)");
    return r * n_tracks - r * (r - 1) / 2 + (k - r);
  }
  std::string name(int b) const {
    if (b == empty_bucket()) return "empty";
    for (int r = 0; r < n_tracks; ++r)
      for (int k = r; k < n_tracks; ++k)
        if (index(r, k) == b) return "r" + std::to_string(r) + "k" + std::to_string(k);
    throw Error("BucketSpace: bucket out of range");
  }
  double coefficient() const { return 2.0 / (n_tracks * (n_tracks + 1) + 2.0); }
};

/// Bucket of one frame given the split row r: k is the last non-empty row of
/// the target part (rows r..N-1).
inline int frame_bucket(const StackedTracks& st, int r, int frame, const BucketSpace& space) {
  int k = -1;
  for (int row = r; row < st.n_tracks(); ++row)
    if (!st.at(row, frame).empty()) k = row;
  return k < 0 ? space.empty_bucket() : space.index(r, k);
}

inline std::vector<Doa> target_doas(const StackedTracks& st, int r, int frame) {
  std::vector<Doa> out;
  for (int row = r; row < st.n_tracks(); ++row)
    if (!st.at(row, frame).empty()) out.push_back(st.at(row, frame).xyz);
  return out;
}

// ------------------------------------------------------------ samples

struct LocalizerSample {
  FeatureTensor features;
  StackedTracks tracks;
  int r = 0;
  /// Encoder input per label frame: (perturbed) DOAs of rows 0..r-1.
  std::vector<std::vector<Doa>> condition;
};

struct ClassifierSample {
  FeatureTensor features;
  StackedTracks tracks;
  int r = 0;
  /// Encoder input per label frame: row r's (perturbed) DOA, empty when the cell is empty.
  std::vector<std::vector<Doa>> condition;
  /// Row r's class per label frame (K where empty).
  std::vector<int> target;
};

struct LossBreakdown {
  double total = 0.0;
  /// Mean frame loss per populated bucket (unweighted).
  std::map<int, double> bucket_mean;
  std::map<int, int> bucket_count;
};

/// Frame counts per bucket over a batch; depends only on ground truth.
inline std::map<int, int> bucket_counts(const std::vector<LocalizerSample>& batch) {
  std::map<int, int> counts;
  if (batch.empty()) return counts;
  const BucketSpace space{batch.front().tracks.n_tracks()};
  for (const auto& s : batch)
    for (int t = 0; t < s.tracks.n_frames(); ++t) ++counts[frame_bucket(s.tracks, s.r, t, space)];
  return counts;
}

/// Adds one item's frame losses into per-bucket sums; `grad` (if given)
/// receives that item's share of dL/dpred under the batch weighting.
inline void accumulate_localizer_item(const LocalizerSample& s, const Mat<float>& y, const std::map<int, int>& counts,
                                      std::map<int, double>& sums, Mat<float>* grad) {
  const BucketSpace space{s.tracks.n_tracks()};
  if (y.rows() != s.tracks.n_frames() || y.cols() != 3) throw Error("localizer_batch_loss: prediction shape mismatch");
  if (grad) *grad = Mat<float>::Zero(y.rows(), 3);
  for (int t = 0; t < s.tracks.n_frames(); ++t) {
    const int b = frame_bucket(s.tracks, s.r, t, space);
    Vec3 g;
    const double l = localizer_frame_loss(target_doas(s.tracks, s.r, t), {y(t, 0), y(t, 1), y(t, 2)}, grad ? &g : nullptr);
    sums[b] += l;
    if (grad) {
      const double w = space.coefficient() / counts.at(b);
      for (int d = 0; d < 3; ++d) (*grad)(t, d) = float(w * g[d]);
    }
  }
}

inline LossBreakdown finish_localizer_loss(const BucketSpace& space, const std::map<int, int>& counts,
                                           const std::map<int, double>& sums) {
  LossBreakdown out;
  out.bucket_count = counts;
  for (const auto& [b, s] : sums) {
    out.bucket_mean[b] = s / counts.at(b);
    out.total += space.coefficient() * out.bucket_mean[b];
  }
  return out;
}

/// Weighted per-bucket mean: coefficient * sum over populated buckets of
/// the bucket's mean frame loss. `grads` (if given) receives dL/dpred per item.
inline LossBreakdown localizer_batch_loss(const std::vector<LocalizerSample>& batch, const std::vector<Mat<float>>& preds,
                                          std::vector<Mat<float>>* grads = nullptr) {
  if (preds.size() != batch.size()) throw Error("localizer_batch_loss: prediction count mismatch");
  if (batch.empty()) return {};
  const auto counts = bucket_counts(batch);
  std::map<int, double> sums;
  if (grads) grads->assign(batch.size(), Mat<float>());
  for (std::size_t i = 0; i < batch.size(); ++i)
    accumulate_localizer_item(batch[i], preds[i], counts, sums, grads ? &(*grads)[i] : nullptr);
  return finish_localizer_loss(BucketSpace{batch.front().tracks.n_tracks()}, counts, sums);
}

/// Sum of one item's frame focal losses; `grad` receives dL/dprobs scaled by `scale`.
inline double accumulate_classifier_item(const ClassifierSample& s, const Mat<float>& p, double gamma, double scale,
                                         Mat<float>* grad) {
  if (p.rows() != Eigen::Index(s.target.size())) throw Error("classifier_batch_loss: prediction shape mismatch");
  if (grad) *grad = Mat<float>::Zero(p.rows(), p.cols());
  double total = 0.0;
  std::vector<double> row(std::size_t(p.cols()));
  for (Eigen::Index t = 0; t < p.rows(); ++t) {
    for (Eigen::Index c = 0; c < p.cols(); ++c) row[std::size_t(c)] = p(t, c);
    double dp = 0.0;
    const int gt = s.target[std::size_t(t)];
    total += focal_loss(gt, row, gamma, &dp);
    if (grad) (*grad)(t, gt) = float(dp * scale);
  }
  return total;
}

inline std::size_t batch_frames(const std::vector<ClassifierSample>& batch) {
  std::size_t n = 0;
  for (const auto& s : batch) n += s.target.size();
  return n;
}

/// Mean focal loss over every frame of the batch.
inline double classifier_batch_loss(const std::vector<ClassifierSample>& batch, const std::vector<Mat<float>>& probs,
                                    double gamma = 1.0, std::vector<Mat<float>>* grads = nullptr) {
  if (probs.size() != batch.size()) throw Error("classifier_batch_loss: prediction count mismatch");
  const std::size_t frames = batch_frames(batch);
  if (frames == 0) return 0.0;
  if (grads) grads->assign(batch.size(), Mat<float>());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    total += accumulate_classifier_item(batch[i], probs[i], gamma, 1.0 / double(frames), grads ? &(*grads)[i] : nullptr);
  return total / double(frames);
}

// ------------------------------------------------------------ batch assembly

struct BatchOptions {
  int batch_size = 16;
  int chunk_frames = 10;
  int n_tracks = 3;
  int n_classes = 13;
  bool volume_perturb = true;
  bool spatial_augment = true;
  bool permute_tracks = true;
  double perturb_deg = 5.0;
};

/// Whole-scene feature cache plus labels; training chunks are sliced from it.
struct SceneFeatures {
  FeatureTensor features;
  std::vector<FrameEvent> events;
  int n_frames = 0;
};

inline SceneFeatures make_scene_features(const Scene& sc) {
  return {assemble_features(sc.audio), sc.events, sc.n_frames};
}

namespace training_detail {

struct Chunk {
  FeatureTensor features;
  StackedTracks tracks;
  bool augmented = false;
};

inline Chunk draw_chunk(const std::vector<SceneFeatures>& scenes, const BatchOptions& o, int index, Rng& rng) {
  if (scenes.empty()) throw Error("build batch: no training scenes");
  const SceneFeatures& sc = scenes[std::size_t(uniform_int(rng, 0, int(scenes.size()) - 1))];
  const int len = std::min(o.chunk_frames, sc.n_frames);
  if (sc.features.frames < sc.n_frames * kFramesPerLabel) throw Error("build batch: feature cache shorter than labels");
  const int start = uniform_int(rng, 0, sc.n_frames - len);
  std::vector<FrameEvent> events;
  for (const auto& e : sc.events)
    if (e.frame >= start && e.frame < start + len) {
      FrameEvent c = e;
      c.frame -= start;
      events.push_back(c);
    }
  Chunk ch;
  ch.features = slice_frames(sc.features, start * kFramesPerLabel, (start + len) * kFramesPerLabel);
  const double gain = o.volume_perturb ? uniform(rng, 0.5, 1.5) : 1.0;
  FoaTransform kind;
  if (o.spatial_augment && index % 4 == 0) {
    kind = FoaTransform::from_index(uniform_int(rng, 0, FoaTransform::kCount - 1));
    for (auto& e : events) e.doa = kind.apply(e.doa);
    ch.augmented = true;
  }
  if (gain != 1.0 || !kind.is_identity()) augment_features(ch.features, gain, kind);
  StackOptions so;
  so.unit_tol = 1e-6;
  ch.tracks = stack_tracks(truncate_overlap(events, o.n_tracks), o.n_tracks, len, o.n_classes, so);
  if (o.permute_tracks) ch.tracks = permute_and_restack(ch.tracks, rng);
  return ch;
}

}  // namespace training_detail

/// Chunks of cached features with volume perturbation, spatial augmentation
/// on every 4th item (index % 4 == 0), track permutation, r in [0, N-2], and
/// perturbed conditioning DOAs.
inline std::vector<LocalizerSample> build_localizer_batch(const std::vector<SceneFeatures>& scenes, Rng& rng,
                                                          const BatchOptions& o, std::vector<bool>* augmented = nullptr) {
  if (o.n_tracks < 2) throw Error("build_localizer_batch: need at least 2 tracks");
  std::vector<LocalizerSample> out;
  if (augmented) augmented->clear();
  for (int i = 0; i < o.batch_size; ++i) {
    auto ch = training_detail::draw_chunk(scenes, o, i, rng);
    LocalizerSample s;
    s.r = uniform_int(rng, 0, o.n_tracks - 2);
    for (int t = 0; t < ch.tracks.n_frames(); ++t) {
      std::vector<Doa> set = ch.tracks.doas_below(t, s.r);
      for (auto& d : set) d = perturb_doa(d, o.perturb_deg, rng);
      s.condition.push_back(std::move(set));
    }
    s.features = std::move(ch.features);
    s.tracks = std::move(ch.tracks);
    if (augmented) augmented->push_back(ch.augmented);
    out.push_back(std::move(s));
  }
  return out;
}

/// Same chunk pipeline; r in [0, N-1], conditioning on row r only.
inline std::vector<ClassifierSample> build_classifier_batch(const std::vector<SceneFeatures>& scenes, Rng& rng,
                                                            const BatchOptions& o) {
  std::vector<ClassifierSample> out;
  for (int i = 0; i < o.batch_size; ++i) {
    auto ch = training_detail::draw_chunk(scenes, o, i, rng);
    ClassifierSample s;
    s.r = uniform_int(rng, 0, o.n_tracks - 1);
    for (int t = 0; t < ch.tracks.n_frames(); ++t) {
      const auto& cell = ch.tracks.at(s.r, t);
      if (cell.empty())
        s.condition.push_back({});
      else
        s.condition.push_back({perturb_doa(cell.xyz, o.perturb_deg, rng)});
      s.target.push_back(cell.cls);
    }
    s.features = std::move(ch.features);
    s.tracks = std::move(ch.tracks);
    out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------ Adam

template <typename T>
struct AdamState {
  double lr = 5e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  ParamBundle<T> m, v;

  AdamState() = default;
  explicit AdamState(const ParamBundle<T>& params, double learning_rate = 5e-4)
      : lr(learning_rate), m(params.zeros_like()), v(params.zeros_like()) {}
};

/// Bias-corrected Adam update. Throws on a non-finite gradient before
/// touching any parameter.
template <typename T>
void adam_step(AdamState<T>& st, ParamBundle<T>& params, const ParamBundle<T>& grads) {
  if (!grads.same_layout(params) || !st.m.same_layout(params)) throw Error("adam_step: shape mismatch");
  for (const auto& e : grads)
    for (T g : e.data)
      if (!std::isfinite(double(g))) throw Error("adam_step: non-finite gradient in " + e.name);
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    auto& m = st.m[i].data;
    auto& v = st.v[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = double(g[k]);
      m[k] = T(st.beta1 * double(m[k]) + (1.0 - st.beta1) * gk);
      v[k] = T(st.beta2 * double(v[k]) + (1.0 - st.beta2) * gk * gk);
      const double mh = double(m[k]) / c1;
      const double vh = double(v[k]) / c2;
      p[k] = T(double(p[k]) - st.lr * mh / (std::sqrt(vh) + st.eps));
    }
  }
}

// ------------------------------------------------------------ training loop

struct TrainConfig {
  ModelKind kind = ModelKind::Localizer;
  int steps = 2000;
  double lr = 5e-4;
  double focal_gamma = 1.0;
  std::uint64_t seed = 1;
  int checkpoint_every = 500;
  int cond_channels = 5;
  BatchOptions batch;
  NetConfig net;  // outputs/head/in_channels are derived from kind and cond_channels

  NetConfig resolved_net() const {
    NetConfig c = net;
    c.in_channels = kFeatureChannels + cond_channels;
    c.outputs = kind == ModelKind::Localizer ? 3 : batch.n_classes + 1;
    c.head = kind == ModelKind::Localizer ? HeadKind::Tanh : HeadKind::Softmax;
    return c;
  }
  void validate() const {
    if (steps < 0) throw Error("train: steps must be >= 0");
    if (batch.batch_size < 1) throw Error("train: batch size must be >= 1");
    if (batch.chunk_frames < 2) throw Error("train: chunk must span at least 2 label frames");
    if (batch.n_tracks < 2) throw Error("train: need at least 2 tracks");
    if (!(lr > 0.0)) throw Error("train: learning rate must be positive");
    resolved_net().validate();
  }
};

struct StepReport {
  int step = 0;
  double total = 0.0;
  std::map<std::string, double> buckets;
};

struct TrainResult {
  ConditionedModel<float> model;
  std::vector<StepReport> history;
  double seconds = 0.0;
};

/// One optimization step on a prepared batch. Items run forward and
/// backward one at a time (bucket sizes depend only on ground truth).
template <typename Sample>
StepReport train_step(ConditionedModel<float>& model, const std::vector<Sample>& batch, AdamState<float>& enc_opt,
                      AdamState<float>& net_opt, double focal_gamma) {
  constexpr bool kLocalizer = std::is_same_v<Sample, LocalizerSample>;
  auto grads = model.zero_grads();
  StepReport rep;
  std::map<int, int> counts;
  std::map<int, double> sums;
  std::size_t frames = 0;
  if constexpr (kLocalizer)
    counts = bucket_counts(batch);
  else
    frames = batch_frames(batch);
  double cls_total = 0.0;
  ModelTrace<float> trace;
  Mat<float> dy;
  for (const auto& item : batch) {
    const Mat<float> y = model.forward(item.features, item.condition, &trace);
    if constexpr (kLocalizer)
      accumulate_localizer_item(item, y, counts, sums, &dy);
    else
      cls_total += accumulate_classifier_item(item, y, focal_gamma, 1.0 / double(frames), &dy);
    model.backward(trace, dy, grads);
  }
  if constexpr (kLocalizer) {
    const BucketSpace space{batch.front().tracks.n_tracks()};
    const auto lb = finish_localizer_loss(space, counts, sums);
    rep.total = lb.total;
    for (const auto& [b, v] : lb.bucket_mean) rep.buckets[space.name(b)] = v;
  } else {
    rep.total = cls_total / double(frames);
    rep.buckets["all"] = rep.total;
  }
  if (!std::isfinite(rep.total)) throw Error("train: loss is not finite");
  adam_step(enc_opt, model.enc.params, grads.enc);
  adam_step(net_opt, model.net.params, grads.net);
  return rep;
}

/// Freshly initialized model for a training config (what 0 steps yields).
inline ConditionedModel<float> initial_model(const TrainConfig& cfg) {
  ConditionedModel<float> model(cfg.kind, cfg.resolved_net(), cfg.cond_channels);
  Rng init_rng = make_rng(cfg.seed, {0x1417});
  model.init(init_rng);
  return model;
}

/// Trains one component from scratch. With a non-empty ckpt_dir, writes a
/// checkpoint every `checkpoint_every` steps and at the end; with a
/// non-empty loss_csv, logs `step,bucket,loss` rows.
inline TrainResult train(const TrainConfig& cfg, const std::vector<SceneFeatures>& scenes, const std::string& ckpt_dir = {},
                         const std::string& loss_csv = {},
                         const std::function<void(const StepReport&)>& on_step = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  ConditionedModel<float> model = initial_model(cfg);
  AdamState<float> enc_opt(model.enc.params, cfg.lr), net_opt(model.net.params, cfg.lr);

  std::ofstream csv;
  if (!loss_csv.empty()) {
    csv.open(loss_csv);
    if (!csv) throw Error("train: cannot write " + loss_csv);
    csv << "step,bucket,loss\n";
  }
  nlohmann::json meta = {{"steps_done", 0}};
  auto checkpoint = [&](int step) {
    if (ckpt_dir.empty()) return;
    meta["steps_done"] = step;
    save_checkpoint(ckpt_dir, model, meta);
  };

  TrainResult res{model, {}, 0.0};
  for (int step = 1; step <= cfg.steps; ++step) {
    Rng rng = make_rng(cfg.seed, {0xba7c, std::uint64_t(step)});
    StepReport rep;
    try {
      if (cfg.kind == ModelKind::Localizer)
        rep = train_step(model, build_localizer_batch(scenes, rng, cfg.batch), enc_opt, net_opt, cfg.focal_gamma);
      else
        rep = train_step(model, build_classifier_batch(scenes, rng, cfg.batch), enc_opt, net_opt, cfg.focal_gamma);
    } catch (const Error& e) {
      throw Error(std::string("train: diverged at step ") + std::to_string(step) + " (" + e.what() + ")" +
                  (ckpt_dir.empty() ? "" : "; last good checkpoint kept in " + ckpt_dir));
    }
    rep.step = step;
    if (csv) {
      for (const auto& [name, v] : rep.buckets) csv << step << "," << name << "," << v << "\n";
      csv << step << ",total," << rep.total << "\n";
    }
    if (on_step) on_step(rep);
    res.history.push_back(rep);
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) checkpoint(step);
  }
  checkpoint(cfg.steps);
  res.model = model;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace coloc
