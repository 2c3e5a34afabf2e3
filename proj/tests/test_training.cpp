#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "coloc/training.hpp"

using namespace coloc;
using nn::Mat;

namespace {

// Independent 1.5-norm: (sum |d_i|^1.5)^(2/3).
double norm15(const Vec3& v) {
  double s = 0;
  for (int i = 0; i < 3; ++i) s += std::pow(std::abs(v[i]), 1.5);
  return std::pow(s, 2.0 / 3.0);
}

Doa random_unit(Rng& rng) {
  return azel_to_doa({uniform(rng, -180.0, 179.9), rad2deg(std::asin(uniform(rng, -1.0, 1.0)))});
}

std::vector<SceneFeatures> small_dataset(int n, std::uint64_t seed, int n_classes = 4) {
  SceneConfig cfg;
  cfg.duration_s = 3.0;
  cfg.n_classes = n_classes;
  cfg.max_overlap = 2;
  cfg.max_events = 3;
  cfg.max_event_s = 1.0;
  std::vector<SceneFeatures> out;
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, {std::uint64_t(i)});
    out.push_back(make_scene_features(generate_scene(cfg, rng)));
  }
  return out;
}

LocalizerSample one_track_sample(const std::vector<Doa>& frame_doas, int r = 0) {
  LocalizerSample s;
  s.tracks = StackedTracks(3, int(frame_doas.size()), 4);
  for (int t = 0; t < int(frame_doas.size()); ++t)
    if (!is_zero(frame_doas[std::size_t(t)])) s.tracks.at(0, t) = {frame_doas[std::size_t(t)], 1};
  s.r = r;
  return s;
}

}  // namespace

TEST(LocalizerFrameLoss, Examples) {
  EXPECT_EQ(localizer_frame_loss({}, {0, 0, 0}), 0.0);
  EXPECT_EQ(localizer_frame_loss({{1, 0, 0}}, {1, 0, 0}), 0.0);
  const Vec3 pred{0.5, 0.5, 0};
  const double want = std::min(norm15(Vec3{1, 0, 0} - pred), norm15(Vec3{0, 1, 0} - pred));
  EXPECT_NEAR(want, std::pow(2 * std::pow(0.5, 1.5), 2.0 / 3.0), 1e-15);
  EXPECT_NEAR(localizer_frame_loss({{1, 0, 0}, {0, 1, 0}}, pred), want, 1e-12);
  EXPECT_NEAR(localizer_frame_loss({{1, 0, 0}, {0, 1, 0}}, pred), 0.793700526, 1e-9);
}

TEST(LocalizerFrameLoss, BruteForceAndPermutationInvariance) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Doa> targets;
    const int n = uniform_int(rng, 0, 3);
    for (int i = 0; i < n; ++i) targets.push_back(random_unit(rng));
    const Vec3 pred{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    double want = norm15(pred);
    if (n > 0) {
      want = 1e300;
      for (const auto& t : targets) want = std::min(want, norm15(t - pred));
    }
    EXPECT_NEAR(localizer_frame_loss(targets, pred), want, 1e-12);
    std::reverse(targets.begin(), targets.end());
    EXPECT_NEAR(localizer_frame_loss(targets, pred), want, 1e-12);
  }
}

TEST(LocalizerFrameLoss, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  const double h = 1e-6;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Doa> targets;
    const int n = uniform_int(rng, 0, 3);
    for (int i = 0; i < n; ++i) targets.push_back(random_unit(rng));
    const Vec3 pred{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    Vec3 g;
    localizer_frame_loss(targets, pred, &g);
    for (int d = 0; d < 3; ++d) {
      Vec3 p = pred, m = pred;
      p[d] += h;
      m[d] -= h;
      const double num = (localizer_frame_loss(targets, p) - localizer_frame_loss(targets, m)) / (2 * h);
      EXPECT_NEAR(num, g[d], 1e-5 * std::max(1.0, std::abs(num)));
    }
  }
}

TEST(LossBuckets, EnumerationMatchesComponentCount) {
  for (int N = 1; N <= 6; ++N) {
    BucketSpace space{N};
    std::set<int> seen;
    for (int r = 0; r < N; ++r)
      for (int k = r; k < N; ++k) seen.insert(space.index(r, k));
    seen.insert(space.empty_bucket());
    EXPECT_EQ(int(seen.size()), N * (N + 1) / 2 + 1);
    EXPECT_EQ(space.count(), N * (N + 1) / 2 + 1);
    EXPECT_EQ(*seen.rbegin(), space.count() - 1);
    EXPECT_NEAR(space.coefficient(), 1.0 / space.count(), 1e-15);
  }
  EXPECT_EQ(BucketSpace{3}.count(), 7);
  EXPECT_NEAR(BucketSpace{3}.coefficient(), 1.0 / 7.0, 1e-15);
}

TEST(LocalizerBatchLoss, SingleBucketWeighting) {
  // one event on row 0 in both frames, r = 0 -> bucket (0, 0); frame losses 0.2 and 0.4
  auto s = one_track_sample({{1, 0, 0}, {0, 1, 0}});
  Mat<float> y(2, 3);
  y << 0.8f, 0, 0, 0, 0.6f, 0;
  const auto lb = localizer_batch_loss({s}, {y});
  ASSERT_EQ(lb.bucket_mean.size(), 1u);
  EXPECT_NEAR(lb.bucket_mean.begin()->second, 0.3, 1e-6);
  EXPECT_NEAR(lb.total, 0.3 / 7.0, 1e-6);
}

TEST(LocalizerBatchLoss, ExactPredictionsGiveZero) {
  auto s = one_track_sample({{1, 0, 0}, {}, {0, 0, -1}});
  Mat<float> y(3, 3);
  y << 1, 0, 0, 0, 0, 0, 0, 0, -1;
  EXPECT_EQ(localizer_batch_loss({s}, {y}).total, 0.0);
}

TEST(LocalizerBatchLoss, BucketsAndCounts) {
  Rng rng(3);
  const auto data = small_dataset(6, 3);
  BatchOptions o;
  o.batch_size = 12;
  o.chunk_frames = 10;
  o.n_classes = 4;
  const auto batch = build_localizer_batch(data, rng, o);
  const auto counts = bucket_counts(batch);
  EXPECT_LE(int(counts.size()), BucketSpace{3}.count());
  int total = 0;
  for (const auto& [b, n] : counts) total += n;
  EXPECT_EQ(total, 12 * 10);
}

TEST(LocalizerBatchLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const auto data = small_dataset(4, 4);
  BatchOptions o;
  o.batch_size = 4;
  o.n_classes = 4;
  const auto batch = build_localizer_batch(data, rng, o);
  std::vector<Mat<float>> preds;
  for (const auto& s : batch) {
    Mat<float> y(s.tracks.n_frames(), 3);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = float(uniform(rng, -0.9, 0.9));
    preds.push_back(y);
  }
  std::vector<Mat<float>> grads;
  localizer_batch_loss(batch, preds, &grads);
  const float h = 1e-3f;
  int checked = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (Eigen::Index k = 0; k < preds[i].size(); k += 7) {
      auto p = preds, m = preds;
      p[i].data()[k] += h;
      m[i].data()[k] -= h;
      const double num = (localizer_batch_loss(batch, p).total - localizer_batch_loss(batch, m).total) /
                         (double(p[i].data()[k]) - double(m[i].data()[k]));
      EXPECT_NEAR(num, grads[i].data()[k], 2e-3 * std::max(1e-3, std::abs(num)) + 1e-6);
      ++checked;
    }
  EXPECT_GT(checked, 10);
}

TEST(FocalLoss, Examples) {
  EXPECT_EQ(focal_loss(0, {1.0, 0.0}), 0.0);
  EXPECT_NEAR(focal_loss(1, {0.5, 0.5}), 0.5 * std::log(2.0), 1e-12);
  EXPECT_NEAR(focal_loss(1, {0.5, 0.5}), 0.346574, 1e-6);
  EXPECT_NEAR(focal_loss(0, {0.3, 0.7}, 0.0), -std::log(0.3), 1e-15);
  // clamp keeps the loss finite
  EXPECT_NEAR(focal_loss(0, {0.0, 1.0}), -std::log(1e-7) * (1 - 1e-7), 1e-9);
  EXPECT_THROW(focal_loss(2, {0.5, 0.5}), Error);
}

TEST(FocalLoss, NeverAboveCrossEntropyAndGradient) {
  for (double p = 0.001; p < 1.0; p += 0.0137) {
    const std::vector<double> probs{p, 1 - p};
    EXPECT_LE(focal_loss(0, probs), focal_loss(0, probs, 0.0));
    double g = 0;
    focal_loss(0, probs, 1.0, &g);
    const double h = 1e-7;
    const double num = (focal_loss(0, {p + h, 1 - p}) - focal_loss(0, {p - h, 1 - p})) / (2 * h);
    EXPECT_NEAR(g, num, 1e-4 * std::max(1.0, std::abs(num)));
  }
}

TEST(ClassifierBatch, TargetsAndConditioning) {
  Rng rng(5);
  const auto data = small_dataset(6, 5);
  BatchOptions o;
  o.batch_size = 16;
  o.n_classes = 4;
  const auto batch = build_classifier_batch(data, rng, o);
  std::set<int> rs;
  for (const auto& s : batch) {
    rs.insert(s.r);
    ASSERT_EQ(int(s.target.size()), s.tracks.n_frames());
    for (int t = 0; t < s.tracks.n_frames(); ++t) {
      const auto& cell = s.tracks.at(s.r, t);
      EXPECT_EQ(s.target[std::size_t(t)], cell.cls);
      EXPECT_EQ(s.condition[std::size_t(t)].empty(), cell.empty());
      if (cell.empty()) {
        EXPECT_EQ(cell.cls, 4);
      }
    }
  }
  EXPECT_LE(*rs.rbegin(), 2);
  EXPECT_GE(*rs.begin(), 0);
}

TEST(LocalizerBatch, DeterministicAugmentationRuleAndPerturbation) {
  const auto data = small_dataset(6, 6);
  BatchOptions o;
  o.batch_size = 10;
  o.n_classes = 4;
  Rng a(77), b(77);
  std::vector<bool> aug;
  const auto b1 = build_localizer_batch(data, a, o, &aug);
  const auto b2 = build_localizer_batch(data, b, o);
  ASSERT_EQ(b1.size(), b2.size());
  for (std::size_t i = 0; i < b1.size(); ++i) {
    EXPECT_EQ(b1[i].features, b2[i].features);
    EXPECT_EQ(b1[i].tracks, b2[i].tracks);
    EXPECT_EQ(b1[i].r, b2[i].r);
    EXPECT_EQ(b1[i].condition, b2[i].condition);
  }
  int n_aug = 0;
  for (std::size_t i = 0; i < aug.size(); ++i) {
    EXPECT_EQ(aug[i], i % 4 == 0);
    n_aug += aug[i];
  }
  EXPECT_EQ(n_aug, 3);  // ceil(10 / 4)

  for (const auto& s : b1) {
    EXPECT_GE(s.r, 0);
    EXPECT_LE(s.r, 1);
    for (int t = 0; t < s.tracks.n_frames(); ++t) {
      const auto truth = s.tracks.doas_below(t, s.r);
      const auto& cond = s.condition[std::size_t(t)];
      ASSERT_EQ(cond.size(), truth.size());
      for (std::size_t k = 0; k < cond.size(); ++k) {
        const AzEl p = doa_to_azel(cond[k]), q = doa_to_azel(truth[k]);
        EXPECT_LE(std::abs(p.elevation - q.elevation), 5.0 + 1e-6);
        if (std::abs(q.elevation) < 80.0) {
          EXPECT_LE(std::abs(wrap_azimuth(p.azimuth - q.azimuth)), 5.0 + 1e-6);
        }
      }
    }
    EXPECT_EQ(s.tracks.violation(1e-5), "");
  }
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  ParamBundle<float> p;
  p.add("w", {3});
  p[0].data = {0.5f, -1.0f, 2.0f};
  const auto before = p;
  AdamState<float> st(p);
  adam_step(st, p, p.zeros_like());
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {1e-3, 0.5, 42.0}) {
    ParamBundle<double> p;
    p.add("w", {1});
    p[0].data = {1.0};
    AdamState<double> st(p);
    auto grads = p.zeros_like();
    grads[0].data = {g};
    adam_step(st, p, grads);
    EXPECT_NEAR(p[0].data[0], 1.0 - 5e-4, 1e-8) << g;
  }
}

TEST(Adam, QuadraticBowlDecreasesMonotonically) {
  ParamBundle<double> p;
  p.add("w", {1});
  p[0].data = {1.0};
  AdamState<double> st(p);
  double prev = 1.0;
  for (int i = 0; i < 500; ++i) {
    auto grads = p.zeros_like();
    grads[0].data = {2 * p[0].data[0]};
    adam_step(st, p, grads);
    if (i >= 10) {
      EXPECT_LT(std::abs(p[0].data[0]), prev);
    }
    prev = std::abs(p[0].data[0]);
  }
  EXPECT_LT(prev, 0.8);
}

TEST(Adam, NonFiniteGradientFailsFast) {
  ParamBundle<float> p;
  p.add("a", {2});
  p.add("b", {1});
  const auto before = p;
  AdamState<float> st(p);
  auto grads = p.zeros_like();
  grads[0].data[0] = 1.0f;
  grads[1].data[0] = std::nanf("");
  EXPECT_THROW(adam_step(st, p, grads), Error);
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 0);
}

TEST(Train, ZeroStepsCheckpointEqualsInitialization) {
  const auto data = small_dataset(2, 7);
  TrainConfig cfg;
  cfg.steps = 0;
  cfg.batch.n_classes = 4;
  const auto dir = std::filesystem::path(::testing::TempDir()) / "coloc_zero_steps";
  std::filesystem::remove_all(dir);
  train(cfg, data, dir.string());
  const auto loaded = load_checkpoint(dir.string());
  const auto init = initial_model(cfg);
  EXPECT_EQ(loaded.enc.params, init.enc.params);
  EXPECT_EQ(loaded.net.params, init.net.params);
  std::filesystem::remove_all(dir);
}

TEST(Train, LossCurveAndDeterminism) {
  const auto data = small_dataset(3, 8);
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch.batch_size = 2;
  cfg.batch.n_classes = 4;
  const auto csv = std::filesystem::path(::testing::TempDir()) / "coloc_loss.csv";
  const auto r1 = train(cfg, data, {}, csv.string());
  const auto r2 = train(cfg, data);
  EXPECT_EQ(r1.model.net.params, r2.model.net.params);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,bucket,loss");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_GE(rows, 6);
  std::filesystem::remove(csv);

  cfg.kind = ModelKind::Classifier;
  const auto c = train(cfg, data);
  EXPECT_EQ(c.model.kind(), ModelKind::Classifier);
  EXPECT_EQ(c.history.size(), 3u);
  EXPECT_TRUE(c.history.back().buckets.count("all"));
}

TEST(Train, IndependentOfHeapLayout) {
  const auto data = small_dataset(2, 9);
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch.batch_size = 4;
  cfg.batch.n_classes = 4;
  const auto ref = train(cfg, data);
  for (const auto& e : ref.model.net.params)
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(e.data.data()) % EIGEN_DEFAULT_ALIGN_BYTES, 0u) << e.name;
  for (std::size_t shift : {8u, 24u, 40u, 56u}) {
    std::vector<std::vector<char>> hold;
    for (int i = 0; i < 64; ++i) hold.emplace_back(shift + std::size_t(i % 3) * 16);
    EXPECT_EQ(train(cfg, data).model.net.params, ref.model.net.params) << shift;
  }
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.batch.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.net.time_pool = {1, 1};
  EXPECT_THROW(cfg.validate(), Error);
}
