#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "coloc/metrics.hpp"

using namespace coloc;

namespace {

FeatureTensor blank_features(int label_frames) { return FeatureTensor(kFeatureChannels, label_frames * kFramesPerLabel, 1); }

Doa random_doa(Rng& rng) {
  return azel_to_doa({uniform(rng, -180.0, 180.0), rad2deg(std::asin(uniform(rng, -1.0, 1.0)))});
}

/// Frames with 1..N sources at pairwise separation >= 15 degrees.
StackedTracks random_truth(int frames, int N, int K, Rng& rng) {
  StackedTracks st(N, frames, K);
  for (int t = 0; t < frames; ++t) {
    const int m = uniform_int(rng, 1, N);
    for (int r = 0; r < m; ++r) {
      Doa d;
      bool ok = false;
      while (!ok) {
        d = random_doa(rng);
        ok = true;
        for (int q = 0; q < r; ++q) ok = ok && angular_distance(d, st.at(q, t).xyz) >= 15.0;
      }
      st.at(r, t) = {d, uniform_int(rng, 0, K - 1)};
    }
  }
  return st;
}

SeldOutput random_output(int frames, int K, Rng& rng, int max_per_frame = 3) {
  SeldOutput out(static_cast<std::size_t>(frames));
  for (auto& f : out) {
    const int n = uniform_int(rng, 0, max_per_frame);
    for (int i = 0; i < n; ++i) f.push_back({uniform_int(rng, 0, K - 1), random_doa(rng)});
  }
  return out;
}

double brute_force_cost(const std::vector<double>& cost, int rows, int cols) {
  // Enumerate injective maps of the smaller side into the larger.
  const bool t = rows > cols;
  const int n = t ? cols : rows, m = t ? rows : cols;
  std::vector<int> idx(static_cast<std::size_t>(m));
  std::iota(idx.begin(), idx.end(), 0);
  double best = 1e300;
  do {
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      s += t ? cost[std::size_t(idx[std::size_t(i)]) * cols + std::size_t(i)]
             : cost[std::size_t(i) * cols + std::size_t(idx[std::size_t(i)])];
    best = std::min(best, s);
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

void expect_same(const SeldScores& a, const SeldScores& b) {
  EXPECT_DOUBLE_EQ(a.er20, b.er20);
  EXPECT_DOUBLE_EQ(a.f20, b.f20);
  EXPECT_DOUBLE_EQ(a.lr_cd, b.lr_cd);
  if (std::isnan(a.le_cd))
    EXPECT_TRUE(std::isnan(b.le_cd));
  else
    EXPECT_NEAR(a.le_cd, b.le_cd, 1e-9);
}

}  // namespace

TEST(Hungarian, MatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 400; ++trial) {
    const int rows = uniform_int(rng, 1, 5), cols = uniform_int(rng, 1, 5);
    std::vector<double> cost(std::size_t(rows * cols));
    for (auto& c : cost) c = uniform_int(rng, 0, 3) == 0 ? 1.0 : uniform(rng, 0.0, 180.0);
    const auto a = hungarian(cost, rows, cols);
    std::vector<int> used;
    for (int v : a)
      if (v >= 0) used.push_back(v);
    EXPECT_EQ(int(used.size()), std::min(rows, cols));
    std::sort(used.begin(), used.end());
    EXPECT_EQ(std::adjacent_find(used.begin(), used.end()), used.end());
    EXPECT_NEAR(assignment_cost(cost, cols, a), brute_force_cost(cost, rows, cols), 1e-9);
  }
}

TEST(Hungarian, DegenerateShapes) {
  EXPECT_TRUE(hungarian({}, 0, 3).empty());
  EXPECT_EQ(hungarian({}, 2, 0), (std::vector<int>{-1, -1}));
  EXPECT_THROW(hungarian({1.0}, 2, 2), Error);
}

TEST(SeldScores, PerfectPrediction) {
  SeldOutput ref(1);
  ref[0] = {{1, azel_to_doa({30, 10})}};
  const auto s = seld_scores(ref, ref);
  EXPECT_EQ(s.er20, 0.0);
  EXPECT_EQ(s.f20, 1.0);
  EXPECT_EQ(s.le_cd, 0.0);
  EXPECT_EQ(s.lr_cd, 1.0);
}

TEST(SeldScores, EmptyPrediction) {
  SeldOutput ref(1), pred(1);
  ref[0] = {{1, azel_to_doa({30, 10})}};
  const auto s = seld_scores(pred, ref);
  EXPECT_EQ(s.er20, 1.0);
  EXPECT_EQ(s.f20, 0.0);
  EXPECT_EQ(s.lr_cd, 0.0);
  EXPECT_TRUE(std::isnan(s.le_cd));
}

TEST(SeldScores, DisplacedBeyondThreshold) {
  // One reference, one same-class prediction 25 degrees away: one FP and
  // one FN in the segment make a single substitution.
  SeldOutput ref(1), pred(1);
  ref[0] = {{2, azel_to_doa({0, 0})}};
  pred[0] = {{2, azel_to_doa({25, 0})}};
  const auto c = seld_counts(pred, ref);
  EXPECT_EQ(c.tp, 0);
  EXPECT_EQ(c.fp, 1);
  EXPECT_EQ(c.fn, 1);
  EXPECT_EQ(c.substitutions, 1);
  const auto s = seld_scores(c);
  EXPECT_EQ(s.er20, 1.0);
  EXPECT_EQ(s.f20, 0.0);
  EXPECT_NEAR(s.le_cd, 25.0, 1e-9);
  EXPECT_EQ(s.lr_cd, 1.0);
}

TEST(SeldScores, WrongClassIsNotMatched) {
  SeldOutput ref(1), pred(1);
  ref[0] = {{2, azel_to_doa({0, 0})}};
  pred[0] = {{3, azel_to_doa({0, 0})}};
  const auto s = seld_scores(pred, ref);
  EXPECT_EQ(s.er20, 1.0);
  EXPECT_EQ(s.f20, 0.0);
  EXPECT_EQ(s.lr_cd, 0.0);
  EXPECT_TRUE(std::isnan(s.le_cd));
}

TEST(SeldScores, SegmentsCountSeparately) {
  // A miss in frame 0 and a false alarm in frame 10 fall into different
  // segments: one deletion and one insertion rather than a substitution.
  SeldOutput ref(11), pred(11);
  ref[0] = {{0, azel_to_doa({0, 0})}};
  pred[10] = {{0, azel_to_doa({90, 0})}};
  auto c = seld_counts(pred, ref);
  EXPECT_EQ(c.deletions, 1);
  EXPECT_EQ(c.insertions, 1);
  EXPECT_EQ(c.substitutions, 0);
  EXPECT_EQ(seld_scores(c).er20, 2.0);
  pred[10].clear();
  pred[9] = {{0, azel_to_doa({90, 0})}};
  c = seld_counts(pred, ref);
  EXPECT_EQ(c.substitutions, 1);
  EXPECT_EQ(seld_scores(c).er20, 1.0);
}

TEST(SeldScores, FrameRangeMismatchThrows) {
  EXPECT_THROW(seld_scores(SeldOutput(3), SeldOutput(4)), Error);
}

TEST(SeldScores, PermutationInvariant) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ref = random_output(30, 3, rng);
    auto pred = random_output(30, 3, rng);
    for (std::size_t t = 0; t < pred.size(); ++t)
      if (!ref[t].empty() && uniform_int(rng, 0, 1)) pred[t].push_back({ref[t][0].class_id, ref[t][0].doa});
    const auto base = seld_scores(pred, ref);
    auto p2 = pred, r2 = ref;
    for (auto& f : p2) std::shuffle(f.begin(), f.end(), rng);
    for (auto& f : r2) std::shuffle(f.begin(), f.end(), rng);
    expect_same(base, seld_scores(p2, r2));
  }
}

TEST(SeldScores, DuplicateInsertionRaisesErrorRate) {
  // Predictions cover every reference (no deletions); duplicating a
  // matched correct prediction adds one insertion.
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ref = random_output(20, 3, rng);
    SeldOutput pred = ref;
    for (auto& f : pred)
      if (uniform_int(rng, 0, 3) == 0) f.push_back({uniform_int(rng, 0, 2), random_doa(rng)});
    std::vector<std::size_t> candidates;
    for (std::size_t t = 0; t < ref.size(); ++t)
      if (!ref[t].empty()) candidates.push_back(t);
    if (candidates.empty()) continue;
    const std::size_t t = candidates[std::size_t(uniform_int(rng, 0, int(candidates.size()) - 1))];
    const auto before = seld_scores(pred, ref);
    pred[t].push_back(ref[t][0]);
    const auto after = seld_scores(pred, ref);
    EXPECT_GT(after.er20, before.er20);
    EXPECT_LE(after.f20, before.f20);
  }
}

TEST(SeldScores, CountsMergeAcrossScenes) {
  Rng rng(9);
  std::vector<SeldOutput> preds, refs;
  SeldOutput pred_all, ref_all;
  for (int i = 0; i < 5; ++i) {
    preds.push_back(random_output(20, 3, rng));
    refs.push_back(random_output(20, 3, rng));
    pred_all.insert(pred_all.end(), preds.back().begin(), preds.back().end());
    ref_all.insert(ref_all.end(), refs.back().begin(), refs.back().end());
  }
  // 20-frame scenes align with 10-frame segments, so concatenation agrees.
  expect_same(seld_scores(preds, refs), seld_scores(pred_all, ref_all));
}

TEST(SeldScores, LocalizationErrorGrowsWithNoise) {
  Rng rng(10);
  const auto ref = random_output(3000, 3, rng);
  EXPECT_EQ(seld_scores(ref, ref).le_cd, 0.0);
  double last = -1.0;
  for (double sigma : {0.0, 5.0, 10.0}) {
    SeldOutput pred = ref;
    for (auto& f : pred)
      for (auto& d : f) d.doa = cone_noise(d.doa, sigma, rng);
    const double le = seld_scores(pred, ref).le_cd;
    EXPECT_GT(le, last);
    last = le;
  }
}

TEST(SeldScores, CsvAndTableFormat) {
  SeldScores s{0.71, 0.21, 29.3, 0.46};
  std::ostringstream os;
  write_scores_csv(s, os);
  EXPECT_EQ(os.str(), "metric,value\ner20,0.710000\nf20,0.210000\nle_cd,29.300000\nlr_cd,0.460000\n");
  const std::string table = format_scores(s, "baseline");
  EXPECT_NE(table.find("0.71"), std::string::npos);
  EXPECT_NE(table.find("21%"), std::string::npos);
  EXPECT_NE(table.find("29.3"), std::string::npos);
  EXPECT_NE(table.find("46%"), std::string::npos);
}

TEST(DoaErrorTable, OracleIsExact) {
  Rng rng(11);
  const auto truth = random_truth(300, 3, 4, rng);
  OracleLocalizer oracle(truth);
  DoaErrorTable table(3);
  accumulate_doa_errors(oracle, blank_features(300), truth, table);
  std::size_t total = 0;
  for (int m = 1; m <= 3; ++m)
    for (int j = 0; j < m; ++j) {
      EXPECT_GT(table.count(m, j), 0u);
      EXPECT_NEAR(table.mean(m, j), 0.0, 1e-6);
      total += table.count(m, j);
    }
  std::size_t expected = 0;
  for (int t = 0; t < 300; ++t) expected += std::size_t(truth.occupancy(t));
  EXPECT_EQ(total, expected);
}

TEST(DoaErrorTable, NoisyOracleMatchesNoiseModel) {
  Rng rng(12);
  const int frames = 7000;
  const auto truth = random_truth(frames, 3, 4, rng);
  OracleLocalizer noisy(truth, 10.0, 99);
  DoaErrorTable table(3);
  accumulate_doa_errors(noisy, blank_features(frames), truth, table);
  // Expected angular error of the noise model, sampled on its own.
  Rng mc(13);
  double expected = 0.0;
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) {
    const Doa d = random_doa(mc);
    expected += angular_distance(cone_noise(d, 10.0, mc), d) / draws;
  }
  for (int m = 1; m <= 3; ++m)
    for (int j = 0; j < m; ++j) {
      ASSERT_GE(table.count(m, j), 2000u);
      EXPECT_NEAR(table.mean(m, j), expected, 1.5) << "noas " << m << " cond " << j;
    }
}

TEST(DoaErrorTable, ZeroPredictionCountsAsOpposite) {
  StackedTracks truth(3, 2, 4);
  truth.at(0, 0) = {Vec3{1, 0, 0}, 1};
  class Zero : public FramePredictor {
   public:
    int outputs() const override { return 3; }
    Mat<double> predict(const FeatureTensor&, const CondSets& c) override {
      return Mat<double>::Zero(Eigen::Index(c.size()), 3);
    }
  } zero;
  DoaErrorTable table(3);
  accumulate_doa_errors(zero, blank_features(2), truth, table);
  EXPECT_EQ(table.count(1, 0), 1u);
  EXPECT_EQ(table.mean(1, 0), 180.0);
}

TEST(DoaErrorTable, CellsAndFormat) {
  DoaErrorTable t(3);
  const double ref[3][3] = {{23, 0, 0}, {20, 33, 0}, {14, 19, 51}};
  for (int m = 1; m <= 3; ++m)
    for (int j = 0; j < m; ++j) t.add(m, j, ref[m - 1][j]);
  EXPECT_THROW(t.add(2, 2, 1.0), Error);
  EXPECT_THROW(t.add(0, 0, 1.0), Error);
  std::ostringstream os;
  write_doa_table_csv(t, os);
  EXPECT_EQ(os.str(),
            "noas,cond,mean_deg,count\n1,0,23.0000,1\n2,0,20.0000,1\n2,1,33.0000,1\n3,0,14.0000,1\n3,1,19.0000,1\n"
            "3,2,51.0000,1\n");
  EXPECT_NE(format_doa_table(t).find("51.0"), std::string::npos);
}

TEST(DoaErrorTable, MedianOfEvenAndOdd) {
  DoaErrorTable t(1);
  for (double v : {5.0, 1.0, 3.0}) t.add(1, 0, v);
  EXPECT_EQ(t.median(1, 0), 3.0);
  t.add(1, 0, 10.0);
  EXPECT_EQ(t.median(1, 0), 4.0);
}

TEST(ConditionalAccuracy, OracleIsPerfect) {
  Rng rng(14);
  const auto truth = random_truth(500, 3, 4, rng);
  OracleClassifier oracle(truth);
  ClassAccuracyCounts acc;
  accumulate_class_accuracy(oracle, blank_features(500), truth, acc);
  EXPECT_GT(acc.events, 500);
  EXPECT_EQ(acc.accuracy(), 1.0);
  EXPECT_EQ(acc.miss_rate(), 0.0);
  EXPECT_EQ(acc.false_alarm_rate(), 0.0);
}

TEST(ConditionalAccuracy, UniformRandomIsChance) {
  Rng rng(15);
  const auto truth = random_truth(3000, 3, 4, rng);
  RandomClassifier random(4, 16);
  ClassAccuracyCounts acc;
  accumulate_class_accuracy(random, blank_features(3000), truth, acc);
  EXPECT_GE(acc.events, 5000);
  EXPECT_NEAR(acc.accuracy(), 0.2, 0.03);
  EXPECT_NEAR(acc.miss_rate(), 0.2, 0.03);
  EXPECT_NEAR(acc.false_alarm_rate(), 0.8, 0.03);
}
