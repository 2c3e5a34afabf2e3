#include <gtest/gtest.h>

#include <unistd.h>

#include "coloc/experiment.hpp"

using namespace coloc;

namespace {

ExperimentConfig tiny_config(const fs::path& root) {
  ExperimentConfig c;
  c.data_dir = (root / "data").string();
  c.feat_dir = (root / "features").string();
  c.ckpt_dir = (root / "ckpt").string();
  c.out_dir = (root / "out").string();
  c.train_scenes = 2;
  c.eval_scenes = 2;
  c.scene.n_classes = 4;
  c.scene.duration_s = 2.0;
  c.scene.max_events = 3;
  c.scene.max_event_s = 1.0;
  c.loc_steps = 3;
  c.cls_steps = 3;
  c.batch_size = 2;
  c.net.filters = {4, 4};
  c.net.gru_hidden = 8;
  c.net.fc_size = 8;
  c.checkpoint_every = 0;
  return c;
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("coloc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  fs::path path_;
};

}  // namespace

TEST(Experiment, ZeroScenesWritesManifestOnly) {
  TempDir tmp;
  auto cfg = tiny_config(tmp.path());
  cfg.train_scenes = cfg.eval_scenes = 0;
  EXPECT_TRUE(cmd_synth(cfg).empty());
  const auto files = directory_checksums(cfg.data_dir);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files.begin()->first, "manifest.json");
  EXPECT_TRUE(read_manifest(cfg).empty());
}

TEST(Experiment, SynthIsReproducible) {
  TempDir a, b;
  auto ca = tiny_config(a.path()), cb = tiny_config(b.path());
  cb.jobs = 2;
  cmd_synth(ca);
  cmd_synth(cb);
  const auto sa = directory_checksums(ca.data_dir), sb = directory_checksums(cb.data_dir);
  EXPECT_EQ(sa.size(), 9u);
  EXPECT_EQ(sa, sb);
  cb.seed = 2;
  cmd_synth(cb);
  EXPECT_NE(directory_checksums(cb.data_dir), sa);
}

TEST(Experiment, FeatureCacheShapeHitAndCorruption) {
  TempDir tmp;
  auto cfg = tiny_config(tmp.path());
  cmd_synth(cfg);
  cmd_features(cfg);
  const auto entries = read_manifest(cfg);
  const fs::path f = feature_path(cfg, entries.front());
  const auto feat = read_features(f.string());
  EXPECT_EQ(feat.channels, 11);
  EXPECT_EQ(feat.frames, 100);
  EXPECT_EQ(feat.bins, 513);
  const auto before = fs::last_write_time(f);
  cmd_features(cfg);
  EXPECT_EQ(fs::last_write_time(f), before);

  std::string bytes = read_text(f);
  bytes[bytes.size() / 2] ^= 0x5a;
  write_text(f, bytes);
  try {
    load_scene(cfg, entries.front());
    FAIL() << "corruption not detected";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(f.filename().string()), std::string::npos) << e.what();
  }
}

TEST(Experiment, MissingInputsAreReported) {
  TempDir tmp;
  auto cfg = tiny_config(tmp.path());
  EXPECT_THROW(cmd_features(cfg), Error);
  cmd_synth(cfg);
  fs::remove(scene_path(cfg, read_manifest(cfg).front(), ".wav"));
  EXPECT_THROW(cmd_features(cfg), Error);
}

TEST(Experiment, EvalOfReferenceIsPerfect) {
  TempDir tmp;
  auto cfg = tiny_config(tmp.path());
  cmd_synth(cfg);
  const auto rep = cmd_eval(cfg, (fs::path(cfg.data_dir) / "eval").string(), false);
  EXPECT_EQ(rep.scores.er20, 0.0);
  EXPECT_EQ(rep.scores.f20, 1.0);
  EXPECT_EQ(rep.scores.le_cd, 0.0);
  EXPECT_EQ(rep.scores.lr_cd, 1.0);
}

TEST(Experiment, OracleInferenceModesArePrefixes) {
  TempDir tmp;
  auto cfg = tiny_config(tmp.path());
  cfg.predictor = "oracle";
  cfg.scene.max_overlap = 3;
  cmd_synth(cfg);
  cmd_features(cfg);
  cfg.mode = "max_ov2";
  const auto two = cmd_infer(cfg);
  cfg.mode = "max_ov3";
  const auto three = cmd_infer(cfg);
  for (std::size_t s = 0; s < two.size(); ++s)
    for (std::size_t t = 0; t < two[s].size(); ++t) {
      ASSERT_LE(two[s][t].size(), three[s][t].size());
      EXPECT_TRUE(std::equal(two[s][t].begin(), two[s][t].end(), three[s][t].begin()));
    }
  // The CSVs carry the same prefix relation.
  const auto entries = split_entries(read_manifest(cfg), "eval");
  for (const auto& e : entries) {
    const auto a = events_to_seld(read_meta_csv((prediction_dir(cfg, "max_ov2") / (e.stem() + ".csv")).string(), 4), e.n_frames);
    const auto b = events_to_seld(read_meta_csv((prediction_dir(cfg, "max_ov3") / (e.stem() + ".csv")).string(), 4), e.n_frames);
    for (std::size_t t = 0; t < a.size(); ++t) {
      ASSERT_LE(a[t].size(), b[t].size());
      for (std::size_t i = 0; i < a[t].size(); ++i) EXPECT_EQ(a[t][i].class_id, b[t][i].class_id);
    }
  }
  const auto rep = cmd_eval(cfg);
  EXPECT_EQ(rep.scores.er20, 0.0);
  EXPECT_EQ(rep.accuracy->accuracy(), 1.0);
}

TEST(Experiment, TrainAndInferAreReproducible) {
  TempDir a, b;
  for (const auto* dir : {&a, &b}) {
    auto cfg = tiny_config(dir->path());
    cmd_synth(cfg);
    cmd_features(cfg);
    cmd_train(cfg, ModelKind::Localizer);
    cmd_train(cfg, ModelKind::Classifier);
    cmd_infer(cfg);
  }
  const auto ca = tiny_config(a.path()), cb = tiny_config(b.path());
  for (auto member : {&ExperimentConfig::feat_dir, &ExperimentConfig::ckpt_dir, &ExperimentConfig::out_dir}) {
    const auto sa = directory_checksums(ca.*member);
    EXPECT_FALSE(sa.empty());
    EXPECT_EQ(sa, directory_checksums(cb.*member));
  }
}

TEST(Experiment, ConfigValidation) {
  ExperimentConfig c;
  c.mode = "max_ov4";
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.predictor = "magic";
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.net.time_pool = {2, 2};
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.jobs = 0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(ExperimentConfig{}.validate());
}

TEST(Experiment, ParallelForPropagatesFailures) {
  std::vector<int> hit(50, 0);
  parallel_for(50, 4, [&](int i) { hit[std::size_t(i)] = 1; });
  EXPECT_EQ(std::count(hit.begin(), hit.end(), 1), 50);
  EXPECT_THROW(parallel_for(10, 3, [](int i) {
                 if (i == 7) throw Error("boom");
               }),
               Error);
}
