#pragma once

#include <zlib.h>

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/features.hpp"
#include "coloc/inference.hpp"
#include "coloc/metrics.hpp"
#include "coloc/model.hpp"
#include "coloc/scenes.hpp"
#include "coloc/tracks.hpp"
#include "coloc/training.hpp"
#include "coloc/wav.hpp"

namespace coloc {

namespace fs = std::filesystem;

/// Every knob of an experiment run. Paths are relative to the working
/// directory unless absolute.
struct ExperimentConfig {
  std::string data_dir = "data";
  std::string feat_dir = "features";
  std::string ckpt_dir = "checkpoints";
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  int jobs = 1;

  int train_scenes = 160;
  int eval_scenes = 40;
  SceneConfig scene;

  int n_tracks = 3;
  int loc_steps = 3000;
  int cls_steps = 3000;
  int batch_size = 16;
  int chunk_frames = 10;
  double lr = 5e-4;
  double focal_gamma = 1.0;
  int checkpoint_every = 500;
  int cond_channels = 5;
  bool volume_perturb = true;
  bool spatial_augment = true;
  double train_perturb_deg = 5.0;
  NetConfig net;

  std::string mode = "max_ov3";
  std::string predictor = "net";  // net | oracle
  double threshold = 0.5;
  double infer_perturb_deg = 0.0;

  int segment_frames = 10;
  double match_deg = 20.0;

  TrainConfig train_config(ModelKind kind) const {
    TrainConfig t;
    t.kind = kind;
    t.steps = kind == ModelKind::Localizer ? loc_steps : cls_steps;
    t.lr = lr;
    t.focal_gamma = focal_gamma;
    t.seed = derive_seed(seed, {kind == ModelKind::Localizer ? 0x10cU : 0xc15U});
    t.checkpoint_every = checkpoint_every;
    t.cond_channels = cond_channels;
    t.batch.batch_size = batch_size;
    t.batch.chunk_frames = chunk_frames;
    t.batch.n_tracks = n_tracks;
    t.batch.n_classes = scene.n_classes;
    t.batch.volume_perturb = volume_perturb;
    t.batch.spatial_augment = spatial_augment;
    t.batch.perturb_deg = train_perturb_deg;
    t.net = net;
    return t;
  }

  SsgOptions ssg_options() const {
    SsgOptions o;
    o.n_tracks = n_tracks;
    o.n_classes = scene.n_classes;
    o.max_steps = parse_mode(mode);
    o.threshold = threshold;
    o.perturb_deg = infer_perturb_deg;
    o.seed = derive_seed(seed, {0x1f});
    return o;
  }

  void validate() const {
    scene.validate();
    if (train_scenes < 0 || eval_scenes < 0) throw Error("config: scene counts must be >= 0");
    if (jobs < 1) throw Error("config: jobs must be >= 1");
    if (n_tracks < 2) throw Error("config: n_tracks must be >= 2");
    if (parse_mode(mode) > n_tracks) throw Error("config: mode needs more tracks than n_tracks");
    if (predictor != "net" && predictor != "oracle") throw Error("config: predictor must be 'net' or 'oracle'");
    if (segment_frames < 1) throw Error("config: segment_frames must be >= 1");
    train_config(ModelKind::Localizer).validate();
    train_config(ModelKind::Classifier).validate();
  }
};

// ------------------------------------------------------------ utilities

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
/// failure after all workers stop.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int workers = std::max(1, std::min(jobs, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first;
  std::mutex m;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!first) first = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

inline void log_line(const std::string& s) {
  static std::mutex m;
  std::lock_guard<std::mutex> lock(m);
  std::cerr << s << std::endl;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Error("cannot write " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// CRC-32 of every regular file under a directory, keyed by relative path.
inline std::map<std::string, std::uint32_t> directory_checksums(const fs::path& dir) {
  std::map<std::string, std::uint32_t> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string data = read_text(e.path());
    out[fs::relative(e.path(), dir).generic_string()] =
        std::uint32_t(crc32(0L, reinterpret_cast<const Bytef*>(data.data()), uInt(data.size())));
  }
  return out;
}

// ------------------------------------------------------------ dataset

inline const char* split_name(int split) { return split == 0 ? "train" : "eval"; }

inline std::string scene_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", index);
  return buf;
}

struct SceneEntry {
  std::string split;
  int index = 0;
  std::uint64_t seed = 0;
  int n_frames = 0;
  std::string stem() const { return scene_stem(index); }
};

inline constexpr int kMaxSceneAttempts = 50;

/// Generates scene `index` of a split; an infeasible draw is retried with
/// the next derived seed. Returns the scene and the seed that produced it.
inline std::pair<Scene, std::uint64_t> synth_scene(const ExperimentConfig& cfg, int split, int index) {
  std::string last;
  for (int attempt = 0; attempt < kMaxSceneAttempts; ++attempt) {
    const std::uint64_t s = derive_seed(cfg.seed, {0x5ce, std::uint64_t(split), std::uint64_t(index), std::uint64_t(attempt)});
    Rng rng(s);
    try {
      return {generate_scene(cfg.scene, rng), s};
    } catch (const Error& e) {
      last = e.what();
    }
  }
  throw Error("synth: scene " + std::to_string(index) + " infeasible after " + std::to_string(kMaxSceneAttempts) +
              " seeds: " + last);
}

inline nlohmann::json scene_config_json(const SceneConfig& s) {
  return {{"duration_s", s.duration_s},       {"n_classes", s.n_classes},
          {"max_overlap", s.max_overlap},     {"min_events", s.min_events},
          {"max_events", s.max_events},       {"min_event_s", s.min_event_s},
          {"max_event_s", s.max_event_s},     {"snr_db", s.snr_db},
          {"max_speed_deg_s", s.max_speed_deg_s}, {"min_separation_deg", s.min_separation_deg},
          {"min_gain_db", s.min_gain_db},     {"max_gain_db", s.max_gain_db}};
}

/// Writes <data_dir>/{train,eval}/scene_NNNN.{wav,csv} and manifest.json.
inline std::vector<SceneEntry> cmd_synth(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path root(cfg.data_dir);
  std::vector<SceneEntry> entries;
  for (int split = 0; split < 2; ++split) {
    const int n = split == 0 ? cfg.train_scenes : cfg.eval_scenes;
    fs::create_directories(root / split_name(split));
    std::vector<SceneEntry> part(static_cast<std::size_t>(n));
    parallel_for(n, cfg.jobs, [&](int i) {
      auto [scene, seed] = synth_scene(cfg, split, i);
      const fs::path stem = root / split_name(split) / scene_stem(i);
      write_wav(stem.string() + ".wav", to_wav_acn(scene.audio));
      write_meta_csv(scene.events, stem.string() + ".csv");
      part[std::size_t(i)] = {split_name(split), i, seed, scene.n_frames};
    });
    entries.insert(entries.end(), part.begin(), part.end());
  }
  nlohmann::json man;
  man["seed"] = cfg.seed;
  man["scene"] = scene_config_json(cfg.scene);
  man["scenes"] = nlohmann::json::array();
  for (const auto& e : entries)
    man["scenes"].push_back({{"split", e.split}, {"name", e.stem()}, {"seed", e.seed}, {"n_frames", e.n_frames}});
  write_text(root / "manifest.json", man.dump(2) + "\n");
  log_line("synth: " + std::to_string(entries.size()) + " scenes in " + root.string());
  return entries;
}

inline std::vector<SceneEntry> read_manifest(const ExperimentConfig& cfg) {
  const fs::path path = fs::path(cfg.data_dir) / "manifest.json";
  if (!fs::exists(path)) throw Error("dataset manifest missing: " + path.string() + " (run synth first)");
  nlohmann::json man;
  try {
    man = nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("dataset manifest " + path.string() + ": " + e.what());
  }
  if (man.value("scene", nlohmann::json{}).value("n_classes", -1) != cfg.scene.n_classes)
    throw Error("dataset manifest " + path.string() + ": n_classes differs from the config");
  std::vector<SceneEntry> out;
  for (const auto& s : man.at("scenes")) {
    const std::string name = s.at("name").get<std::string>();
    out.push_back({s.at("split").get<std::string>(), std::stoi(name.substr(6)), s.at("seed").get<std::uint64_t>(),
                   s.at("n_frames").get<int>()});
  }
  return out;
}

inline std::vector<SceneEntry> split_entries(const std::vector<SceneEntry>& all, const std::string& split) {
  std::vector<SceneEntry> out;
  for (const auto& e : all)
    if (e.split == split) out.push_back(e);
  return out;
}

inline fs::path scene_path(const ExperimentConfig& cfg, const SceneEntry& e, const char* ext) {
  return fs::path(cfg.data_dir) / e.split / (e.stem() + ext);
}
inline fs::path feature_path(const ExperimentConfig& cfg, const SceneEntry& e) {
  return fs::path(cfg.feat_dir) / e.split / (e.stem() + ".tensor");
}

/// One feature tensor per scene; existing files are kept.
inline void cmd_features(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto entries = read_manifest(cfg);
  std::atomic<int> hits{0};
  parallel_for(int(entries.size()), cfg.jobs, [&](int i) {
    const auto& e = entries[std::size_t(i)];
    const fs::path out = feature_path(cfg, e);
    if (fs::exists(out)) {
      log_line("features: cache hit, skipping " + out.string());
      ++hits;
      return;
    }
    const fs::path wav = scene_path(cfg, e, ".wav");
    if (!fs::exists(wav)) throw Error("features: missing scene " + wav.string());
    fs::create_directories(out.parent_path());
    const fs::path tmp = out.string() + ".part";
    write_features(tmp.string(), assemble_features(from_wav_acn(read_wav(wav.string()))));
    fs::rename(tmp, out);
  });
  log_line("features: " + std::to_string(entries.size()) + " scenes, " + std::to_string(hits.load()) + " cached");
}

inline SceneFeatures load_scene(const ExperimentConfig& cfg, const SceneEntry& e) {
  SceneFeatures s;
  const fs::path feat = feature_path(cfg, e);
  if (!fs::exists(feat)) throw Error("missing feature cache " + feat.string() + " (run features first)");
  s.features = read_features(feat.string());
  s.events = read_meta_csv(scene_path(cfg, e, ".csv").string(), cfg.scene.n_classes);
  s.n_frames = e.n_frames;
  if (s.features.label_frames() != s.n_frames)
    throw Error("feature cache " + feat.string() + " covers " + std::to_string(s.features.label_frames()) +
                " label frames, scene has " + std::to_string(s.n_frames));
  return s;
}

inline std::vector<SceneFeatures> load_split(const ExperimentConfig& cfg, const std::string& split) {
  const auto entries = split_entries(read_manifest(cfg), split);
  std::vector<SceneFeatures> out(entries.size());
  parallel_for(int(entries.size()), cfg.jobs, [&](int i) { out[std::size_t(i)] = load_scene(cfg, entries[std::size_t(i)]); });
  return out;
}

inline StackedTracks reference_tracks(const ExperimentConfig& cfg, const SceneFeatures& s) {
  return stack_tracks(s.events, cfg.n_tracks, s.n_frames, cfg.scene.n_classes, {1e-6});
}

// ------------------------------------------------------------ training

inline const char* component_dir(ModelKind k) { return k == ModelKind::Localizer ? "localizer" : "classifier"; }

/// Trains one component on the train split; checkpoints go to
/// <ckpt_dir>/<component>, the loss log to <out_dir>/loss_<component>.csv.
inline TrainResult cmd_train(const ExperimentConfig& cfg, ModelKind kind) {
  cfg.validate();
  const auto scenes = load_split(cfg, "train");
  if (scenes.empty()) throw Error("train: the train split is empty");
  const TrainConfig tc = cfg.train_config(kind);
  fs::create_directories(cfg.out_dir);
  const std::string name = component_dir(kind);
  const int every = std::max(1, tc.steps / 10);
  auto res = train(tc, scenes, (fs::path(cfg.ckpt_dir) / name).string(),
                   (fs::path(cfg.out_dir) / ("loss_" + name + ".csv")).string(), [&](const StepReport& r) {
                     if (r.step % every == 0) log_line("train-" + name + ": step " + std::to_string(r.step) + " loss " +
                                                       metrics_detail::fmt(r.total, 4));
                   });
  log_line("train-" + name + ": " + std::to_string(tc.steps) + " steps in " + metrics_detail::fmt(res.seconds, 1) + " s");
  return res;
}

// ------------------------------------------------------------ inference

inline fs::path prediction_dir(const ExperimentConfig& cfg, const std::string& mode) {
  return fs::path(cfg.out_dir) / ("pred_" + mode);
}

struct Predictors {
  std::unique_ptr<FramePredictor> loc, cls;
};

/// Fresh predictors for one eval scene.
inline Predictors make_predictors(const ExperimentConfig& cfg, const StackedTracks& truth,
                                  const ConditionedModel<float>* loc, const ConditionedModel<float>* cls) {
  if (cfg.predictor == "oracle") return {std::make_unique<OracleLocalizer>(truth), std::make_unique<OracleClassifier>(truth)};
  if (!loc || !cls) throw Error("net predictors need trained checkpoints");
  return {std::make_unique<NetPredictor>(*loc), std::make_unique<NetPredictor>(*cls)};
}

struct LoadedModels {
  std::optional<ConditionedModel<float>> loc, cls;
};

inline LoadedModels load_models(const ExperimentConfig& cfg) {
  LoadedModels m;
  if (cfg.predictor != "net") return m;
  m.loc = load_checkpoint((fs::path(cfg.ckpt_dir) / component_dir(ModelKind::Localizer)).string());
  m.cls = load_checkpoint((fs::path(cfg.ckpt_dir) / component_dir(ModelKind::Classifier)).string());
  if (m.loc->kind() != ModelKind::Localizer || m.cls->kind() != ModelKind::Classifier)
    throw Error("checkpoints in " + cfg.ckpt_dir + " hold the wrong model kinds");
  if (m.cls->n_classes() != cfg.scene.n_classes)
    throw Error("classifier checkpoint has " + std::to_string(m.cls->n_classes()) + " classes, config " +
                std::to_string(cfg.scene.n_classes));
  return m;
}

/// Runs the pipeline on every eval scene and writes one prediction CSV per
/// scene to <out_dir>/pred_<mode>.
inline std::vector<SeldOutput> cmd_infer(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto entries = split_entries(read_manifest(cfg), "eval");
  const auto models = load_models(cfg);
  const fs::path dir = prediction_dir(cfg, cfg.mode);
  fs::create_directories(dir);
  std::vector<SeldOutput> outputs(entries.size());
  parallel_for(int(entries.size()), cfg.jobs, [&](int i) {
    const auto& e = entries[std::size_t(i)];
    const SceneFeatures s = load_scene(cfg, e);
    auto p = make_predictors(cfg, reference_tracks(cfg, s), models.loc ? &*models.loc : nullptr,
                             models.cls ? &*models.cls : nullptr);
    SsgOptions o = cfg.ssg_options();
    o.seed = derive_seed(o.seed, {std::uint64_t(i)});
    outputs[std::size_t(i)] = run_pipeline(*p.loc, *p.cls, s.features, o).output;
    write_meta_csv(seld_to_events(outputs[std::size_t(i)]), (dir / (e.stem() + ".csv")).string());
  });
  log_line("infer: " + std::to_string(entries.size()) + " scenes (" + cfg.mode + ", " + cfg.predictor + ") -> " +
           dir.string());
  return outputs;
}

// ------------------------------------------------------------ evaluation

struct EvalReport {
  SeldScores scores;
  std::optional<DoaErrorTable> doa_table;
  std::optional<ClassAccuracyCounts> accuracy;
};

inline void write_accuracy_csv(const ClassAccuracyCounts& a, std::ostream& out) {
  using metrics_detail::fmt;
  out << "metric,value\n"
      << "cacc," << fmt(a.accuracy(), 6) << "\n"
      << "miss_rate," << fmt(a.miss_rate(), 6) << "\n"
      << "false_alarm_rate," << fmt(a.false_alarm_rate(), 6) << "\n"
      << "events," << a.events << "\n";
}

/// Scores <pred_dir> (default <out_dir>/pred_<mode>) against the eval meta.
/// With `predictor_tables`, also fills the DOA error table and conditional
/// accuracy with the configured predictors.
inline EvalReport cmd_eval(const ExperimentConfig& cfg, const std::string& pred_dir = {}, bool predictor_tables = true) {
  cfg.validate();
  const auto entries = split_entries(read_manifest(cfg), "eval");
  const fs::path dir = pred_dir.empty() ? prediction_dir(cfg, cfg.mode) : fs::path(pred_dir);
  std::vector<SeldCounts> counts(entries.size());
  parallel_for(int(entries.size()), cfg.jobs, [&](int i) {
    const auto& e = entries[std::size_t(i)];
    const fs::path pred = dir / (e.stem() + ".csv");
    if (!fs::exists(pred)) throw Error("eval: missing prediction " + pred.string());
    const auto ref = events_to_seld(read_meta_csv(scene_path(cfg, e, ".csv").string(), cfg.scene.n_classes), e.n_frames);
    const auto out = events_to_seld(read_meta_csv(pred.string(), cfg.scene.n_classes), e.n_frames);
    counts[std::size_t(i)] = seld_counts(out, ref, {cfg.segment_frames, cfg.match_deg});
  });
  SeldCounts total;
  for (const auto& c : counts) total += c;
  EvalReport rep;
  rep.scores = seld_scores(total);
  fs::create_directories(cfg.out_dir);
  {
    std::ostringstream os;
    write_scores_csv(rep.scores, os);
    write_text(fs::path(cfg.out_dir) / ("scores_" + (pred_dir.empty() ? cfg.mode : dir.filename().string()) + ".csv"), os.str());
  }
  if (!predictor_tables) return rep;

  const auto models = load_models(cfg);
  std::vector<DoaErrorTable> tables(entries.size(), DoaErrorTable(cfg.n_tracks));
  std::vector<ClassAccuracyCounts> accs(entries.size());
  parallel_for(int(entries.size()), cfg.jobs, [&](int i) {
    const SceneFeatures s = load_scene(cfg, entries[std::size_t(i)]);
    const StackedTracks truth = reference_tracks(cfg, s);
    auto p = make_predictors(cfg, truth, models.loc ? &*models.loc : nullptr, models.cls ? &*models.cls : nullptr);
    accumulate_doa_errors(*p.loc, s.features, truth, tables[std::size_t(i)]);
    accumulate_class_accuracy(*p.cls, s.features, truth, accs[std::size_t(i)]);
  });
  rep.doa_table = DoaErrorTable(cfg.n_tracks);
  rep.accuracy = ClassAccuracyCounts{};
  for (std::size_t i = 0; i < entries.size(); ++i) {
    *rep.doa_table += tables[i];
    *rep.accuracy += accs[i];
  }
  std::ostringstream t, a;
  write_doa_table_csv(*rep.doa_table, t);
  write_accuracy_csv(*rep.accuracy, a);
  write_text(fs::path(cfg.out_dir) / "doa_table.csv", t.str());
  write_text(fs::path(cfg.out_dir) / "cacc.csv", a.str());
  return rep;
}

}  // namespace coloc
