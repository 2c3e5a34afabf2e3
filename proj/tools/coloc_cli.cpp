#include <CLI11.hpp>

#include <iostream>

#include "coloc/experiment.hpp"

using namespace coloc;

namespace {

struct Bindings {
  ExperimentConfig cfg;
  std::vector<int> filters, freq_pool, time_pool;
};

void bind_config(CLI::App& app, Bindings& b) {
  auto& c = b.cfg;
  auto& s = c.scene;
  b.filters = c.net.filters;
  b.freq_pool = c.net.freq_pool;
  b.time_pool = c.net.time_pool;
  const auto add = [&](const std::string& name, auto& field, const std::string& help, const std::string& group) {
    app.add_option("--" + name, field, help)->capture_default_str()->group(group);
  };
  add("data_dir", c.data_dir, "Dataset directory (WAV + meta CSV + manifest)", "Paths");
  add("feat_dir", c.feat_dir, "Feature cache directory", "Paths");
  add("ckpt_dir", c.ckpt_dir, "Checkpoint directory", "Paths");
  add("out_dir", c.out_dir, "Predictions, scores and logs", "Paths");
  add("seed", c.seed, "Master seed", "Run");
  add("jobs", c.jobs, "Worker threads for synth/features/infer/eval", "Run");

  add("train_scenes", c.train_scenes, "Scenes in the train split", "Scenes");
  add("eval_scenes", c.eval_scenes, "Scenes in the eval split", "Scenes");
  add("duration_s", s.duration_s, "Scene length in seconds", "Scenes");
  add("n_classes", s.n_classes, "Number of event classes K", "Scenes");
  add("max_overlap", s.max_overlap, "Maximum simultaneous events", "Scenes");
  add("min_events", s.min_events, "Minimum events per scene", "Scenes");
  add("max_events", s.max_events, "Maximum events per scene", "Scenes");
  add("min_event_s", s.min_event_s, "Shortest event in seconds", "Scenes");
  add("max_event_s", s.max_event_s, "Longest event in seconds", "Scenes");
  add("snr_db", s.snr_db, "Signal-to-noise ratio of the diffuse noise floor", "Scenes");
  add("max_speed_deg_s", s.max_speed_deg_s, "Maximum azimuth speed of moving sources", "Scenes");
  add("min_separation_deg", s.min_separation_deg, "Minimum angle between simultaneous events", "Scenes");
  add("min_gain_db", s.min_gain_db, "Lowest per-event gain", "Scenes");
  add("max_gain_db", s.max_gain_db, "Highest per-event gain", "Scenes");

  add("n_tracks", c.n_tracks, "Stacked-track rows N", "Training");
  add("loc_steps", c.loc_steps, "Localizer training steps", "Training");
  add("cls_steps", c.cls_steps, "Classifier training steps", "Training");
  add("batch_size", c.batch_size, "Chunks per batch", "Training");
  add("chunk_frames", c.chunk_frames, "Label frames per training chunk", "Training");
  add("lr", c.lr, "Adam learning rate", "Training");
  add("focal_gamma", c.focal_gamma, "Focal loss exponent", "Training");
  add("checkpoint_every", c.checkpoint_every, "Steps between checkpoints (0: final only)", "Training");
  add("cond_channels", c.cond_channels, "Conditioning embedding channels", "Training");
  add("volume_perturb", c.volume_perturb, "Random gain in [0.5, 1.5] per chunk", "Training");
  add("spatial_augment", c.spatial_augment, "Random FOA rotation/reflection on every 4th chunk", "Training");
  add("train_perturb_deg", c.train_perturb_deg, "Az/el jitter of conditioning DOAs in training", "Training");

  add("net_filters", b.filters, "Conv filters per block (comma list)", "Network");
  add("net_freq_pool", b.freq_pool, "Frequency max-pool per block (comma list)", "Network");
  add("net_time_pool", b.time_pool, "Time max-pool per block, product 5 (comma list)", "Network");
  add("net_gru_hidden", c.net.gru_hidden, "GRU hidden size", "Network");
  add("net_bidirectional", c.net.bidirectional, "Bidirectional GRU", "Network");
  add("net_fc_size", c.net.fc_size, "Fully connected layer width", "Network");
  for (const char* list : {"--net_filters", "--net_freq_pool", "--net_time_pool"}) app.get_option(list)->delimiter(',');

  add("mode", c.mode, "Inference mode: max_ov2 or max_ov3", "Inference");
  add("predictor", c.predictor, "net (trained checkpoints) or oracle (ground truth)", "Inference");
  add("threshold", c.threshold, "Detection threshold on the output vector length", "Inference");
  add("infer_perturb_deg", c.infer_perturb_deg, "Az/el jitter of conditioning DOAs at inference (0: off)", "Inference");

  add("segment_frames", c.segment_frames, "Label frames per scoring segment", "Metrics");
  add("match_deg", c.match_deg, "Angular threshold of a true positive", "Metrics");
}

ExperimentConfig resolve(const Bindings& b) {
  ExperimentConfig c = b.cfg;
  c.net.filters = b.filters;
  c.net.freq_pool = b.freq_pool;
  c.net.time_pool = b.time_pool;
  c.validate();
  return c;
}

void echo_config(const CLI::App& app, const std::vector<std::string>& dirs) {
  const std::string text = app.config_to_str(true, false);
  for (const auto& d : dirs) write_text(fs::path(d) / "config.ini", text);
}

void print_reports(const std::string& label, const EvalReport& r) {
  std::cout << format_scores(r.scores, label);
  if (r.doa_table) std::cout << "\nDOA error by active sources and conditioning size\n" << format_doa_table(*r.doa_table);
  if (r.accuracy)
    std::cout << "\nCAcc " << metrics_detail::fmt(100.0 * r.accuracy->accuracy(), 1) << "%  miss "
              << metrics_detail::fmt(100.0 * r.accuracy->miss_rate(), 1) << "%  false alarm "
              << metrics_detail::fmt(100.0 * r.accuracy->false_alarm_rate(), 1) << "%  (" << r.accuracy->events
              << " events)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Location-conditioned sound event localization and detection"};
  app.set_config("--config", "", "Flat `key = value` file; command-line options override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();
  Bindings b;
  bind_config(app, b);
  std::string pred_dir;

  auto* synth = app.add_subcommand("synth", "Generate the train/eval scenes");
  auto* features = app.add_subcommand("features", "Compute the feature cache");
  auto* train_loc = app.add_subcommand("train-loc", "Train the localizer");
  auto* train_cls = app.add_subcommand("train-cls", "Train the classifier");
  auto* infer = app.add_subcommand("infer", "Run inference on the eval split");
  auto* eval = app.add_subcommand("eval", "Score predictions against the eval meta");
  eval->add_option("--pred_dir", pred_dir, "Prediction directory (default <out_dir>/pred_<mode>)");
  auto* run_all = app.add_subcommand("run-all", "synth, features, both trainings, infer and eval in both modes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ExperimentConfig cfg = resolve(b);
    if (*synth) {
      echo_config(app, {cfg.data_dir});
      cmd_synth(cfg);
    } else if (*features) {
      echo_config(app, {cfg.feat_dir});
      cmd_features(cfg);
    } else if (*train_loc || *train_cls) {
      echo_config(app, {cfg.ckpt_dir, cfg.out_dir});
      cmd_train(cfg, *train_loc ? ModelKind::Localizer : ModelKind::Classifier);
    } else if (*infer) {
      echo_config(app, {cfg.out_dir});
      cmd_infer(cfg);
    } else if (*eval) {
      echo_config(app, {cfg.out_dir});
      print_reports(cfg.mode, cmd_eval(cfg, pred_dir));
    } else if (*run_all) {
      echo_config(app, {cfg.data_dir, cfg.feat_dir, cfg.ckpt_dir, cfg.out_dir});
      cmd_synth(cfg);
      cmd_features(cfg);
      if (cfg.predictor == "net") {
        cmd_train(cfg, ModelKind::Localizer);
        cmd_train(cfg, ModelKind::Classifier);
      }
      for (const std::string mode : {"max_ov2", "max_ov3"}) {
        ExperimentConfig m = cfg;
        m.mode = mode;
        if (parse_mode(mode) > m.n_tracks) continue;
        cmd_infer(m);
        const EvalReport r = cmd_eval(m, {}, mode == "max_ov3");
        print_reports(mode, r);
        std::cout << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
