#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/features.hpp"
#include "coloc/geometry.hpp"
#include "coloc/nn.hpp"
#include "coloc/rng.hpp"
#include "coloc/tensor_io.hpp"

namespace coloc {

using nn::Mat;
using nn::ParamBundle;

enum class HeadKind { Tanh, Softmax };

inline std::string to_string(HeadKind h) { return h == HeadKind::Tanh ? "tanh" : "softmax"; }
inline HeadKind parse_head(const std::string& s) {
  if (s == "tanh") return HeadKind::Tanh;
  if (s == "softmax") return HeadKind::Softmax;
  throw Error("unknown head kind '" + s + "' (expected tanh or softmax)");
}

/// CRNN template: conv blocks (3x3, ReLU, max-pool) -> GRU -> dense -> output dense.
struct NetConfig {
  int in_channels = kFeatureChannels + 5;
  int freq_bins = kFreqBins;
  std::vector<int> filters{16, 16};
  std::vector<int> freq_pool{8, 4};
  std::vector<int> time_pool{5, 1};
  int gru_hidden = 32;
  bool bidirectional = false;
  int fc_size = 32;
  int outputs = 3;
  HeadKind head = HeadKind::Tanh;

  int time_pool_total() const {
    int p = 1;
    for (int v : time_pool) p *= v;
    return p;
  }
  int pooled_freq() const {
    int f = freq_bins;
    for (int v : freq_pool) f /= v;
    return f;
  }
  int gru_input() const { return filters.empty() ? 0 : filters.back() * pooled_freq(); }

  void validate() const {
    if (in_channels < 1) throw Error("NetConfig: in_channels must be >= 1");
    if (filters.empty()) throw Error("NetConfig: need at least one conv block");
    if (freq_pool.size() != filters.size() || time_pool.size() != filters.size())
      throw Error("NetConfig: filters, freq_pool and time_pool must have the same length");
    for (std::size_t i = 0; i < filters.size(); ++i)
      if (filters[i] < 1 || freq_pool[i] < 1 || time_pool[i] < 1) throw Error("NetConfig: sizes must be positive");
    if (time_pool_total() != kFramesPerLabel)
      throw Error("NetConfig: time-pool factors must multiply to " + std::to_string(kFramesPerLabel));
    if (pooled_freq() < 1) throw Error("NetConfig: frequency pooling leaves no bins");
    if (gru_hidden < 1 || fc_size < 1 || outputs < 1) throw Error("NetConfig: sizes must be positive");
  }

  nlohmann::json to_json() const {
    return {{"in_channels", in_channels}, {"freq_bins", freq_bins},   {"filters", filters},
            {"freq_pool", freq_pool},     {"time_pool", time_pool},   {"gru_hidden", gru_hidden},
            {"bidirectional", bidirectional}, {"fc_size", fc_size},   {"outputs", outputs},
            {"head", to_string(head)}};
  }
  static NetConfig from_json(const nlohmann::json& j) {
    NetConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.freq_bins = j.at("freq_bins").get<int>();
    c.filters = j.at("filters").get<std::vector<int>>();
    c.freq_pool = j.at("freq_pool").get<std::vector<int>>();
    c.time_pool = j.at("time_pool").get<std::vector<int>>();
    c.gru_hidden = j.at("gru_hidden").get<int>();
    c.bidirectional = j.at("bidirectional").get<bool>();
    c.fc_size = j.at("fc_size").get<int>();
    c.outputs = j.at("outputs").get<int>();
    c.head = parse_head(j.at("head").get<std::string>());
    c.validate();
    return c;
  }
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

// ------------------------------------------------------------ condition encoder

/// Single dense layer 3 -> c with tanh.
template <typename T>
class ConditionEncoder {
 public:
  explicit ConditionEncoder(int c = 5) : c_(c) {
    if (c < 1) throw Error("ConditionEncoder: output size must be >= 1");
    w_ = params.add("weight", {c, 3});
    b_ = params.add("bias", {c});
  }

  int outputs() const { return c_; }
  std::size_t parameter_count() const { return params.parameter_count(); }

  void init(Rng& rng) {
    for (auto& e : params) nn::init_uniform_fan_in(e.data, 3, rng);
  }

  nn::Vec<T> encode(const Doa& d) const {
    nn::Vec<T> x(3);
    x << T(d.x), T(d.y), T(d.z);
    nn::Vec<T> a = params.mat(w_) * x + params.vec(b_);
    return a.array().tanh().matrix();
  }

  /// Mean of member encodings; the empty set encodes the origin.
  nn::Vec<T> encode_set(const std::vector<Doa>& set) const {
    if (set.empty()) return encode(Doa{});
    nn::Vec<T> acc = nn::Vec<T>::Zero(c_);
    for (const auto& d : set) acc += encode(d);
    return acc / T(set.size());
  }

  /// Accumulates parameter gradients of encode_set given dL/d(output).
  void backward_set(const std::vector<Doa>& set, const nn::Vec<T>& dout, ParamBundle<T>& grads) const {
    const std::vector<Doa> members = set.empty() ? std::vector<Doa>{Doa{}} : set;
    const T scale = T(1) / T(members.size());
    auto dW = grads.mat(w_);
    auto db = grads.vec(b_);
    for (const auto& d : members) {
      const nn::Vec<T> e = encode(d);
      const nn::Vec<T> da = (dout * scale).cwiseProduct((nn::Vec<T>::Ones(c_) - e.cwiseProduct(e)));
      db += da;
      for (int i = 0; i < c_; ++i) {
        dW(i, 0) += da[i] * T(d.x);
        dW(i, 1) += da[i] * T(d.y);
        dW(i, 2) += da[i] * T(d.z);
      }
    }
  }

  ParamBundle<T> params;

 private:
  int c_;
  std::size_t w_, b_;
};

/// Encodes one conditioning set per label frame: T x c.
template <typename T>
Mat<T> encode_condition(const ConditionEncoder<T>& enc, const std::vector<std::vector<Doa>>& sets) {
  Mat<T> out(Eigen::Index(sets.size()), enc.outputs());
  for (std::size_t i = 0; i < sets.size(); ++i) out.row(Eigen::Index(i)) = enc.encode_set(sets[i]).transpose();
  return out;
}

/// Tiles each label frame's vector over its feature frames and all bins.
/// Result is c x (t * F), channel-major, column index t * F + f.
template <typename T>
Mat<T> broadcast_condition(const Mat<T>& cond, int t, int F) {
  const int T_ = int(cond.rows());
  if (T_ < 1 || t % T_ != 0) throw Error("broadcast_condition: t is not a multiple of T");
  const int rep = t / T_;
  Mat<T> out(cond.cols(), Eigen::Index(t) * F);
  for (Eigen::Index c = 0; c < cond.cols(); ++c)
    for (int tt = 0; tt < t; ++tt) out.row(c).segment(Eigen::Index(tt) * F, F).setConstant(cond(tt / rep, c));
  return out;
}

// ------------------------------------------------------------ predictor net

template <typename T>
struct NetTrace {
  struct Block {
    int H = 0, W = 0;
    Mat<T> in, out;
    std::vector<int> argmax;
  };
  std::vector<Block> blocks;
  int pooled_frames = 0;
  std::vector<nn::GruTrace<T>> gru;  // one per direction
  Mat<T> gru_out, fc_out, y;
  bool valid = false;
};

template <typename T>
class PredictorNet {
 public:
  PredictorNet() : PredictorNet(NetConfig{}) {}
  explicit PredictorNet(NetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    int cin = cfg_.in_channels;
    for (std::size_t b = 0; b < cfg_.filters.size(); ++b) {
      const std::string p = "conv" + std::to_string(b);
      conv_w_.push_back(params.add(p + ".weight", {cfg_.filters[b], cin * 9}));
      conv_b_.push_back(params.add(p + ".bias", {cfg_.filters[b]}));
      cin = cfg_.filters[b];
    }
    const int D = cfg_.gru_input(), H = cfg_.gru_hidden;
    for (int dir = 0; dir < (cfg_.bidirectional ? 2 : 1); ++dir) {
      const std::string p = dir == 0 ? "gru" : "gru_rev";
      gru_.push_back({params.add(p + ".w_ih", {3 * H, D}), params.add(p + ".w_hh", {3 * H, H}),
                      params.add(p + ".b_ih", {3 * H}), params.add(p + ".b_hh", {3 * H})});
    }
    fc_w_ = params.add("fc.weight", {cfg_.fc_size, H * (cfg_.bidirectional ? 2 : 1)});
    fc_b_ = params.add("fc.bias", {cfg_.fc_size});
    out_w_ = params.add("out.weight", {cfg_.outputs, cfg_.fc_size});
    out_b_ = params.add("out.bias", {cfg_.outputs});
  }

  const NetConfig& config() const { return cfg_; }

  void init(Rng& rng) {
    int cin = cfg_.in_channels;
    for (std::size_t b = 0; b < conv_w_.size(); ++b) {
      nn::init_uniform_fan_in(params[conv_w_[b]].data, cin * 9, rng);
      nn::init_uniform_fan_in(params[conv_b_[b]].data, cin * 9, rng);
      cin = cfg_.filters[b];
    }
    for (const auto& g : gru_)
      for (auto i : {g.w_ih, g.w_hh, g.b_ih, g.b_hh}) nn::init_uniform_fan_in(params[i].data, cfg_.gru_hidden, rng);
    nn::init_uniform_fan_in(params[fc_w_].data, int(params[fc_w_].shape[1]), rng);
    nn::init_uniform_fan_in(params[fc_b_].data, int(params[fc_w_].shape[1]), rng);
    nn::init_uniform_fan_in(params[out_w_].data, cfg_.fc_size, rng);
    nn::init_uniform_fan_in(params[out_b_].data, cfg_.fc_size, rng);
  }

  /// Zeroes the output layer (tanh head then emits the origin everywhere).
  void zero_head() {
    std::fill(params[out_w_].data.begin(), params[out_w_].data.end(), T(0));
    std::fill(params[out_b_].data.begin(), params[out_b_].data.end(), T(0));
  }

  /// input: in_channels x (t * freq_bins). Returns T x outputs after the head activation.
  Mat<T> forward(const Mat<T>& input, int t, NetTrace<T>* trace = nullptr) const {
    if (input.rows() != cfg_.in_channels || input.cols() != Eigen::Index(t) * cfg_.freq_bins)
      throw Error("PredictorNet::forward: input is " + std::to_string(input.rows()) + "x" +
                  std::to_string(input.cols()) + ", expected " + std::to_string(cfg_.in_channels) + "x(" +
                  std::to_string(t) + "*" + std::to_string(cfg_.freq_bins) + ")");
    if (t < kFramesPerLabel || t % kFramesPerLabel != 0)
      throw Error("PredictorNet::forward: t must be a positive multiple of " + std::to_string(kFramesPerLabel));
    if (trace) {
      *trace = NetTrace<T>{};
      trace->blocks.resize(conv_w_.size());
    }
    Mat<T> x = input;
    int H = t, W = cfg_.freq_bins;
    for (std::size_t b = 0; b < conv_w_.size(); ++b) {
      Mat<T> pooled;
      std::vector<int>* am = trace ? &trace->blocks[b].argmax : nullptr;
      nn::conv_block_forward(x, H, W, params.mat(conv_w_[b]), params.vec(conv_b_[b]), cfg_.time_pool[b],
                             cfg_.freq_pool[b], pooled, am);
      if (trace) {
        auto& blk = trace->blocks[b];
        blk.H = H;
        blk.W = W;
        blk.in = std::move(x);
        blk.out = pooled;
      }
      H /= cfg_.time_pool[b];
      W /= cfg_.freq_pool[b];
      x = std::move(pooled);
    }
    // C x (T * W) -> T x (C * W)
    const int Cf = int(x.rows());
    Mat<T> seq(H, Cf * W);
    for (int c = 0; c < Cf; ++c)
      for (int tt = 0; tt < H; ++tt) seq.row(tt).segment(c * W, W) = x.row(c).segment(Eigen::Index(tt) * W, W);

    const int Hg = cfg_.gru_hidden;
    Mat<T> gout(H, Hg * Eigen::Index(gru_.size()));
    if (trace) trace->gru.resize(gru_.size());
    for (std::size_t d = 0; d < gru_.size(); ++d)
      gout.middleCols(Eigen::Index(d) * Hg, Hg) =
          nn::gru_forward(params, gru_[d], seq, d == 1, trace ? &trace->gru[d] : nullptr);

    Mat<T> fc = gout * params.mat(fc_w_).transpose();
    fc.rowwise() += params.vec(fc_b_).transpose();
    Mat<T> z = fc * params.mat(out_w_).transpose();
    z.rowwise() += params.vec(out_b_).transpose();
    Mat<T> y = activate(z);
    if (trace) {
      trace->pooled_frames = H;
      trace->gru_out = std::move(gout);
      trace->fc_out = std::move(fc);
      trace->y = y;
      trace->valid = true;
    }
    return y;
  }

  /// Accumulates parameter gradients given dL/d(output); returns dL/d(input)
  /// for input channels >= grad_from (rows shifted down by grad_from), or an
  /// empty matrix when grad_from == in_channels.
  Mat<T> backward(const NetTrace<T>& tr, const Mat<T>& dy, ParamBundle<T>& grads, int grad_from) const {
    if (!tr.valid) throw Error("PredictorNet::backward: no recorded forward pass");
    if (!grads.same_layout(params)) throw Error("PredictorNet::backward: gradient bundle layout mismatch");
    if (dy.rows() != tr.y.rows() || dy.cols() != tr.y.cols()) throw Error("PredictorNet::backward: gradient shape mismatch");
    if (grad_from < 0 || grad_from > cfg_.in_channels) throw Error("PredictorNet::backward: bad grad_from");

    Mat<T> dz(dy.rows(), dy.cols());
    if (cfg_.head == HeadKind::Tanh) {
      dz = dy.array() * (T(1) - tr.y.array().square());
    } else {
      for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const T s = dy.row(i).dot(tr.y.row(i));
        dz.row(i) = tr.y.row(i).array() * (dy.row(i).array() - s);
      }
    }
    grads.mat(out_w_).noalias() += dz.transpose() * tr.fc_out;
    grads.vec(out_b_) += dz.colwise().sum().transpose();
    const Mat<T> dfc = dz * params.mat(out_w_);
    grads.mat(fc_w_).noalias() += dfc.transpose() * tr.gru_out;
    grads.vec(fc_b_) += dfc.colwise().sum().transpose();
    const Mat<T> dg = dfc * params.mat(fc_w_);

    const int Hg = cfg_.gru_hidden;
    Mat<T> dseq;
    for (std::size_t d = 0; d < gru_.size(); ++d) {
      Mat<T> part = nn::gru_backward(params, gru_[d], tr.gru[d], Mat<T>(dg.middleCols(Eigen::Index(d) * Hg, Hg)),
                                     d == 1, grads);
      if (d == 0)
        dseq = std::move(part);
      else
        dseq += part;
    }

    // T x (C * W) -> C x (T * W)
    const auto& last = tr.blocks.back();
    const int Wl = last.W / cfg_.freq_pool.back();
    const int Tl = tr.pooled_frames;
    const int Cf = cfg_.filters.back();
    Mat<T> dx(Cf, Eigen::Index(Tl) * Wl);
    for (int c = 0; c < Cf; ++c)
      for (int tt = 0; tt < Tl; ++tt) dx.row(c).segment(Eigen::Index(tt) * Wl, Wl) = dseq.row(tt).segment(c * Wl, Wl);

    Mat<T> din;
    for (std::size_t bi = conv_w_.size(); bi-- > 0;) {
      const auto& blk = tr.blocks[bi];
      const int from = bi == 0 ? grad_from : 0;
      const bool want_input = from < int(blk.in.rows());
      Mat<T> dprev;
      nn::conv_block_backward(blk.in, blk.H, blk.W, params.mat(conv_w_[bi]), cfg_.time_pool[bi], cfg_.freq_pool[bi],
                              blk.out, blk.argmax, dx, grads.mat(conv_w_[bi]), grads.vec(conv_b_[bi]), from,
                              want_input ? &dprev : nullptr);
      if (!want_input) break;
      if (bi == 0)
        din = std::move(dprev);
      else
        dx = std::move(dprev);
    }
    return din;
  }

  ParamBundle<T> params;

 private:
  Mat<T> activate(const Mat<T>& z) const {
    if (cfg_.head == HeadKind::Tanh) return z.array().tanh().matrix();
    Mat<T> y(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const T m = z.row(i).maxCoeff();
      y.row(i) = (z.row(i).array() - m).exp().matrix();
      y.row(i) /= y.row(i).sum();
    }
    return y;
  }

  NetConfig cfg_;
  std::vector<std::size_t> conv_w_, conv_b_;
  std::vector<nn::GruParams> gru_;
  std::size_t fc_w_ = 0, fc_b_ = 0, out_w_ = 0, out_b_ = 0;
};

// ------------------------------------------------------------ conditioned model

enum class ModelKind { Localizer, Classifier };

inline std::string to_string(ModelKind k) { return k == ModelKind::Localizer ? "localizer" : "classifier"; }

/// Network config for a localizer (3 tanh outputs) or a classifier (K+1 softmax outputs).
inline NetConfig default_net_config(ModelKind kind, int n_classes, int cond_channels = 5) {
  NetConfig c;
  c.in_channels = kFeatureChannels + cond_channels;
  if (kind == ModelKind::Localizer) {
    c.outputs = 3;
    c.head = HeadKind::Tanh;
  } else {
    c.outputs = n_classes + 1;
    c.head = HeadKind::Softmax;
  }
  return c;
}

template <typename T>
struct ModelTrace {
  std::vector<std::vector<Doa>> sets;
  NetTrace<T> net;
};

template <typename T>
struct ModelGrads {
  ParamBundle<T> enc, net;
  void set_zero() {
    enc.set_zero();
    net.set_zero();
  }
};

/// Encoder + predictor: features and one conditioning DOA set per label
/// frame in, T x outputs out.
template <typename T>
class ConditionedModel {
  ModelKind kind_;

 public:
  ConditionedModel(ModelKind kind, NetConfig cfg, int cond_channels = 5)
      : kind_(kind), enc(cond_channels), net(std::move(cfg)) {
    if (net.config().in_channels != kFeatureChannels + cond_channels)
      throw Error("ConditionedModel: in_channels must equal 11 + condition channels");
    if (kind == ModelKind::Localizer && (net.config().outputs != 3 || net.config().head != HeadKind::Tanh))
      throw Error("ConditionedModel: a localizer needs 3 tanh outputs");
    if (kind == ModelKind::Classifier && (net.config().outputs < 2 || net.config().head != HeadKind::Softmax))
      throw Error("ConditionedModel: a classifier needs K+1 softmax outputs");
  }

  ModelKind kind() const { return kind_; }
  int n_classes() const { return kind_ == ModelKind::Classifier ? net.config().outputs - 1 : 0; }

  void init(Rng& rng) {
    enc.init(rng);
    net.init(rng);
  }

  ModelGrads<T> zero_grads() const { return {enc.params.zeros_like(), net.params.zeros_like()}; }

  /// Stacks features (11 channels) and the broadcast condition into the net input.
  Mat<T> assemble_input(const FeatureTensor& feat, const std::vector<std::vector<Doa>>& sets) const {
    check_features(feat, sets);
    const int t = feat.frames, F = feat.bins;
    Mat<T> in(net.config().in_channels, Eigen::Index(t) * F);
    for (int c = 0; c < kFeatureChannels; ++c) {
      const float* src = feat.data.data() + std::size_t(c) * t * F;
      for (Eigen::Index k = 0; k < in.cols(); ++k) in(c, k) = T(src[k]);
    }
    in.bottomRows(enc.outputs()) = broadcast_condition(encode_condition(enc, sets), t, F);
    return in;
  }

  Mat<T> forward(const FeatureTensor& feat, const std::vector<std::vector<Doa>>& sets, ModelTrace<T>* trace = nullptr) const {
    const Mat<T> in = assemble_input(feat, sets);
    if (trace) trace->sets = sets;
    return net.forward(in, feat.frames, trace ? &trace->net : nullptr);
  }

  void backward(const ModelTrace<T>& tr, const Mat<T>& dy, ModelGrads<T>& grads) const {
    const Mat<T> din = net.backward(tr.net, dy, grads.net, kFeatureChannels);
    const int t = tr.net.blocks.front().H, F = tr.net.blocks.front().W;
    const int rep = t / int(tr.sets.size());
    for (std::size_t i = 0; i < tr.sets.size(); ++i) {
      nn::Vec<T> dc(enc.outputs());
      for (int c = 0; c < enc.outputs(); ++c)
        dc[c] = din.row(c).segment(Eigen::Index(i) * rep * F, Eigen::Index(rep) * F).sum();
      enc.backward_set(tr.sets[i], dc, grads.enc);
    }
  }

  std::size_t parameter_count() const { return enc.parameter_count() + net.params.parameter_count(); }

  template <typename U>
  ConditionedModel<U> cast() const {
    ConditionedModel<U> out(kind_, net.config(), enc.outputs());
    out.enc.params = enc.params.template cast<U>();
    out.net.params = net.params.template cast<U>();
    return out;
  }

  ConditionEncoder<T> enc;
  PredictorNet<T> net;

 private:
  void check_features(const FeatureTensor& feat, const std::vector<std::vector<Doa>>& sets) const {
    if (feat.channels != kFeatureChannels) throw Error("ConditionedModel: features need 11 channels");
    if (feat.bins != net.config().freq_bins)
      throw Error("ConditionedModel: features have " + std::to_string(feat.bins) + " bins, net expects " +
                  std::to_string(net.config().freq_bins));
    if (feat.frames % kFramesPerLabel != 0 || int(sets.size()) * kFramesPerLabel != feat.frames)
      throw Error("ConditionedModel: " + std::to_string(sets.size()) + " condition frames do not match " +
                  std::to_string(feat.frames) + " feature frames");
  }
};

// ------------------------------------------------------------ checkpoints

namespace model_detail {
template <typename T>
void save_bundle(const std::filesystem::path& dir, const std::string& prefix, const ParamBundle<T>& p,
                 nlohmann::json& list) {
  for (const auto& e : p) {
    RawTensor raw;
    for (int d : e.shape) raw.shape.push_back(std::uint32_t(d));
    raw.data.assign(e.data.begin(), e.data.end());
    const std::string file = prefix + e.name + ".tensor";
    write_tensor((dir / file).string(), raw);
    list.push_back({{"name", prefix + e.name}, {"shape", e.shape}, {"file", file}});
  }
}
template <typename T>
void load_bundle(const std::filesystem::path& dir, const std::string& prefix, ParamBundle<T>& p,
                 const nlohmann::json& list) {
  for (auto& e : p) {
    const std::string name = prefix + e.name;
    const nlohmann::json* item = nullptr;
    for (const auto& it : list)
      if (it.at("name").get<std::string>() == name) item = &it;
    if (!item) throw Error("load_checkpoint: " + dir.string() + ": missing tensor " + name);
    const RawTensor raw = read_tensor((dir / item->at("file").get<std::string>()).string());
    std::vector<int> shape;
    for (auto d : raw.shape) shape.push_back(int(d));
    if (shape != e.shape) throw Error("load_checkpoint: " + dir.string() + ": shape mismatch for " + name);
    for (std::size_t i = 0; i < e.numel(); ++i) e.data[i] = T(raw.data[i]);
  }
}
}  // namespace model_detail

/// Directory of raw tensors plus manifest.json.
inline void save_checkpoint(const std::string& dir, const ConditionedModel<float>& m, const nlohmann::json& extra = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json man;
  man["kind"] = to_string(m.kind());
  man["cond_channels"] = m.enc.outputs();
  man["net_config"] = m.net.config().to_json();
  man["tensors"] = nlohmann::json::array();
  model_detail::save_bundle(dir, "enc.", m.enc.params, man["tensors"]);
  model_detail::save_bundle(dir, "net.", m.net.params, man["tensors"]);
  if (!extra.is_null()) man["extra"] = extra;
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw Error("save_checkpoint: cannot write " + dir + "/manifest.json");
  out << man.dump(2) << "\n";
}

inline ConditionedModel<float> load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw Error("load_checkpoint: cannot open " + mpath.string());
  nlohmann::json man;
  try {
    in >> man;
  } catch (const nlohmann::json::exception& e) {
    throw Error("load_checkpoint: " + mpath.string() + ": " + e.what());
  }
  const std::string kind = man.at("kind").get<std::string>();
  if (kind != "localizer" && kind != "classifier") throw Error("load_checkpoint: unknown model kind " + kind);
  ConditionedModel<float> m(kind == "localizer" ? ModelKind::Localizer : ModelKind::Classifier,
                            NetConfig::from_json(man.at("net_config")), man.at("cond_channels").get<int>());
  model_detail::load_bundle(dir, "enc.", m.enc.params, man.at("tensors"));
  model_detail::load_bundle(dir, "net.", m.net.params, man.at("tensors"));
  return m;
}

}  // namespace coloc
