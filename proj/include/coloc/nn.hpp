#pragma once

// Minimal layer kernels with explicit backward passes. Activations are
// row-major matrices: one row per channel, columns laid out time-major
// (column index = t * freq_bins + f).

#include <Eigen/Dense>

#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "coloc/error.hpp"
#include "coloc/rng.hpp"

namespace coloc::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;
template <typename T>
using VecMap = Eigen::Map<Vec<T>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Vec<T>>;

/// Packet-aligned storage: Eigen peels unaligned heads in reductions, so
/// results would otherwise depend on where the allocator put the buffer.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Ordered set of named parameter tensors.
template <typename T>
class ParamBundle {
 public:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    AlignedVector<T> data;

    std::size_t numel() const { return data.size(); }
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  std::size_t add(std::string name, std::vector<int> shape) {
    if (find(name) != npos) throw Error("ParamBundle: duplicate parameter " + name);
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw Error("ParamBundle: negative dimension in " + name);
      n *= std::size_t(d);
    }
    entries_.push_back({std::move(name), std::move(shape), AlignedVector<T>(n, T(0))});
    return entries_.size() - 1;
  }

  static constexpr std::size_t npos = std::size_t(-1);

  std::size_t find(std::string_view name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    return npos;
  }
  Entry& at(std::string_view name) {
    const auto i = find(name);
    if (i == npos) throw Error("ParamBundle: no parameter named " + std::string(name));
    return entries_[i];
  }
  const Entry& at(std::string_view name) const { return const_cast<ParamBundle*>(this)->at(name); }

  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.numel();
    return n;
  }

  /// Matrix view of a rank-2 (or rank-1 as column) parameter.
  MatMap<T> mat(std::size_t i) {
    auto& e = entries_[i];
    return MatMap<T>(e.data.data(), e.shape[0], e.shape.size() > 1 ? e.shape[1] : 1);
  }
  ConstMatMap<T> mat(std::size_t i) const {
    const auto& e = entries_[i];
    return ConstMatMap<T>(e.data.data(), e.shape[0], e.shape.size() > 1 ? e.shape[1] : 1);
  }
  VecMap<T> vec(std::size_t i) { return VecMap<T>(entries_[i].data.data(), Eigen::Index(entries_[i].numel())); }
  ConstVecMap<T> vec(std::size_t i) const {
    return ConstVecMap<T>(entries_[i].data.data(), Eigen::Index(entries_[i].numel()));
  }

  ParamBundle zeros_like() const {
    ParamBundle out = *this;
    out.set_zero();
    return out;
  }
  void set_zero() {
    for (auto& e : entries_) std::fill(e.data.begin(), e.data.end(), T(0));
  }

  template <typename U>
  ParamBundle<U> cast() const {
    ParamBundle<U> out;
    for (const auto& e : entries_) {
      const auto i = out.add(e.name, e.shape);
      for (std::size_t k = 0; k < e.numel(); ++k) out[i].data[k] = U(e.data[k]);
    }
    return out;
  }

  bool same_layout(const ParamBundle& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (o[i].name != entries_[i].name || o[i].shape != entries_[i].shape) return false;
    return true;
  }

  friend bool operator==(const ParamBundle&, const ParamBundle&) = default;

 private:
  std::vector<Entry> entries_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void init_uniform_fan_in(AlignedVector<T>& data, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(double(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : data) v = T(u(rng));
}

// ---------------------------------------------------------------- conv 3x3

/// Unfolds 3x3 "same" neighbourhoods of rows [h0, h1): cols has C*9 rows and
/// (h1 - h0) * W columns.
template <typename T>
void im2col3x3(const Mat<T>& in, int H, int W, int h0, int h1, Mat<T>& cols) {
  const int C = int(in.rows());
  const int n = h1 - h0;
  cols.resize(Eigen::Index(C) * 9, Eigen::Index(n) * W);
  for (int c = 0; c < C; ++c) {
    const T* src = in.row(c).data();
    for (int ki = 0; ki < 3; ++ki)
      for (int kj = 0; kj < 3; ++kj) {
        T* dst = cols.row(c * 9 + ki * 3 + kj).data();
        const int dw = kj - 1;
        for (int h = h0; h < h1; ++h) {
          T* d = dst + std::size_t(h - h0) * W;
          const int sh = h + ki - 1;
          if (sh < 0 || sh >= H) {
            std::fill(d, d + W, T(0));
            continue;
          }
          const T* s = src + std::size_t(sh) * W;
          if (dw == 0) {
            std::copy(s, s + W, d);
          } else if (dw < 0) {
            d[0] = T(0);
            std::copy(s, s + W - 1, d + 1);
          } else {
            std::copy(s + 1, s + W, d);
            d[W - 1] = T(0);
          }
        }
      }
  }
}

template <typename T>
void im2col3x3(const Mat<T>& in, int H, int W, Mat<T>& cols) {
  im2col3x3(in, H, W, 0, H, cols);
}

/// Adjoint of im2col3x3 over rows [h0, h1): adds the folded `dcols` into din.
template <typename T>
void col2im3x3_add(const Mat<T>& dcols, int H, int W, int h0, int h1, Mat<T>& din) {
  const int C = int(dcols.rows()) / 9;
  for (int c = 0; c < C; ++c) {
    T* dst = din.row(c).data();
    for (int ki = 0; ki < 3; ++ki)
      for (int kj = 0; kj < 3; ++kj) {
        const T* src = dcols.row(c * 9 + ki * 3 + kj).data();
        const int dw = kj - 1;
        for (int h = h0; h < h1; ++h) {
          const int sh = h + ki - 1;
          if (sh < 0 || sh >= H) continue;
          const T* s = src + std::size_t(h - h0) * W;
          T* d = dst + std::size_t(sh) * W;
          if (dw == 0) {
            for (int w = 0; w < W; ++w) d[w] += s[w];
          } else if (dw < 0) {
            for (int w = 1; w < W; ++w) d[w - 1] += s[w];
          } else {
            for (int w = 0; w + 1 < W; ++w) d[w + 1] += s[w];
          }
        }
      }
  }
}

/// Conv 3x3 ("same") + ReLU + max-pool, evaluated one pooling row at a time.
/// `argmax` receives the winning input position (h * W + w) per output.
template <typename T>
void conv_block_forward(const Mat<T>& in, int H, int W, const ConstMatMap<T>& weight, const ConstVecMap<T>& bias, int tp,
                        int fp, Mat<T>& out, std::vector<int>* argmax) {
  const int Cout = int(weight.rows());
  const int Ho = H / tp, Wo = W / fp;
  out.resize(Cout, Eigen::Index(Ho) * Wo);
  if (argmax) argmax->assign(std::size_t(Cout) * Ho * Wo, 0);
  Mat<T> cols, act;
  for (int ho = 0; ho < Ho; ++ho) {
    im2col3x3(in, H, W, ho * tp, (ho + 1) * tp, cols);
    act.noalias() = weight * cols;
    act.colwise() += bias;
    for (int c = 0; c < Cout; ++c) {
      const T* a = act.row(c).data();
      T* dst = out.row(c).data() + std::size_t(ho) * Wo;
      for (int wo = 0; wo < Wo; ++wo) {
        int best = wo * fp;
        T best_v = a[best];
        for (int i = 0; i < tp; ++i)
          for (int j = 0; j < fp; ++j) {
            const int idx = i * W + wo * fp + j;
            if (a[idx] > best_v) {
              best_v = a[idx];
              best = idx;
            }
          }
        // ReLU commutes with max
        dst[wo] = std::max(best_v, T(0));
        if (argmax) (*argmax)[(std::size_t(c) * Ho + ho) * Wo + wo] = ho * tp * W + best;
      }
    }
  }
}

/// Backward of conv_block_forward. Accumulates dW, db; when `din` is given,
/// fills it with dL/d(input) for input channels >= c0 (row 0 = channel c0).
template <typename T>
void conv_block_backward(const Mat<T>& in, int H, int W, const ConstMatMap<T>& weight, int tp, int fp,
                         const Mat<T>& out, const std::vector<int>& argmax, const Mat<T>& dout, MatMap<T> dweight,
                         VecMap<T> dbias, int c0, Mat<T>* din) {
  const int Cout = int(weight.rows());
  const int Cin = int(in.rows());
  const int Ho = H / tp, Wo = W / fp;
  if (din) *din = Mat<T>::Zero(Cin - c0, Eigen::Index(H) * W);
  Mat<T> cols, dact(Cout, Eigen::Index(tp) * W), dcols;
  for (int ho = 0; ho < Ho; ++ho) {
    dact.setZero();
    bool any = false;
    for (int c = 0; c < Cout; ++c)
      for (int wo = 0; wo < Wo; ++wo) {
        const std::size_t k = std::size_t(ho) * Wo + wo;
        if (out(c, Eigen::Index(k)) <= T(0)) continue;  // ReLU closed at the winner
        const T g = dout(c, Eigen::Index(k));
        if (g == T(0)) continue;
        dact(c, argmax[std::size_t(c) * Ho * Wo + k] - ho * tp * W) += g;
        any = true;
      }
    if (!any) continue;
    im2col3x3(in, H, W, ho * tp, (ho + 1) * tp, cols);
    dweight.noalias() += dact * cols.transpose();
    dbias += dact.rowwise().sum();
    if (din && c0 < Cin) {
      dcols.noalias() = weight.middleCols(Eigen::Index(c0) * 9, Eigen::Index(Cin - c0) * 9).transpose() * dact;
      col2im3x3_add(dcols, H, W, ho * tp, (ho + 1) * tp, *din);
    }
  }
}

// ---------------------------------------------------------------- GRU

/// Parameter indices of one GRU direction; gate order (r, z, n).
struct GruParams {
  std::size_t w_ih, w_hh, b_ih, b_hh;
};

template <typename T>
struct GruTrace {
  Mat<T> x;                  // T x D
  Mat<T> h_prev, r, z, n, ghn;  // T x H each
};

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Runs one direction over the rows of x (reversed when `reverse`), returns T x H.
template <typename T>
Mat<T> gru_forward(const ParamBundle<T>& p, const GruParams& g, const Mat<T>& x, bool reverse, GruTrace<T>* trace) {
  const auto Wih = p.mat(g.w_ih);
  const auto Whh = p.mat(g.w_hh);
  const auto bih = p.vec(g.b_ih);
  const auto bhh = p.vec(g.b_hh);
  const int H = int(Whh.cols());
  const int steps = int(x.rows());
  Mat<T> gi = x * Wih.transpose();
  gi.rowwise() += bih.transpose();
  Mat<T> out(steps, H);
  Vec<T> h = Vec<T>::Zero(H);
  if (trace) {
    trace->x = x;
    trace->h_prev.resize(steps, H);
    trace->r.resize(steps, H);
    trace->z.resize(steps, H);
    trace->n.resize(steps, H);
    trace->ghn.resize(steps, H);
  }
  for (int s = 0; s < steps; ++s) {
    const int t = reverse ? steps - 1 - s : s;
    const Vec<T> gh = Whh * h + bhh;
    Vec<T> r(H), z(H), n(H);
    for (int k = 0; k < H; ++k) {
      r[k] = T(sigmoid(double(gi(t, k) + gh[k])));
      z[k] = T(sigmoid(double(gi(t, H + k) + gh[H + k])));
      n[k] = std::tanh(gi(t, 2 * H + k) + r[k] * gh[2 * H + k]);
    }
    if (trace) {
      trace->h_prev.row(t) = h.transpose();
      trace->r.row(t) = r.transpose();
      trace->z.row(t) = z.transpose();
      trace->n.row(t) = n.transpose();
      trace->ghn.row(t) = gh.segment(2 * H, H).transpose();
    }
    h = (Vec<T>::Ones(H) - z).cwiseProduct(n) + z.cwiseProduct(h);
    out.row(t) = h.transpose();
  }
  return out;
}

/// Accumulates parameter gradients into `grads`; returns dL/dx (T x D).
template <typename T>
Mat<T> gru_backward(const ParamBundle<T>& p, const GruParams& g, const GruTrace<T>& tr, const Mat<T>& dout, bool reverse,
                    ParamBundle<T>& grads) {
  const auto Whh = p.mat(g.w_hh);
  const auto Wih = p.mat(g.w_ih);
  const int H = int(Whh.cols());
  const int steps = int(tr.x.rows());
  Mat<T> dgi(steps, 3 * H);
  auto dWhh = grads.mat(g.w_hh);
  auto dbhh = grads.vec(g.b_hh);
  Vec<T> dh_carry = Vec<T>::Zero(H);
  for (int s = steps - 1; s >= 0; --s) {
    const int t = reverse ? steps - 1 - s : s;
    Vec<T> dh = dout.row(t).transpose() + dh_carry;
    Vec<T> dgh(3 * H);
    for (int k = 0; k < H; ++k) {
      const T r = tr.r(t, k), z = tr.z(t, k), n = tr.n(t, k), hp = tr.h_prev(t, k);
      const T dn = dh[k] * (T(1) - z);
      const T dz = dh[k] * (hp - n);
      const T dn_pre = dn * (T(1) - n * n);
      const T dr = dn_pre * tr.ghn(t, k);
      const T dr_pre = dr * r * (T(1) - r);
      const T dz_pre = dz * z * (T(1) - z);
      dgi(t, k) = dr_pre;
      dgi(t, H + k) = dz_pre;
      dgi(t, 2 * H + k) = dn_pre;
      dgh[k] = dr_pre;
      dgh[H + k] = dz_pre;
      dgh[2 * H + k] = dn_pre * r;
      dh[k] = dh[k] * z;
    }
    dWhh.noalias() += dgh * tr.h_prev.row(t);
    dbhh += dgh;
    dh_carry = dh + Whh.transpose() * dgh;
  }
  grads.mat(g.w_ih).noalias() += dgi.transpose() * tr.x;
  grads.vec(g.b_ih) += dgi.colwise().sum().transpose();
  return dgi * Wih;
}

}  // namespace coloc::nn
