#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "coloc/error.hpp"
#include "coloc/rng.hpp"

namespace coloc {

inline constexpr double kPi = std::numbers::pi;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

  friend constexpr Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(double s, const Vec3& a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
};

/// Direction of arrival: a point on the unit sphere in Cartesian xyz.
/// Ground-truth and reported values are unit-norm; raw network outputs are plain Vec3.
using Doa = Vec3;

inline constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm2(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline bool is_finite(const Vec3& v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); }
inline bool is_zero(const Vec3& v) { return v.x == 0.0 && v.y == 0.0 && v.z == 0.0; }
inline bool is_unit(const Vec3& v, double tol = 1e-9) { return std::abs(norm2(v) - 1.0) <= tol; }

inline Vec3 normalized(const Vec3& v) {
  const double n = norm2(v);
  if (!(n > 0.0)) throw Error("normalized: zero-norm vector");
  return (1.0 / n) * v;
}

/// (sum |v_i|^p)^(1/p). Exact fast paths for p = 1, 1.5 and 2.
inline double lp_norm(const Vec3& v, double p) {
  if (!is_finite(v)) throw Error("lp_norm: non-finite input");
  if (!(p > 0.0) || !std::isfinite(p)) throw Error("lp_norm: p must be a finite positive number");
  const double a[3] = {std::abs(v.x), std::abs(v.y), std::abs(v.z)};
  if (p == 1.0) return a[0] + a[1] + a[2];
  if (p == 2.0) return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  if (p == 1.5) {
    const double s = a[0] * std::sqrt(a[0]) + a[1] * std::sqrt(a[1]) + a[2] * std::sqrt(a[2]);
    return std::cbrt(s * s);
  }
  return std::pow(std::pow(a[0], p) + std::pow(a[1], p) + std::pow(a[2], p), 1.0 / p);
}

/// Great-circle angle between two directions, in degrees.
inline double angular_distance(const Vec3& u, const Vec3& v) {
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (!(nu > 0.0) || !(nv > 0.0)) throw Error("angular_distance: zero-norm input");
  // Half-angle form: accurate near 0 and 180 degrees, exactly symmetric, and
  // exactly 0 for equal inputs.
  const Vec3 a{u.x / nu, u.y / nu, u.z / nu};
  const Vec3 b{v.x / nv, v.y / nv, v.z / nv};
  const Vec3 d{a.x - b.x, a.y - b.y, a.z - b.z};
  const Vec3 s{a.x + b.x, a.y + b.y, a.z + b.z};
  return rad2deg(2.0 * std::atan2(norm2(d), norm2(s)));
}

struct AzEl {
  double azimuth = 0.0;    // degrees, [-180, 180)
  double elevation = 0.0;  // degrees, [-90, 90]
};

/// Wraps any finite angle into [-180, 180).
inline double wrap_azimuth(double deg) {
  double a = std::fmod(deg + 180.0, 360.0);
  if (a < 0.0) a += 360.0;
  a -= 180.0;
  if (a >= 180.0) a -= 360.0;
  return a;
}

inline Doa azel_to_doa(const AzEl& a) {
  if (!std::isfinite(a.azimuth) || a.azimuth < -180.0 || a.azimuth >= 180.0)
    throw Error("azel_to_doa: azimuth out of [-180, 180): " + std::to_string(a.azimuth));
  if (!std::isfinite(a.elevation) || a.elevation < -90.0 || a.elevation > 90.0)
    throw Error("azel_to_doa: elevation out of [-90, 90]: " + std::to_string(a.elevation));
  const double az = deg2rad(a.azimuth);
  const double el = deg2rad(a.elevation);
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

inline AzEl doa_to_azel(const Doa& d) {
  if (!is_finite(d) || is_zero(d)) throw Error("doa_to_azel: zero or non-finite vector");
  const double az = rad2deg(std::atan2(d.y, d.x));
  const double el = rad2deg(std::atan2(d.z, std::hypot(d.x, d.y)));
  return {wrap_azimuth(az), std::clamp(el, -90.0, 90.0)};
}

/// Adds independent uniform offsets in [-max_deg, max_deg] to azimuth and
/// elevation. Elevation is clamped at the poles, azimuth wrapped.
inline Doa perturb_doa(const Doa& d, double max_deg, Rng& rng) {
  if (max_deg <= 0.0) return d;
  const AzEl a = doa_to_azel(d);
  const double daz = uniform(rng, -max_deg, max_deg);
  const double del = uniform(rng, -max_deg, max_deg);
  return azel_to_doa({wrap_azimuth(a.azimuth + daz), std::clamp(a.elevation + del, -90.0, 90.0)});
}

/// One of the 16 axis-aligned FOA spatial augmentations: azimuth reflection
/// (y -> -y), then rotation by a multiple of 90 degrees, with an optional
/// elevation flip (z -> -z). Channel order is (W, X, Y, Z).
struct FoaTransform {
  int quarter_turns = 0;  // 0..3, azimuth rotation by 90 * quarter_turns degrees
  bool flip_elevation = false;
  bool reflect_azimuth = false;

  static constexpr int kCount = 16;

  static constexpr FoaTransform from_index(int i) {
    if (i < 0 || i >= kCount) throw Error("FoaTransform: index out of range");
    return {i % 4, ((i / 4) % 2) == 1, (i / 8) == 1};
  }
  constexpr int index() const { return quarter_turns + 4 * int(flip_elevation) + 8 * int(reflect_azimuth); }
  constexpr bool is_identity() const { return index() == 0; }
  friend constexpr bool operator==(const FoaTransform&, const FoaTransform&) = default;

  /// 3x3 signed permutation acting on xyz (and on the X, Y, Z channels).
  constexpr std::array<std::array<int, 3>, 3> spatial_matrix() const {
    constexpr int kCos[4] = {1, 0, -1, 0};
    constexpr int kSin[4] = {0, 1, 0, -1};
    const int c = kCos[quarter_turns];
    const int s = kSin[quarter_turns];
    const int r = reflect_azimuth ? -1 : 1;
    const int e = flip_elevation ? -1 : 1;
    // E * R * S with S = diag(1, r, 1)
    return {{{c, -s * r, 0}, {s, c * r, 0}, {0, 0, e}}};
  }

  constexpr std::array<std::array<int, 4>, 4> channel_matrix() const {
    const auto m = spatial_matrix();
    std::array<std::array<int, 4>, 4> out{};
    out[0][0] = 1;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out[i + 1][j + 1] = m[i][j];
    return out;
  }

  Vec3 apply(const Vec3& v) const {
    const auto m = spatial_matrix();
    Vec3 out;
    for (int i = 0; i < 3; ++i) out[i] = m[i][0] * v.x + m[i][1] * v.y + m[i][2] * v.z;
    return out;
  }

  AzEl apply(const AzEl& a) const {
    const double az = reflect_azimuth ? -a.azimuth : a.azimuth;
    return {wrap_azimuth(az + 90.0 * quarter_turns), flip_elevation ? -a.elevation : a.elevation};
  }

  constexpr FoaTransform inverse() const {
    // reflections are involutions; pure rotations invert by the opposite turn
    if (reflect_azimuth) return *this;
    return {(4 - quarter_turns) % 4, flip_elevation, false};
  }
};

}  // namespace coloc
