#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace cgr {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// logsumexp with max shift; tolerates -inf entries and all -inf input.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) acc += std::exp(v(i) - m);
  return m + std::log(acc);
}

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = a > b ? a : b;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// log N(q; mu, sigma2 I) given the squared distance and dimensionality.
inline double log_gauss_iso(double sq_dist, int dim, double sigma2) {
  return -0.5 * (sq_dist / sigma2 + dim * (kLog2Pi + std::log(sigma2)));
}

inline double wrap_angle(double a) {
  constexpr double two_pi = 6.283185307179586476925286766559;
  a = std::fmod(a, two_pi);
  if (a > 3.1415926535897932384626433832795) a -= two_pi;
  if (a < -3.1415926535897932384626433832795) a += two_pi;
  return a;
}

inline double angle_diff(double a, double b) { return std::abs(wrap_angle(a - b)); }

}  // namespace cgr
