#ifndef KWLOC_NUMERICS_HPP
#define KWLOC_NUMERICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "kwloc/common.hpp"

namespace kwloc {

inline double sigmoid(double x) {
  // evaluate the exp on the negative side only
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// softmax with running-max subtraction; out may alias in.
inline void stable_softmax(const double* in, double* out, size_t n) {
  double m = in[0];
  for (size_t i = 1; i < n; ++i) m = std::max(m, in[i]);
  double denom = 0.0;
  for (size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - m);
    denom += out[i];
  }
  for (size_t i = 0; i < n; ++i) out[i] /= denom;
}

// (1/r) log mean_t exp(r h_t), computed around the max so large r does not
// overflow. Interpolates mean (r -> 0) to max (r -> inf).
inline double log_mean_exp(const double* h, size_t n, double r) {
  if (r <= 0.0) throw ConfigError("log_mean_exp: sharpness r must be > 0");
  if (n == 0) throw InputError("log_mean_exp: empty input");
  double m = h[0];
  for (size_t i = 1; i < n; ++i) m = std::max(m, h[i]);
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += std::exp(r * (h[i] - m));
  return m + (std::log(acc / (double)n)) / r;
}

constexpr double kBceEps = 1e-7;

// Mean binary cross-entropy over keywords; predictions clamped to
// [kBceEps, 1-kBceEps].
inline double bce_loss(const double* y_hat, const double* y, size_t n) {
  if (n == 0) throw InputError("bce_loss: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (y[i] < 0.0 || y[i] > 1.0) throw InputError("bce_loss: target outside [0,1]");
    double p = std::clamp(y_hat[i], kBceEps, 1.0 - kBceEps);
    acc += -(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
  }
  return acc / (double)n;
}

// First index of the maximum (ties break toward the earliest index).
inline size_t argmax_first(const double* v, size_t n) {
  if (n == 0) throw InputError("argmax of empty sequence");
  size_t best = 0;
  for (size_t i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace kwloc

#endif  // KWLOC_NUMERICS_HPP
