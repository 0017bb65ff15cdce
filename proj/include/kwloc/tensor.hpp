#ifndef KWLOC_TENSOR_HPP
#define KWLOC_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "kwloc/common.hpp"

namespace kwloc {

// Dense row-major matrix of doubles. Time-major for feature/activation
// sequences: rows = time steps, cols = channels.
struct Tensor2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor2D() = default;
  Tensor2D(int r, int c) : rows(r), cols(c), data((size_t)r * (size_t)c, 0.0) {
    if (r < 0 || c < 0) throw ConfigError("Tensor2D: negative dimension");
  }
  Tensor2D(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != (size_t)r * (size_t)c)
      throw ConfigError("Tensor2D: data length does not match rows*cols");
  }

  double& at(int r, int c) { return data[(size_t)r * cols + c]; }
  double at(int r, int c) const { return data[(size_t)r * cols + c]; }
  double* row(int r) { return data.data() + (size_t)r * cols; }
  const double* row(int r) const { return data.data() + (size_t)r * cols; }
  size_t size() const { return data.size(); }
  bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Snap every entry to the nearest float32. Persisted tensors (model
  // parameters, features) live on the float grid so that the 32-bit file
  // formats round-trip bitwise.
  void quantize_f32() {
    for (double& v : data) v = (double)(float)v;
  }
};

inline bool bitwise_equal(const Tensor2D& a, const Tensor2D& b) {
  if (!a.same_shape(b)) return false;
  for (size_t i = 0; i < a.data.size(); ++i) {
    // bit-level compare; treats -0.0 != 0.0 and NaN == NaN deliberately
    uint64_t x, y;
    static_assert(sizeof(double) == sizeof(uint64_t));
    __builtin_memcpy(&x, &a.data[i], 8);
    __builtin_memcpy(&y, &b.data[i], 8);
    if (x != y) return false;
  }
  return true;
}

}  // namespace kwloc

#endif  // KWLOC_TENSOR_HPP
