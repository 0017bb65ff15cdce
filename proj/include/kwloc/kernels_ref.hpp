#ifndef KWLOC_KERNELS_REF_HPP
#define KWLOC_KERNELS_REF_HPP

#include <vector>

#include "kwloc/tensor.hpp"

// Plain serial reference kernels. Single loop nest per output element with
// the same contraction order as kwloc::kern, so the optimized/OpenMP kernels
// must match these bitwise. Used by tests and the benchmark tool only.
namespace kwloc::ref {

inline void gemm_nt(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  const int M = a.rows, N = b.rows, K = a.cols;
  c = Tensor2D(M, N);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += a.at(i, k) * b.at(j, k);
      c.at(i, j) = s;
    }
}

inline void gemm_nn_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  for (int i = 0; i < a.rows; ++i)
    for (int k = 0; k < a.cols; ++k) {
      const double av = a.at(i, k);
      for (int j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(k, j);
    }
}

inline void gemm_tn_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  for (int i = 0; i < a.cols; ++i)
    for (int m = 0; m < a.rows; ++m) {
      const double av = a.at(m, i);
      for (int j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(m, j);
    }
}

// Direct convolution, no im2col. Taps outside the input contribute an
// explicit 0.0 term so the accumulation sequence matches the unfolded GEMM.
inline void conv1d_forward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b,
                           int width, int padding, Tensor2D& y) {
  const int T = x.rows, C = x.cols, F = w.rows;
  const int t_out = T + 2 * padding - width + 1;
  y = Tensor2D(t_out, F);
  for (int t = 0; t < t_out; ++t)
    for (int f = 0; f < F; ++f) {
      double s = 0.0;
      for (int c = 0; c < C; ++c)
        for (int k = 0; k < width; ++k) {
          const int src = t + k - padding;
          const double xv = (src >= 0 && src < T) ? x.at(src, c) : 0.0;
          s += xv * w.at(f, c * width + k);
        }
      y.at(t, f) = s + b.data[f];
    }
}

inline void maxpool1d_forward(const Tensor2D& x, int width, int stride, Tensor2D& y,
                              std::vector<int>& argmax) {
  const int T = x.rows, C = x.cols;
  const int t_out = (T - width) / stride + 1;
  y = Tensor2D(t_out, C);
  argmax.assign((size_t)t_out * C, 0);
  for (int t = 0; t < t_out; ++t)
    for (int c = 0; c < C; ++c) {
      int bi = t * stride;
      double best = x.at(bi, c);
      for (int k = 1; k < width; ++k)
        if (x.at(t * stride + k, c) > best) {
          best = x.at(t * stride + k, c);
          bi = t * stride + k;
        }
      y.at(t, c) = best;
      argmax[(size_t)t * C + c] = bi;
    }
}

}  // namespace kwloc::ref

#endif  // KWLOC_KERNELS_REF_HPP
