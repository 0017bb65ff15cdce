#include "kwloc/kernels.hpp"

#include <algorithm>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace kwloc::kern {

namespace {
int g_thread_cap = 0;

// below this many MACs a parallel region costs more than it saves
constexpr long long kParThreshold = 1 << 20;

inline int threads_for(long long work) {
#ifdef _OPENMP
  if (work < kParThreshold) return 1;
  int hw = omp_get_max_threads();
  return g_thread_cap > 0 ? std::min(g_thread_cap, hw) : hw;
#else
  (void)work;
  return 1;
#endif
}
}  // namespace

void set_num_threads(int n) {
  g_thread_cap = n;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
}

int max_threads() {
#ifdef _OPENMP
  int hw = omp_get_max_threads();
  return g_thread_cap > 0 ? std::min(g_thread_cap, hw) : hw;
#else
  return 1;
#endif
}

void gemm_nt(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  if (a.cols != b.cols) throw ConfigError("gemm_nt: inner dimensions differ");
  const int M = a.rows, N = b.rows, K = a.cols;
  c = Tensor2D(M, N);
  const double* A = a.data.data();
  const double* B = b.data.data();
  double* C = c.data.data();
  const long long work = (long long)M * N * K;
  const int nth = threads_for(work);

  // j-tiles outer so the A panel stays cache resident while B streams once.
  // Each 4x4 tile accumulates its 16 sums independently over ascending k,
  // matching the reference kernel's per-element order exactly.
#pragma omp parallel for schedule(static) num_threads(nth) if (nth > 1)
  for (int j0 = 0; j0 < N; j0 += 4) {
    const int jl = std::min(4, N - j0);
    for (int i0 = 0; i0 < M; i0 += 4) {
      const int il = std::min(4, M - i0);
      if (il == 4 && jl == 4) {
        double acc[4][4] = {};
        const double* a0 = A + (size_t)i0 * K;
        const double* b0 = B + (size_t)j0 * K;
        for (int k = 0; k < K; ++k) {
          for (int v = 0; v < 4; ++v) {
            const double av = a0[(size_t)v * K + k];
            for (int u = 0; u < 4; ++u) acc[v][u] += av * b0[(size_t)u * K + k];
          }
        }
        for (int v = 0; v < 4; ++v)
          for (int u = 0; u < 4; ++u) C[(size_t)(i0 + v) * N + j0 + u] = acc[v][u];
      } else {
        for (int v = 0; v < il; ++v)
          for (int u = 0; u < jl; ++u) {
            const double* ar = A + (size_t)(i0 + v) * K;
            const double* br = B + (size_t)(j0 + u) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += ar[k] * br[k];
            C[(size_t)(i0 + v) * N + j0 + u] = s;
          }
      }
    }
  }
}

void gemm_nn_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  if (a.cols != b.rows || a.rows != c.rows || b.cols != c.cols)
    throw ConfigError("gemm_nn_acc: dimension mismatch");
  const int M = a.rows, K = a.cols, N = b.cols;
  const double* A = a.data.data();
  const double* B = b.data.data();
  double* C = c.data.data();
  const long long work = (long long)M * N * K;
  const int nth = threads_for(work);

  // Row blocks of C are owned by one thread each; the contraction index k
  // advances in order inside the block so B panels are loaded once per block.
#pragma omp parallel for schedule(static) num_threads(nth) if (nth > 1)
  for (int i0 = 0; i0 < M; i0 += 8) {
    const int il = std::min(8, M - i0);
    for (int k = 0; k < K; ++k) {
      const double* brow = B + (size_t)k * N;
      for (int v = 0; v < il; ++v) {
        const double av = A[(size_t)(i0 + v) * K + k];
        double* crow = C + (size_t)(i0 + v) * N;
        for (int j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void gemm_tn_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  if (a.rows != b.rows || a.cols != c.rows || b.cols != c.cols)
    throw ConfigError("gemm_tn_acc: dimension mismatch");
  const int M = a.rows, Na = a.cols, Nb = b.cols;
  const double* A = a.data.data();
  const double* B = b.data.data();
  double* C = c.data.data();
  const long long work = (long long)M * Na * Nb;
  const int nth = threads_for(work);

#pragma omp parallel for schedule(static) num_threads(nth) if (nth > 1)
  for (int i0 = 0; i0 < Na; i0 += 8) {
    const int il = std::min(8, Na - i0);
    for (int m = 0; m < M; ++m) {
      const double* brow = B + (size_t)m * Nb;
      const double* arow = A + (size_t)m * Na;
      for (int v = 0; v < il; ++v) {
        const double av = arow[i0 + v];
        double* crow = C + (size_t)(i0 + v) * Nb;
        for (int j = 0; j < Nb; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void im2col(const Tensor2D& x, int width, int padding, Tensor2D& xcol) {
  const int T = x.rows, C = x.cols;
  const int t_out = T + 2 * padding - width + 1;
  if (t_out < 1) throw ConfigError("im2col: output length < 1");
  xcol = Tensor2D(t_out, C * width);
  for (int t = 0; t < t_out; ++t) {
    double* dst = xcol.row(t);
    for (int c = 0; c < C; ++c)
      for (int k = 0; k < width; ++k) {
        const int src = t + k - padding;
        dst[c * width + k] = (src >= 0 && src < T) ? x.at(src, c) : 0.0;
      }
  }
}

void col2im_acc(const Tensor2D& dxcol, int width, int padding, Tensor2D& dx) {
  const int t_out = dxcol.rows, C = dx.cols, T = dx.rows;
  for (int t = 0; t < t_out; ++t) {
    const double* src = dxcol.row(t);
    for (int c = 0; c < C; ++c)
      for (int k = 0; k < width; ++k) {
        const int dst = t + k - padding;
        if (dst >= 0 && dst < T) dx.at(dst, c) += src[c * width + k];
      }
  }
}

void conv1d_forward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b,
                    int width, int padding, Tensor2D& xcol, Tensor2D& y) {
  if (w.cols != x.cols * width)
    throw ConfigError("conv1d: weight columns != in_dim*width (input dim mismatch)");
  im2col(x, width, padding, xcol);
  gemm_nt(xcol, w, y);
  add_bias_rows(y, b);
}

void conv1d_backward(const Tensor2D& dy, const Tensor2D& xcol, const Tensor2D& w,
                     int width, int padding, Tensor2D& dw_acc, Tensor2D& db_acc,
                     Tensor2D& dx_acc, Tensor2D& dxcol_scratch) {
  const int F = w.rows;
  gemm_tn_acc(dy, xcol, dw_acc);  // dW += dY^T * Xcol
  for (int f = 0; f < F; ++f) {
    double s = 0.0;
    for (int t = 0; t < dy.rows; ++t) s += dy.at(t, f);
    db_acc.data[f] += s;
  }
  dxcol_scratch = Tensor2D(dy.rows, w.cols);
  gemm_nn_acc(dy, w, dxcol_scratch);  // dXcol = dY * W
  col2im_acc(dxcol_scratch, width, padding, dx_acc);
}

void maxpool1d_forward(const Tensor2D& x, int width, int stride, Tensor2D& y,
                       std::vector<int>& argmax) {
  if (stride < 1) throw ConfigError("maxpool1d: stride must be >= 1");
  if (x.rows < width)
    throw ConfigError("maxpool1d: input length " + std::to_string(x.rows) +
                      " shorter than window " + std::to_string(width));
  const int T = x.rows, C = x.cols;
  const int t_out = (T - width) / stride + 1;
  y = Tensor2D(t_out, C);
  argmax.assign((size_t)t_out * C, 0);
  for (int t = 0; t < t_out; ++t) {
    const int base = t * stride;
    for (int c = 0; c < C; ++c) {
      double best = x.at(base, c);
      int bi = base;
      for (int k = 1; k < width; ++k) {
        const double v = x.at(base + k, c);
        if (v > best) {  // strict: ties keep the earliest index
          best = v;
          bi = base + k;
        }
      }
      y.at(t, c) = best;
      argmax[(size_t)t * C + c] = bi;
    }
  }
}

void maxpool1d_backward(const Tensor2D& dy, const std::vector<int>& argmax,
                        Tensor2D& dx_acc) {
  const int C = dy.cols;
  for (int t = 0; t < dy.rows; ++t)
    for (int c = 0; c < C; ++c)
      dx_acc.at(argmax[(size_t)t * C + c], c) += dy.at(t, c);
}

void add_bias_rows(Tensor2D& y, const Tensor2D& b) {
  if ((int)b.size() != y.cols) throw ConfigError("add_bias_rows: bias length != cols");
  for (int t = 0; t < y.rows; ++t) {
    double* row = y.row(t);
    for (int j = 0; j < y.cols; ++j) row[j] += b.data[j];
  }
}

}  // namespace kwloc::kern
