#ifndef KWLOC_KERNELS_HPP
#define KWLOC_KERNELS_HPP

#include "kwloc/tensor.hpp"

// Register-tiled, OpenMP-parallel compute kernels. Every output element is
// produced by exactly one thread and its contraction runs in a fixed index
// order, so results are bitwise identical to the serial reference kernels
// (kernels_ref.hpp) for any thread count.
namespace kwloc::kern {

// Cap on worker threads (also settable via the KWLOC_THREADS env var in the
// CLI). 0 = hardware default.
void set_num_threads(int n);
int max_threads();

// C = A * B^T.  A: M x K, B: N x K, C: M x N.
void gemm_nt(const Tensor2D& a, const Tensor2D& b, Tensor2D& c);

// C += A * B.  A: M x K, B: K x N, C: M x N.
void gemm_nn_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c);

// C += A^T * B.  A: M x Na, B: M x Nb, C: Na x Nb.
void gemm_tn_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c);

// Unfold x (T x C) into xcol (T_out x C*width) with
// xcol[t][c*width + k] = x[t + k - padding][c], zero outside [0, T).
void im2col(const Tensor2D& x, int width, int padding, Tensor2D& xcol);

// Fold-accumulate the gradient of im2col: dx[t + k - padding][c] +=
// dxcol[t][c*width + k] for in-range taps. dx must be preallocated (T x C).
void col2im_acc(const Tensor2D& dxcol, int width, int padding, Tensor2D& dx);

// y = conv1d(x, w) + b.  x: T x C, w: F x (C*width) laid out [f][c*width+k]
// (row-major filters x in_dim x width), b: 1 x F, y: T_out x F with
// T_out = T + 2*padding - width + 1. xcol is a scratch/output argument and
// holds the unfolded input afterwards (the backward pass reuses it).
void conv1d_forward(const Tensor2D& x, const Tensor2D& w, const Tensor2D& b,
                    int width, int padding, Tensor2D& xcol, Tensor2D& y);

// Accumulates dW, db and dX for the layer above. dxcol_scratch is resized
// internally.
void conv1d_backward(const Tensor2D& dy, const Tensor2D& xcol, const Tensor2D& w,
                     int width, int padding, Tensor2D& dw_acc, Tensor2D& db_acc,
                     Tensor2D& dx_acc, Tensor2D& dxcol_scratch);

// Per-channel max over time windows. y: T' x C with T' = (T-width)/stride + 1,
// argmax: same shape, input row index of the (earliest) max per window.
void maxpool1d_forward(const Tensor2D& x, int width, int stride, Tensor2D& y,
                       std::vector<int>& argmax);
void maxpool1d_backward(const Tensor2D& dy, const std::vector<int>& argmax,
                        Tensor2D& dx_acc);

void add_bias_rows(Tensor2D& y, const Tensor2D& b);

}  // namespace kwloc::kern

#endif  // KWLOC_KERNELS_HPP
