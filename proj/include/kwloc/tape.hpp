#ifndef KWLOC_TAPE_HPP
#define KWLOC_TAPE_HPP

#include <functional>
#include <utility>
#include <vector>

#include "kwloc/tensor.hpp"

namespace kwloc {

using ValId = int;

// Reverse-mode tape over Tensor2D values. Ops append themselves in execution
// order (a Wengert list), so backward() is a single reverse sweep; every
// activation and unfolded input needed by an adjoint is captured by the op's
// closure. Single-threaded per tape; kernels may parallelize internally.
class GradTape {
 public:
  // Leaf holding its own value (features, constants).
  ValId leaf(Tensor2D v);
  // Leaf borrowing an external tensor (model parameters). The pointee must
  // outlive the tape.
  ValId param(const Tensor2D* p);

  const Tensor2D& val(ValId id) const { return slots_[id].ext ? *slots_[id].ext : slots_[id].own; }
  // Valid after backward(); zero tensor for slots the output does not reach.
  const Tensor2D& grad(ValId id) const { return slots_[id].grad; }

  // y[t][f] = sum_{c,k} x[t+k-pad][c] * w[f][c*width+k] + b[f]
  ValId conv1d(ValId x, ValId w, ValId b, int width, int padding);
  ValId relu(ValId x);
  ValId sigmoid(ValId x);
  ValId maxpool1d(ValId x, int width, int stride);
  // y = x * W^T + b; x: T x in, w: out x in, b: 1 x out
  ValId linear(ValId x, ValId w, ValId b);
  ValId matmul_nt(ValId a, ValId b);  // a * b^T
  ValId matmul_tn(ValId a, ValId b);  // a^T * b
  // softmax over rows (time) independently per column
  ValId col_softmax(ValId x);
  // 1 x C from T x C: (1/r) log mean_t exp(r h)
  ValId lme_pool(ValId h, double r);
  // 1 x C from T x C: max over time, earliest-index ties
  ValId col_max_pool(ValId h);
  // scalar (1x1): mean over entries of -[y log p + (1-y) log(1-p)],
  // p = clamp(y_hat, 1e-7, 1-1e-7); target entries must lie in [0,1]
  ValId bce_loss(ValId y_hat, Tensor2D target);
  // scalar (1x1): sum of coeffs[i][j] * x[i][j]
  ValId weighted_sum(ValId x, Tensor2D coeffs);
  // weights (T x 1) = softmax_t(H q^T), context (1 x K) = weights^T H
  std::pair<ValId, ValId> dot_attention(ValId h, ValId q);

  // Seed d out[row][col] = 1 and sweep. One backward per tape.
  void backward(ValId out, int row = 0, int col = 0);

 private:
  struct Slot {
    Tensor2D own;
    const Tensor2D* ext = nullptr;
    Tensor2D grad;
  };
  ValId push(Tensor2D v);
  Tensor2D& g(ValId id) { return slots_[id].grad; }

  std::vector<Slot> slots_;
  std::vector<std::function<void()>> back_ops_;
  bool swept_ = false;
};

}  // namespace kwloc

#endif  // KWLOC_TAPE_HPP
