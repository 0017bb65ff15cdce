#include "kwloc/tape.hpp"

#include <algorithm>
#include <cmath>

#include "kwloc/kernels.hpp"
#include "kwloc/numerics.hpp"

namespace kwloc {

ValId GradTape::push(Tensor2D v) {
  slots_.push_back(Slot{std::move(v), nullptr, {}});
  return (ValId)slots_.size() - 1;
}

ValId GradTape::leaf(Tensor2D v) { return push(std::move(v)); }

ValId GradTape::param(const Tensor2D* p) {
  slots_.push_back(Slot{{}, p, {}});
  return (ValId)slots_.size() - 1;
}

ValId GradTape::conv1d(ValId x, ValId w, ValId b, int width, int padding) {
  const Tensor2D& xv = val(x);
  const Tensor2D& wv = val(w);
  const Tensor2D& bv = val(b);
  if (wv.cols != xv.cols * width)
    throw ConfigError("conv1d: input dim " + std::to_string(xv.cols) +
                      " incompatible with weights for width " + std::to_string(width));
  const int t_out = xv.rows + 2 * padding - width + 1;
  if (t_out < 1)
    throw ConfigError("conv1d: output length " + std::to_string(t_out) + " < 1");
  Tensor2D xcol, y;
  kern::conv1d_forward(xv, wv, bv, width, padding, xcol, y);
  ValId out = push(std::move(y));
  back_ops_.push_back([this, x, w, b, out, width, padding, xcol = std::move(xcol)]() {
    Tensor2D scratch;
    kern::conv1d_backward(g(out), xcol, val(w), width, padding, g(w), g(b), g(x), scratch);
  });
  return out;
}

ValId GradTape::relu(ValId x) {
  Tensor2D y = val(x);
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  ValId out = push(std::move(y));
  back_ops_.push_back([this, x, out]() {
    const Tensor2D& xv = val(x);
    const Tensor2D& dy = g(out);
    Tensor2D& dx = g(x);
    for (size_t i = 0; i < dx.size(); ++i)
      if (xv.data[i] > 0.0) dx.data[i] += dy.data[i];
  });
  return out;
}

ValId GradTape::sigmoid(ValId x) {
  Tensor2D y = val(x);
  for (double& v : y.data) v = kwloc::sigmoid(v);
  ValId out = push(std::move(y));
  back_ops_.push_back([this, x, out]() {
    const Tensor2D& yv = val(out);
    const Tensor2D& dy = g(out);
    Tensor2D& dx = g(x);
    for (size_t i = 0; i < dx.size(); ++i)
      dx.data[i] += dy.data[i] * yv.data[i] * (1.0 - yv.data[i]);
  });
  return out;
}

ValId GradTape::maxpool1d(ValId x, int width, int stride) {
  Tensor2D y;
  std::vector<int> argmax;
  kern::maxpool1d_forward(val(x), width, stride, y, argmax);
  ValId out = push(std::move(y));
  back_ops_.push_back([this, x, out, argmax = std::move(argmax)]() {
    kern::maxpool1d_backward(g(out), argmax, g(x));
  });
  return out;
}

ValId GradTape::linear(ValId x, ValId w, ValId b) {
  const Tensor2D& xv = val(x);
  const Tensor2D& wv = val(w);
  if (xv.cols != wv.cols)
    throw ConfigError("linear: input dim " + std::to_string(xv.cols) +
                      " != weight in_dim " + std::to_string(wv.cols));
  Tensor2D y;
  kern::gemm_nt(xv, wv, y);
  kern::add_bias_rows(y, val(b));
  ValId out = push(std::move(y));
  back_ops_.push_back([this, x, w, b, out]() {
    const Tensor2D& dy = g(out);
    kern::gemm_nn_acc(dy, val(w), g(x));  // dX += dY W
    kern::gemm_tn_acc(dy, val(x), g(w));  // dW += dY^T X
    Tensor2D& db = g(b);
    for (int t = 0; t < dy.rows; ++t)
      for (int j = 0; j < dy.cols; ++j) db.data[j] += dy.at(t, j);
  });
  return out;
}

ValId GradTape::matmul_nt(ValId a, ValId b) {
  if (val(a).cols != val(b).cols) throw ConfigError("matmul_nt: inner dims differ");
  Tensor2D y;
  kern::gemm_nt(val(a), val(b), y);
  ValId out = push(std::move(y));
  back_ops_.push_back([this, a, b, out]() {
    const Tensor2D& dy = g(out);
    kern::gemm_nn_acc(dy, val(b), g(a));  // dA += dY B
    kern::gemm_tn_acc(dy, val(a), g(b));  // dB += dY^T A
  });
  return out;
}

ValId GradTape::matmul_tn(ValId a, ValId b) {
  if (val(a).rows != val(b).rows) throw ConfigError("matmul_tn: row counts differ");
  // y = a^T b done as tn-accumulate into a fresh zero tensor
  Tensor2D y(val(a).cols, val(b).cols);
  kern::gemm_tn_acc(val(a), val(b), y);
  ValId out = push(std::move(y));
  back_ops_.push_back([this, a, b, out]() {
    const Tensor2D& dy = g(out);
    // dA += B dY^T : scratch = gemm_nt(B, dY) then accumulate
    Tensor2D scratch;
    kern::gemm_nt(val(b), dy, scratch);
    Tensor2D& da = g(a);
    for (size_t i = 0; i < da.size(); ++i) da.data[i] += scratch.data[i];
    kern::gemm_nn_acc(val(a), dy, g(b));  // dB += A dY
  });
  return out;
}

ValId GradTape::col_softmax(ValId x) {
  const Tensor2D& xv = val(x);
  Tensor2D y(xv.rows, xv.cols);
  const int T = xv.rows, C = xv.cols;
  for (int c = 0; c < C; ++c) {
    double m = xv.at(0, c);
    for (int t = 1; t < T; ++t) m = std::max(m, xv.at(t, c));
    double denom = 0.0;
    for (int t = 0; t < T; ++t) {
      y.at(t, c) = std::exp(xv.at(t, c) - m);
      denom += y.at(t, c);
    }
    for (int t = 0; t < T; ++t) y.at(t, c) /= denom;
  }
  ValId out = push(std::move(y));
  back_ops_.push_back([this, x, out]() {
    const Tensor2D& yv = val(out);
    const Tensor2D& dy = g(out);
    Tensor2D& dx = g(x);
    const int T = yv.rows, C = yv.cols;
    for (int c = 0; c < C; ++c) {
      double dot = 0.0;
      for (int t = 0; t < T; ++t) dot += yv.at(t, c) * dy.at(t, c);
      for (int t = 0; t < T; ++t) dx.at(t, c) += yv.at(t, c) * (dy.at(t, c) - dot);
    }
  });
  return out;
}

ValId GradTape::lme_pool(ValId h, double r) {
  if (r <= 0.0) throw ConfigError("lme_pool: sharpness r must be > 0");
  const Tensor2D& hv = val(h);
  const int T = hv.rows, C = hv.cols;
  Tensor2D y(1, C);
  Tensor2D weights(T, C);  // softmax_t(r h), saved for backward
  for (int c = 0; c < C; ++c) {
    double m = hv.at(0, c);
    for (int t = 1; t < T; ++t) m = std::max(m, hv.at(t, c));
    double denom = 0.0;
    for (int t = 0; t < T; ++t) {
      weights.at(t, c) = std::exp(r * (hv.at(t, c) - m));
      denom += weights.at(t, c);
    }
    y.at(0, c) = m + std::log(denom / (double)T) / r;
    for (int t = 0; t < T; ++t) weights.at(t, c) /= denom;
  }
  ValId out = push(std::move(y));
  back_ops_.push_back([this, h, out, weights = std::move(weights)]() {
    const Tensor2D& dy = g(out);
    Tensor2D& dh = g(h);
    for (int t = 0; t < dh.rows; ++t)
      for (int c = 0; c < dh.cols; ++c) dh.at(t, c) += dy.at(0, c) * weights.at(t, c);
  });
  return out;
}

ValId GradTape::col_max_pool(ValId h) {
  const Tensor2D& hv = val(h);
  const int T = hv.rows, C = hv.cols;
  Tensor2D y(1, C);
  std::vector<int> arg(C, 0);
  for (int c = 0; c < C; ++c) {
    double best = hv.at(0, c);
    int bi = 0;
    for (int t = 1; t < T; ++t)
      if (hv.at(t, c) > best) {
        best = hv.at(t, c);
        bi = t;
      }
    y.at(0, c) = best;
    arg[c] = bi;
  }
  ValId out = push(std::move(y));
  back_ops_.push_back([this, h, out, arg = std::move(arg)]() {
    const Tensor2D& dy = g(out);
    Tensor2D& dh = g(h);
    for (int c = 0; c < dh.cols; ++c) dh.at(arg[c], c) += dy.at(0, c);
  });
  return out;
}

ValId GradTape::bce_loss(ValId y_hat, Tensor2D target) {
  const Tensor2D& p = val(y_hat);
  if (!p.same_shape(target)) throw ConfigError("bce_loss: prediction/target shapes differ");
  Tensor2D loss(1, 1);
  loss.at(0, 0) = kwloc::bce_loss(p.data.data(), target.data.data(), p.size());
  ValId out = push(std::move(loss));
  back_ops_.push_back([this, y_hat, out, target = std::move(target)]() {
    const double dl = g(out).at(0, 0);
    const Tensor2D& p = val(y_hat);
    Tensor2D& dp = g(y_hat);
    const double n = (double)p.size();
    for (size_t i = 0; i < p.size(); ++i) {
      const double v = p.data[i];
      if (v <= kBceEps || v >= 1.0 - kBceEps) continue;  // clamped: flat
      dp.data[i] += dl * (-target.data[i] / v + (1.0 - target.data[i]) / (1.0 - v)) / n;
    }
  });
  return out;
}

ValId GradTape::weighted_sum(ValId x, Tensor2D coeffs) {
  const Tensor2D& xv = val(x);
  if (!xv.same_shape(coeffs)) throw ConfigError("weighted_sum: shape mismatch");
  Tensor2D y(1, 1);
  double acc = 0.0;
  for (size_t i = 0; i < xv.size(); ++i) acc += xv.data[i] * coeffs.data[i];
  y.at(0, 0) = acc;
  ValId out = push(std::move(y));
  back_ops_.push_back([this, x, out, coeffs = std::move(coeffs)]() {
    const double dl = g(out).at(0, 0);
    Tensor2D& dx = g(x);
    for (size_t i = 0; i < dx.size(); ++i) dx.data[i] += dl * coeffs.data[i];
  });
  return out;
}

std::pair<ValId, ValId> GradTape::dot_attention(ValId h, ValId q) {
  const Tensor2D& qv = val(q);
  if (qv.rows != 1 || qv.cols != val(h).cols)
    throw ConfigError("dot_attention: query must be 1 x encoder_dim");
  ValId e = matmul_nt(h, q);        // T x 1 similarity scores
  ValId a = col_softmax(e);         // attention weights
  ValId ctx = matmul_tn(a, h);      // 1 x K context
  return {a, ctx};
}

void GradTape::backward(ValId out, int row, int col) {
  if (swept_) throw InternalError("GradTape: backward called twice");
  swept_ = true;
  for (auto& s : slots_) {
    const Tensor2D& v = s.ext ? *s.ext : s.own;
    s.grad = Tensor2D(v.rows, v.cols);
  }
  g(out).at(row, col) = 1.0;
  for (auto it = back_ops_.rbegin(); it != back_ops_.rend(); ++it) (*it)();
}

}  // namespace kwloc
