// Compares the serial reference kernels against the tiled/OpenMP kernels on
// the conv and classifier shapes the real architectures hit, and verifies
// bitwise agreement while at it.
#include <chrono>
#include <cstdio>
#include <vector>

#include "kwloc/kernels.hpp"
#include "kwloc/kernels_ref.hpp"
#include "kwloc/rng.hpp"
#include "kwloc/tensor.hpp"

using namespace kwloc;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor2D random_tensor(Rng& rng, int r, int c) {
  Tensor2D t(r, c);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

struct ConvCase {
  const char* label;
  int t, c, f, width, pad;
};

void bench_conv(const ConvCase& cc) {
  Rng rng(42);
  Tensor2D x = random_tensor(rng, cc.t, cc.c);
  Tensor2D w = random_tensor(rng, cc.f, cc.c * cc.width);
  Tensor2D b = random_tensor(rng, 1, cc.f);
  const double gmac = (double)cc.t * cc.f * cc.c * cc.width * 1e-9;
  const int reps = gmac > 0.05 ? 10 : 200;

  Tensor2D y_ref;
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) ref::conv1d_forward(x, w, b, cc.width, cc.pad, y_ref);
  const double s_ref = seconds_since(t0) / reps;

  Tensor2D xcol, y_opt;
  kern::set_num_threads(1);
  t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) kern::conv1d_forward(x, w, b, cc.width, cc.pad, xcol, y_opt);
  const double s_opt1 = seconds_since(t0) / reps;
  const bool same1 = bitwise_equal(y_ref, y_opt);

  kern::set_num_threads(0);  // hardware default
  t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) kern::conv1d_forward(x, w, b, cc.width, cc.pad, xcol, y_opt);
  const double s_optn = seconds_since(t0) / reps;
  const bool same_n = bitwise_equal(y_ref, y_opt);

  std::printf("%-28s %8.2f %10.2f %10.2f   %s\n", cc.label, gmac / s_ref, gmac / s_opt1,
              gmac / s_optn, same1 && same_n ? "bitwise-ok" : "MISMATCH");
}

void bench_gemm(const char* label, int m, int n, int k) {
  Rng rng(7);
  Tensor2D a = random_tensor(rng, m, k);
  Tensor2D b = random_tensor(rng, n, k);
  const double gmac = (double)m * n * k * 1e-9;
  const int reps = gmac > 0.05 ? 10 : 200;

  Tensor2D c_ref;
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) ref::gemm_nt(a, b, c_ref);
  const double s_ref = seconds_since(t0) / reps;

  Tensor2D c_opt;
  kern::set_num_threads(1);
  t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) kern::gemm_nt(a, b, c_opt);
  const double s_opt1 = seconds_since(t0) / reps;
  const bool same1 = bitwise_equal(c_ref, c_opt);

  kern::set_num_threads(0);
  t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) kern::gemm_nt(a, b, c_opt);
  const double s_optn = seconds_since(t0) / reps;
  const bool same_n = bitwise_equal(c_ref, c_opt);

  std::printf("%-28s %8.2f %10.2f %10.2f   %s\n", label, gmac / s_ref, gmac / s_opt1,
              gmac / s_optn, same1 && same_n ? "bitwise-ok" : "MISMATCH");
}

}  // namespace

int main() {
  std::printf("%-28s %8s %10s %10s\n", "kernel (GMAC/s)", "ref", "tiled x1", "tiled xN");
  bench_conv({"conv 13->96 w9 T=100", 100, 13, 96, 9, 4});
  bench_conv({"conv 96->96 w11 T=100", 100, 96, 96, 11, 5});
  bench_conv({"conv 96->1000 w11 T=100", 100, 96, 1000, 11, 5});
  bench_conv({"conv 256->1024 w11 T=33", 33, 256, 1024, 11, 5});
  bench_gemm("clf gemm 10x4096x1000", 10, 4096, 1000);
  bench_gemm("clf gemm 1x4096x1000", 1, 4096, 1000);
  return 0;
}
