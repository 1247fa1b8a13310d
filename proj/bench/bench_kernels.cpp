// Compares the serial reference kernels against the OpenMP kernels on the matrix
// shapes the backbones actually use. Also doubles as a throughput calibration tool.
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "reppad/kernels.hpp"
#include "reppad/rng.hpp"

using reppad::Rng;
namespace K = reppad::kernels;

namespace {

struct Shape {
  const char* name;
  int64_t m, n, k;
};

template <class F>
double time_best_ms(F&& fn, int reps) {
  double best = 1e100;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void fill(std::vector<float>& v, Rng& rng) {
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
}

}  // namespace

int main() {
  std::printf("threads available: %d\n", K::thread_count());
  const Shape shapes[] = {
      {"gru gate      (256x64)*(64x64)", 256, 64, 64},
      {"proj      (256*50 x64)*(64x64)", 12800, 64, 64},
      {"tied logits (4096x64)*(2001x64)^T", 4096, 2001, 64},
      {"big square        (512x512x512)", 512, 512, 512},
  };
  std::printf("%-38s %10s %10s %8s %9s\n", "shape", "serial ms", "omp ms", "speedup",
              "GF/s(omp)");
  Rng rng(42);
  for (const auto& s : shapes) {
    std::vector<float> A(s.m * s.k), B(s.k * s.n), C(s.m * s.n, 0.f);
    fill(A, rng);
    fill(B, rng);
    bool nt = std::string(s.name).find('^') != std::string::npos;
    if (nt) B.assign(s.n * s.k, 0.5f);
    auto run_serial = [&] {
      if (nt)
        K::gemm_nt_serial<float>(s.m, s.n, s.k, A.data(), s.k, B.data(), s.k, C.data(),
                                 s.n);
      else
        K::gemm_nn_serial<float>(s.m, s.n, s.k, A.data(), s.k, B.data(), s.n, C.data(),
                                 s.n);
    };
    auto run_omp = [&] {
      if (nt)
        K::gemm_nt_omp<float>(s.m, s.n, s.k, A.data(), s.k, B.data(), s.k, C.data(),
                              s.n);
      else
        K::gemm_nn_omp<float>(s.m, s.n, s.k, A.data(), s.k, B.data(), s.n, C.data(),
                              s.n);
    };
    double ms_s = time_best_ms(run_serial, 5);
    double ms_p = time_best_ms(run_omp, 5);
    double gf = 2.0 * s.m * s.n * s.k / (ms_p * 1e6);
    std::printf("%-38s %10.3f %10.3f %7.2fx %9.2f\n", s.name, ms_s, ms_p, ms_s / ms_p,
                gf);
  }
  return 0;
}
