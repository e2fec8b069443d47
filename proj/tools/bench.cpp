// Kernel benchmark: production kernels (serial and OpenMP-parallel paths)
// against the naive reference implementations, plus a full-model forward and
// training step. Prints one line per case with throughput.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "countnet/kernels.hpp"
#include "countnet/train.hpp"

using namespace countnet;

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(int repeats, const std::function<void()>& fn) {
  fn();  // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

void report(const std::string& name, double ms, double flops) {
  if (flops > 0) {
    std::printf("%-34s %10.3f ms   %8.2f GFLOP/s\n", name.c_str(), ms, flops / ms / 1e6);
  } else {
    std::printf("%-34s %10.3f ms\n", name.c_str(), ms);
  }
}

void bench_matmul(std::size_t m, std::size_t k, std::size_t n, int repeats) {
  Rng rng(1);
  std::vector<float> a(m * k), b(k * n), c(m * n);
  for (auto& v : a) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-1, 1));
  std::size_t z[1] = {0};
  const double flops = 2.0 * static_cast<double>(m) * k * n;
  const std::string dims = std::to_string(m) + "x" + std::to_string(k) + "x" + std::to_string(n);

  report("matmul reference " + dims,
         time_ms(repeats, [&] { kernels::reference::matmul(a.data(), b.data(), c.data(), m, k, n); }),
         flops);
  kernels::set_parallel(false);
  report("matmul kernel (serial) " + dims,
         time_ms(repeats, [&] { kernels::matmul(a.data(), b.data(), c.data(), z, z, 1, m, k, n); }),
         flops);
  kernels::set_parallel(true);
  report("matmul kernel (parallel) " + dims,
         time_ms(repeats, [&] { kernels::matmul(a.data(), b.data(), c.data(), z, z, 1, m, k, n); }),
         flops);
}

void bench_conv(std::size_t hw, std::size_t cin, std::size_t cout, int repeats) {
  Rng rng(2);
  std::vector<float> x(hw * hw * cin), w(9 * cin * cout), bias(cout), y(hw * hw * cout);
  for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
  for (auto& v : w) v = static_cast<float>(rng.uniform(-1, 1));
  const double flops = 2.0 * hw * hw * 9.0 * cin * cout;
  const std::string dims =
      std::to_string(hw) + "^2x" + std::to_string(cin) + "->" + std::to_string(cout);

  report("conv3x3 reference " + dims,
         time_ms(repeats, [&] {
           kernels::reference::conv2d(x.data(), w.data(), bias.data(), y.data(), 1, hw, hw, cin,
                                      cout, 3, 3);
         }),
         flops);
  kernels::set_parallel(false);
  report("conv3x3 kernel (serial) " + dims,
         time_ms(repeats, [&] {
           kernels::conv2d(x.data(), w.data(), bias.data(), y.data(), 1, hw, hw, cin, cout, 3, 3);
         }),
         flops);
  kernels::set_parallel(true);
  report("conv3x3 kernel (parallel) " + dims,
         time_ms(repeats, [&] {
           kernels::conv2d(x.data(), w.data(), bias.data(), y.data(), 1, hw, hw, cin, cout, 3, 3);
         }),
         flops);
}

void bench_softmax(std::size_t rows, std::size_t len, int repeats) {
  Rng rng(3);
  std::vector<float> x(rows * len), y(rows * len);
  for (auto& v : x) v = static_cast<float>(rng.uniform(-3, 3));
  const std::string dims = std::to_string(rows) + "x" + std::to_string(len);
  kernels::set_parallel(false);
  report("softmax kernel (serial) " + dims,
         time_ms(repeats, [&] { kernels::softmax(x.data(), y.data(), rows, len, 1); }), 0);
  kernels::set_parallel(true);
  report("softmax kernel (parallel) " + dims,
         time_ms(repeats, [&] { kernels::softmax(x.data(), y.data(), rows, len, 1); }), 0);
}

void bench_model(int repeats) {
  ModelConfig cfg;  // toy: K=2, dim 32, 64x64
  ModelRuntime rt(cfg, 1);
  Rng rng(4);
  Tensor<float> img(Shape{8, 64, 64, 3});
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform(0, 1));
  Tensor<float> target(Shape{8, 64, 64});

  report("model forward (batch 8)",
         time_ms(repeats, [&] { rt.model().predict(rt.params(), img); }), 0);
  report("model forward+backward (batch 8)", time_ms(repeats, [&] {
           Tape<float> tape;
           auto P = rt.params().bind_all(tape, true);
           Var<float> loss = density_loss(rt.model().forward(tape, P, tape.constant(img)),
                                          tape.constant(target), 100.0f);
           tape.backward(loss);
         }),
         0);
}

}  // namespace

int main(int argc, char** argv) {
  int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  std::printf("countnet kernel benchmark (repeats=%d)\n", repeats);
#if defined(_OPENMP)
  std::printf("openmp: enabled, max threads %d\n\n", omp_get_max_threads());
#else
  std::printf("openmp: disabled\n\n");
#endif
  bench_matmul(256, 256, 256, repeats);
  bench_matmul(2048, 32, 128, repeats);
  bench_conv(64, 16, 8, repeats);
  bench_softmax(4096, 256, repeats);
  std::printf("\n");
  bench_model(std::max(1, repeats / 2));
  return 0;
}
