// Serial reference vs OpenMP kernels: matrix products and corpus decoding.
#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "msnmt/decoding.hpp"
#include "msnmt/kernels.hpp"

using namespace msnmt;

namespace {

template <typename F>
double best_seconds(int reps, F&& f) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void bench_gemm(std::size_t n, int reps) {
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> a(n * n), b(n * n), c1(n * n), c2(n * n);
  for (auto& x : a) x = u(rng);
  for (auto& x : b) x = u(rng);
  const double ts = best_seconds(reps, [&] { kernels::serial::gemm_nn(a.data(), b.data(), c1.data(), n, n, n, false); });
  const double tp = best_seconds(reps, [&] { kernels::gemm_nn(a.data(), b.data(), c2.data(), n, n, n, false); });
  const double gflop = 2.0 * n * n * n / 1e9;
  std::printf("gemm_nn %4zu  serial %8.3f ms (%5.2f GF/s)  omp %8.3f ms (%5.2f GF/s)  speedup %5.2fx  identical %s\n", n,
              ts * 1e3, gflop / ts, tp * 1e3, gflop / tp, ts / tp, c1 == c2 ? "yes" : "NO");
}

void bench_decode(std::size_t sentences, int reps) {
  ModelConfig c;
  c.vocab_size = 200;
  c.embedding_dim = 64;
  c.hidden_dim = 128;
  c.image_dim = 64;
  c.train_policy = "3";
  const Model<float> model(c);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> tok(4, 199);
  std::uniform_int_distribution<std::size_t> len(5, 20);
  std::vector<Example> ex(sentences);
  for (auto& e : ex)
    for (std::size_t j = len(rng); j > 0; --j) e.source.push_back(tok(rng));
  const auto zeros = FeatureSource::zeros(1, 64);
  const int threads = omp_get_max_threads();
  std::vector<Hypothesis> h1, hn;
  omp_set_num_threads(1);
  kernels::set_parallel(false);
  const double ts = best_seconds(reps, [&] { h1 = translate_corpus(model, ex, Policy::wait_k(3), zeros); });
  omp_set_num_threads(threads);
  kernels::set_parallel(true);
  const double tp = best_seconds(reps, [&] { hn = translate_corpus(model, ex, Policy::wait_k(3), zeros); });
  std::printf("decode %zu sentences  serial %8.1f ms  omp(%d threads) %8.1f ms  speedup %5.2fx  identical %s\n",
              sentences, ts * 1e3, threads, tp * 1e3, ts / tp, h1 == hn ? "yes" : "NO");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel benchmark"};
  int reps = 3;
  std::size_t sentences = 1000;
  std::vector<std::size_t> sizes{64, 256, 512};
  app.add_option("--reps", reps);
  app.add_option("--sentences", sentences);
  app.add_option("--sizes", sizes);
  CLI11_PARSE(app, argc, argv);
  std::printf("threads available: %d\n", omp_get_max_threads());
  for (std::size_t n : sizes) bench_gemm(n, reps);
  bench_decode(sentences, reps);
}
