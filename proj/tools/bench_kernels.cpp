// Times the serial reference kernels against the OpenMP variants and checks
// that both produce bit-identical output on the same inputs.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "pnet/kernels.hpp"
#include "pnet/rng.hpp"

namespace {

using pnet::kernels::index_t;

double time_best_of(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (s < best) best = s;
  }
  return best;
}

std::vector<double> random_vec(std::size_t n, pnet::Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.next_normal();
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Row {
  std::string name;
  double serial_s = 0;
  double par_s = 0;
  bool identical = false;
};

void print_row(const Row& r) {
  std::printf("%-28s %10.3f ms %10.3f ms   x%.2f   %s\n", r.name.c_str(), r.serial_s * 1e3,
              r.par_s * 1e3, r.serial_s / r.par_s, r.identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  namespace sk = pnet::kernels::serial;
  namespace pk = pnet::kernels::par;
  pnet::Rng rng(42);

#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP not enabled in this build\n");
#endif
  std::printf("%-28s %13s %13s %8s\n", "kernel", "serial", "parallel", "speedup");

  const int reps = 5;
  bool all_identical = true;
  auto finish = [&](Row r) {
    print_row(r);
    all_identical = all_identical && r.identical;
  };

  {
    const index_t m = 256, k = 256, n = 256;
    const auto a = random_vec(static_cast<std::size_t>(m * k), rng);
    const auto b = random_vec(static_cast<std::size_t>(k * n), rng);
    std::vector<double> cs(static_cast<std::size_t>(m * n)), cp(cs.size());
    Row r{"matmul_nn 256x256x256"};
    r.serial_s = time_best_of(reps, [&] { sk::matmul_nn(cs.data(), a.data(), b.data(), m, k, n, false); });
    r.par_s = time_best_of(reps, [&] { pk::matmul_nn(cp.data(), a.data(), b.data(), m, k, n, false); });
    r.identical = bit_equal(cs, cp);
    finish(r);
  }
  {
    const index_t m = 256, k = 256, n = 256;
    const auto a = random_vec(static_cast<std::size_t>(m * k), rng);
    const auto b = random_vec(static_cast<std::size_t>(n * k), rng);
    std::vector<double> cs(static_cast<std::size_t>(m * n)), cp(cs.size());
    Row r{"matmul_nt 256x256x256"};
    r.serial_s = time_best_of(reps, [&] { sk::matmul_nt(cs.data(), a.data(), b.data(), m, k, n, false); });
    r.par_s = time_best_of(reps, [&] { pk::matmul_nt(cp.data(), a.data(), b.data(), m, k, n, false); });
    r.identical = bit_equal(cs, cp);
    finish(r);
  }
  {
    const index_t rows = 4096, cols = 512;
    const auto x = random_vec(static_cast<std::size_t>(rows * cols), rng);
    std::vector<double> ys(x.size()), yp(x.size());
    Row r{"softmax_rows 4096x512"};
    r.serial_s = time_best_of(reps, [&] { sk::softmax_rows(ys.data(), x.data(), rows, cols); });
    r.par_s = time_best_of(reps, [&] { pk::softmax_rows(yp.data(), x.data(), rows, cols); });
    r.identical = bit_equal(ys, yp);
    finish(r);
  }
  {
    const index_t rows = 4096, cols = 512;
    const auto x = random_vec(static_cast<std::size_t>(rows * cols), rng);
    const auto gain = random_vec(static_cast<std::size_t>(cols), rng);
    const auto bias = random_vec(static_cast<std::size_t>(cols), rng);
    std::vector<double> ys(x.size()), yp(x.size());
    std::vector<double> mean_s(rows), rstd_s(rows), mean_p(rows), rstd_p(rows);
    Row r{"layer_norm_rows 4096x512"};
    r.serial_s = time_best_of(reps, [&] {
      sk::layer_norm_rows(ys.data(), x.data(), gain.data(), bias.data(), rows, cols, 1e-5,
                          mean_s.data(), rstd_s.data());
    });
    r.par_s = time_best_of(reps, [&] {
      pk::layer_norm_rows(yp.data(), x.data(), gain.data(), bias.data(), rows, cols, 1e-5,
                          mean_p.data(), rstd_p.data());
    });
    r.identical = bit_equal(ys, yp) && bit_equal(mean_s, mean_p) && bit_equal(rstd_s, rstd_p);
    finish(r);
  }
  {
    const index_t n = 1 << 22;
    const auto x = random_vec(static_cast<std::size_t>(n), rng);
    std::vector<double> ys(x.size()), yp(x.size());
    Row r{"gelu 4M"};
    r.serial_s = time_best_of(reps, [&] { sk::gelu(ys.data(), x.data(), n); });
    r.par_s = time_best_of(reps, [&] { pk::gelu(yp.data(), x.data(), n); });
    r.identical = bit_equal(ys, yp);
    finish(r);
  }
  {
    const index_t n = 1 << 22;
    const auto g = random_vec(static_cast<std::size_t>(n), rng);
    std::vector<double> ps(static_cast<std::size_t>(n), 0.1), pp = ps;
    std::vector<double> ms(static_cast<std::size_t>(n), 0.0), mp = ms;
    std::vector<double> vs(static_cast<std::size_t>(n), 0.0), vp = vs;
    Row r{"adam_update 4M"};
    r.serial_s = time_best_of(reps, [&] {
      sk::adam_update(ps.data(), g.data(), ms.data(), vs.data(), n, 1e-3, 0.9, 0.999, 1e-8, 0.9, 0.999);
    });
    r.par_s = time_best_of(reps, [&] {
      pk::adam_update(pp.data(), g.data(), mp.data(), vp.data(), n, 1e-3, 0.9, 0.999, 1e-8, 0.9, 0.999);
    });
    r.identical = bit_equal(ps, pp) && bit_equal(ms, mp) && bit_equal(vs, vp);
    finish(r);
  }

  if (!all_identical) {
    std::printf("FAILED: serial and parallel kernels disagree\n");
    return 1;
  }
  std::printf("all kernels bit-identical across variants\n");
  return 0;
}
