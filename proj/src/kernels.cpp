#include "pnet/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstring>

namespace pnet::kernels {

namespace {
std::atomic<bool> g_parallel{true};

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// Dispatch thresholds: below these the OpenMP fork/join overhead dominates.
constexpr index_t kMatmulParThreshold = 1 << 15;   // m*k*n
constexpr index_t kRowParThreshold = 1 << 12;      // rows*cols
constexpr index_t kElemParThreshold = 1 << 13;     // n
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

namespace serial {

void matmul_nn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
  for (index_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::memset(crow, 0, static_cast<std::size_t>(n) * sizeof(double));
    const double* arow = a + i * k;
    for (index_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
  for (index_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (index_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (index_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void matmul_tn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
  for (index_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::memset(crow, 0, static_cast<std::size_t>(n) * sizeof(double));
    for (index_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* brow = b + p * n;
      for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace detail {

inline void softmax_row(double* y, const double* x, index_t cols) {
  double mx = x[0];
  for (index_t j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
  double sum = 0.0;
  for (index_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (index_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void masked_softmax_row(double* y, const double* x, const unsigned char* mask, index_t cols) {
  double mx = 0.0;
  bool any = false;
  for (index_t j = 0; j < cols; ++j) {
    if (!mask[j]) continue;
    if (!any || x[j] > mx) mx = x[j];
    any = true;
  }
  if (!any) {
    std::memset(y, 0, static_cast<std::size_t>(cols) * sizeof(double));
    return;
  }
  double sum = 0.0;
  for (index_t j = 0; j < cols; ++j) {
    if (mask[j]) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    } else {
      y[j] = 0.0;
    }
  }
  const double inv = 1.0 / sum;
  for (index_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void log_softmax_row(double* y, const double* x, index_t cols) {
  double mx = x[0];
  for (index_t j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
  double sum = 0.0;
  for (index_t j = 0; j < cols; ++j) sum += std::exp(x[j] - mx);
  const double lse = mx + std::log(sum);
  for (index_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
}

inline void softmax_backward_row(double* dx, const double* y, const double* dy, index_t cols, bool accumulate) {
  double dot = 0.0;
  for (index_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
  for (index_t j = 0; j < cols; ++j) {
    const double v = y[j] * (dy[j] - dot);
    dx[j] = accumulate ? dx[j] + v : v;
  }
}

inline void layer_norm_row(double* y, const double* x, const double* gain, const double* bias,
                           index_t cols, double eps, double* mean, double* rstd) {
  double mu = 0.0;
  for (index_t j = 0; j < cols; ++j) mu += x[j];
  mu /= static_cast<double>(cols);
  double var = 0.0;
  for (index_t j = 0; j < cols; ++j) {
    const double d = x[j] - mu;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double rs = 1.0 / std::sqrt(var + eps);
  for (index_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * rs * gain[j] + bias[j];
  *mean = mu;
  *rstd = rs;
}

// dgain/dbias accumulation stays serial across rows (single writer per column
// would need a transpose); callers pass per-thread buffers in the par variant.
inline void layer_norm_backward_row(double* dx, double* dgain, double* dbias,
                                    const double* x, const double* dy, const double* gain,
                                    double mean, double rstd, index_t cols) {
  const double inv_cols = 1.0 / static_cast<double>(cols);
  double sum_dxhat = 0.0;
  double sum_dxhat_xhat = 0.0;
  for (index_t j = 0; j < cols; ++j) {
    const double xhat = (x[j] - mean) * rstd;
    const double dxhat = dy[j] * gain[j];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
    dgain[j] += dy[j] * xhat;
    dbias[j] += dy[j];
  }
  for (index_t j = 0; j < cols; ++j) {
    const double xhat = (x[j] - mean) * rstd;
    const double dxhat = dy[j] * gain[j];
    dx[j] += rstd * (dxhat - inv_cols * sum_dxhat - xhat * inv_cols * sum_dxhat_xhat);
  }
}

inline double gelu_one(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad_one(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

inline void adam_one(double* param, double g, double* m, double* v,
                     double lr, double beta1, double beta2, double eps,
                     double beta1_pow, double beta2_pow) {
  *m = beta1 * *m + (1.0 - beta1) * g;
  *v = beta2 * *v + (1.0 - beta2) * g * g;
  const double mhat = *m / (1.0 - beta1_pow);
  const double vhat = *v / (1.0 - beta2_pow);
  *param -= lr * mhat / (std::sqrt(vhat) + eps);
}

}  // namespace detail

void softmax_rows(double* y, const double* x, index_t rows, index_t cols) {
  for (index_t r = 0; r < rows; ++r) detail::softmax_row(y + r * cols, x + r * cols, cols);
}

void masked_softmax_rows(double* y, const double* x, const unsigned char* mask, index_t rows, index_t cols) {
  for (index_t r = 0; r < rows; ++r)
    detail::masked_softmax_row(y + r * cols, x + r * cols, mask + r * cols, cols);
}

void log_softmax_rows(double* y, const double* x, index_t rows, index_t cols) {
  for (index_t r = 0; r < rows; ++r) detail::log_softmax_row(y + r * cols, x + r * cols, cols);
}

void softmax_backward_rows(double* dx, const double* y, const double* dy, index_t rows, index_t cols, bool accumulate) {
  for (index_t r = 0; r < rows; ++r)
    detail::softmax_backward_row(dx + r * cols, y + r * cols, dy + r * cols, cols, accumulate);
}

void layer_norm_rows(double* y, const double* x, const double* gain, const double* bias,
                     index_t rows, index_t cols, double eps, double* mean, double* rstd) {
  for (index_t r = 0; r < rows; ++r)
    detail::layer_norm_row(y + r * cols, x + r * cols, gain, bias, cols, eps, mean + r, rstd + r);
}

void layer_norm_backward_rows(double* dx, double* dgain, double* dbias,
                              const double* x, const double* dy, const double* gain,
                              const double* mean, const double* rstd, index_t rows, index_t cols) {
  for (index_t r = 0; r < rows; ++r)
    detail::layer_norm_backward_row(dx + r * cols, dgain, dbias, x + r * cols, dy + r * cols,
                                    gain, mean[r], rstd[r], cols);
}

void gelu(double* y, const double* x, index_t n) {
  for (index_t i = 0; i < n; ++i) y[i] = detail::gelu_one(x[i]);
}

void gelu_backward(double* dx, const double* x, const double* dy, index_t n) {
  for (index_t i = 0; i < n; ++i) dx[i] += dy[i] * detail::gelu_grad_one(x[i]);
}

void add(double* y, const double* a, const double* b, index_t n) {
  for (index_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void mul(double* y, const double* a, const double* b, index_t n) {
  for (index_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy(double* y, double alpha, const double* x, index_t n, bool accumulate) {
  if (accumulate) {
    for (index_t i = 0; i < n; ++i) y[i] += alpha * x[i];
  } else {
    for (index_t i = 0; i < n; ++i) y[i] = alpha * x[i];
  }
}

void adam_update(double* param, const double* grad, double* m, double* v, index_t n,
                 double lr, double beta1, double beta2, double eps,
                 double beta1_pow, double beta2_pow) {
  for (index_t i = 0; i < n; ++i)
    detail::adam_one(param + i, grad[i], m + i, v + i, lr, beta1, beta2, eps, beta1_pow, beta2_pow);
}

}  // namespace serial

namespace par {

void matmul_nn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::memset(crow, 0, static_cast<std::size_t>(n) * sizeof(double));
    const double* arow = a + i * k;
    for (index_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (index_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (index_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void matmul_tn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!accumulate) std::memset(crow, 0, static_cast<std::size_t>(n) * sizeof(double));
    for (index_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* brow = b + p * n;
      for (index_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void softmax_rows(double* y, const double* x, index_t rows, index_t cols) {
#pragma omp parallel for schedule(static)
  for (index_t r = 0; r < rows; ++r) serial::detail::softmax_row(y + r * cols, x + r * cols, cols);
}

void masked_softmax_rows(double* y, const double* x, const unsigned char* mask, index_t rows, index_t cols) {
#pragma omp parallel for schedule(static)
  for (index_t r = 0; r < rows; ++r)
    serial::detail::masked_softmax_row(y + r * cols, x + r * cols, mask + r * cols, cols);
}

void log_softmax_rows(double* y, const double* x, index_t rows, index_t cols) {
#pragma omp parallel for schedule(static)
  for (index_t r = 0; r < rows; ++r) serial::detail::log_softmax_row(y + r * cols, x + r * cols, cols);
}

void softmax_backward_rows(double* dx, const double* y, const double* dy, index_t rows, index_t cols, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (index_t r = 0; r < rows; ++r)
    serial::detail::softmax_backward_row(dx + r * cols, y + r * cols, dy + r * cols, cols, accumulate);
}

void layer_norm_rows(double* y, const double* x, const double* gain, const double* bias,
                     index_t rows, index_t cols, double eps, double* mean, double* rstd) {
#pragma omp parallel for schedule(static)
  for (index_t r = 0; r < rows; ++r)
    serial::detail::layer_norm_row(y + r * cols, x + r * cols, gain, bias, cols, eps, mean + r, rstd + r);
}

void layer_norm_backward_rows(double* dx, double* dgain, double* dbias,
                              const double* x, const double* dy, const double* gain,
                              const double* mean, const double* rstd, index_t rows, index_t cols) {
  // dgain/dbias are shared accumulators across rows; keep the row loop serial
  // so accumulation order is fixed. dx rows are independent but cheap.
  serial::layer_norm_backward_rows(dx, dgain, dbias, x, dy, gain, mean, rstd, rows, cols);
}

void gelu(double* y, const double* x, index_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < n; ++i) y[i] = serial::detail::gelu_one(x[i]);
}

void gelu_backward(double* dx, const double* x, const double* dy, index_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < n; ++i) dx[i] += dy[i] * serial::detail::gelu_grad_one(x[i]);
}

void add(double* y, const double* a, const double* b, index_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void mul(double* y, const double* a, const double* b, index_t n) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy(double* y, double alpha, const double* x, index_t n, bool accumulate) {
  if (accumulate) {
#pragma omp parallel for schedule(static)
    for (index_t i = 0; i < n; ++i) y[i] += alpha * x[i];
  } else {
#pragma omp parallel for schedule(static)
    for (index_t i = 0; i < n; ++i) y[i] = alpha * x[i];
  }
}

void adam_update(double* param, const double* grad, double* m, double* v, index_t n,
                 double lr, double beta1, double beta2, double eps,
                 double beta1_pow, double beta2_pow) {
#pragma omp parallel for schedule(static)
  for (index_t i = 0; i < n; ++i)
    serial::detail::adam_one(param + i, grad[i], m + i, v + i, lr, beta1, beta2, eps, beta1_pow, beta2_pow);
}

}  // namespace par

void matmul_nn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
  if (parallel_enabled() && m * k * n >= kMatmulParThreshold && m > 1)
    par::matmul_nn(c, a, b, m, k, n, accumulate);
  else
    serial::matmul_nn(c, a, b, m, k, n, accumulate);
}

void matmul_nt(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
  if (parallel_enabled() && m * k * n >= kMatmulParThreshold && m > 1)
    par::matmul_nt(c, a, b, m, k, n, accumulate);
  else
    serial::matmul_nt(c, a, b, m, k, n, accumulate);
}

void matmul_tn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate) {
  if (parallel_enabled() && m * k * n >= kMatmulParThreshold && m > 1)
    par::matmul_tn(c, a, b, m, k, n, accumulate);
  else
    serial::matmul_tn(c, a, b, m, k, n, accumulate);
}

void softmax_rows(double* y, const double* x, index_t rows, index_t cols) {
  if (parallel_enabled() && rows * cols >= kRowParThreshold && rows > 1)
    par::softmax_rows(y, x, rows, cols);
  else
    serial::softmax_rows(y, x, rows, cols);
}

void masked_softmax_rows(double* y, const double* x, const unsigned char* mask, index_t rows, index_t cols) {
  if (parallel_enabled() && rows * cols >= kRowParThreshold && rows > 1)
    par::masked_softmax_rows(y, x, mask, rows, cols);
  else
    serial::masked_softmax_rows(y, x, mask, rows, cols);
}

void log_softmax_rows(double* y, const double* x, index_t rows, index_t cols) {
  if (parallel_enabled() && rows * cols >= kRowParThreshold && rows > 1)
    par::log_softmax_rows(y, x, rows, cols);
  else
    serial::log_softmax_rows(y, x, rows, cols);
}

void softmax_backward_rows(double* dx, const double* y, const double* dy, index_t rows, index_t cols, bool accumulate) {
  if (parallel_enabled() && rows * cols >= kRowParThreshold && rows > 1)
    par::softmax_backward_rows(dx, y, dy, rows, cols, accumulate);
  else
    serial::softmax_backward_rows(dx, y, dy, rows, cols, accumulate);
}

void layer_norm_rows(double* y, const double* x, const double* gain, const double* bias,
                     index_t rows, index_t cols, double eps, double* mean, double* rstd) {
  if (parallel_enabled() && rows * cols >= kRowParThreshold && rows > 1)
    par::layer_norm_rows(y, x, gain, bias, rows, cols, eps, mean, rstd);
  else
    serial::layer_norm_rows(y, x, gain, bias, rows, cols, eps, mean, rstd);
}

void layer_norm_backward_rows(double* dx, double* dgain, double* dbias,
                              const double* x, const double* dy, const double* gain,
                              const double* mean, const double* rstd, index_t rows, index_t cols) {
  serial::layer_norm_backward_rows(dx, dgain, dbias, x, dy, gain, mean, rstd, rows, cols);
}

void gelu(double* y, const double* x, index_t n) {
  if (parallel_enabled() && n >= kElemParThreshold)
    par::gelu(y, x, n);
  else
    serial::gelu(y, x, n);
}

void gelu_backward(double* dx, const double* x, const double* dy, index_t n) {
  if (parallel_enabled() && n >= kElemParThreshold)
    par::gelu_backward(dx, x, dy, n);
  else
    serial::gelu_backward(dx, x, dy, n);
}

void add(double* y, const double* a, const double* b, index_t n) {
  if (parallel_enabled() && n >= kElemParThreshold)
    par::add(y, a, b, n);
  else
    serial::add(y, a, b, n);
}

void mul(double* y, const double* a, const double* b, index_t n) {
  if (parallel_enabled() && n >= kElemParThreshold)
    par::mul(y, a, b, n);
  else
    serial::mul(y, a, b, n);
}

void axpy(double* y, double alpha, const double* x, index_t n, bool accumulate) {
  if (parallel_enabled() && n >= kElemParThreshold)
    par::axpy(y, alpha, x, n, accumulate);
  else
    serial::axpy(y, alpha, x, n, accumulate);
}

void adam_update(double* param, const double* grad, double* m, double* v, index_t n,
                 double lr, double beta1, double beta2, double eps,
                 double beta1_pow, double beta2_pow) {
  if (parallel_enabled() && n >= kElemParThreshold)
    par::adam_update(param, grad, m, v, n, lr, beta1, beta2, eps, beta1_pow, beta2_pow);
  else
    serial::adam_update(param, grad, m, v, n, lr, beta1, beta2, eps, beta1_pow, beta2_pow);
}

}  // namespace pnet::kernels
