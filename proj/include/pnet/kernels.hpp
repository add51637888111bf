#pragma once

#include <cstdint>

// Dense numeric kernels. Every kernel exists twice: a plain serial reference
// under kernels::serial and an OpenMP variant under kernels::par. The
// unqualified functions dispatch between them at runtime.
//
// Parallel variants split only the outer (row/element) loop; every output
// element is written by exactly one thread and inner reductions run in a
// fixed ascending order, so serial and parallel results are bit-identical
// for any thread count.
namespace pnet::kernels {

using index_t = std::int64_t;

bool parallel_enabled();
void set_parallel(bool on);

namespace serial {

// C[M,N] (+)= A[M,K] * B[K,N]
void matmul_nn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate);
// C[M,N] (+)= A[M,K] * B[N,K]^T
void matmul_nt(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate);
// C[M,N] (+)= A[K,M]^T * B[K,N]
void matmul_tn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate);

void softmax_rows(double* y, const double* x, index_t rows, index_t cols);
// mask[r*cols+c] != 0 permits the pair; a fully masked row yields zeros.
void masked_softmax_rows(double* y, const double* x, const unsigned char* mask, index_t rows, index_t cols);
void log_softmax_rows(double* y, const double* x, index_t rows, index_t cols);
// dx (+)= y * (dy - dot(y, dy)) per row
void softmax_backward_rows(double* dx, const double* y, const double* dy, index_t rows, index_t cols, bool accumulate);

// y = (x - mean) * rstd * gain + bias per row; mean/rstd cached for backward
void layer_norm_rows(double* y, const double* x, const double* gain, const double* bias,
                     index_t rows, index_t cols, double eps, double* mean, double* rstd);
void layer_norm_backward_rows(double* dx, double* dgain, double* dbias,
                              const double* x, const double* dy, const double* gain,
                              const double* mean, const double* rstd, index_t rows, index_t cols);

void gelu(double* y, const double* x, index_t n);
void gelu_backward(double* dx, const double* x, const double* dy, index_t n);

void add(double* y, const double* a, const double* b, index_t n);
void mul(double* y, const double* a, const double* b, index_t n);
// y (+)= alpha * x
void axpy(double* y, double alpha, const double* x, index_t n, bool accumulate);

void adam_update(double* param, const double* grad, double* m, double* v, index_t n,
                 double lr, double beta1, double beta2, double eps,
                 double beta1_pow, double beta2_pow);

}  // namespace serial

namespace par {

void matmul_nn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate);
void matmul_nt(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate);
void matmul_tn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate);

void softmax_rows(double* y, const double* x, index_t rows, index_t cols);
void masked_softmax_rows(double* y, const double* x, const unsigned char* mask, index_t rows, index_t cols);
void log_softmax_rows(double* y, const double* x, index_t rows, index_t cols);
void softmax_backward_rows(double* dx, const double* y, const double* dy, index_t rows, index_t cols, bool accumulate);

void layer_norm_rows(double* y, const double* x, const double* gain, const double* bias,
                     index_t rows, index_t cols, double eps, double* mean, double* rstd);
void layer_norm_backward_rows(double* dx, double* dgain, double* dbias,
                              const double* x, const double* dy, const double* gain,
                              const double* mean, const double* rstd, index_t rows, index_t cols);

void gelu(double* y, const double* x, index_t n);
void gelu_backward(double* dx, const double* x, const double* dy, index_t n);

void add(double* y, const double* a, const double* b, index_t n);
void mul(double* y, const double* a, const double* b, index_t n);
void axpy(double* y, double alpha, const double* x, index_t n, bool accumulate);

void adam_update(double* param, const double* grad, double* m, double* v, index_t n,
                 double lr, double beta1, double beta2, double eps,
                 double beta1_pow, double beta2_pow);

}  // namespace par

// Runtime dispatch: par when parallel_enabled() and the problem is large
// enough to amortize thread startup, serial otherwise.
void matmul_nn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate = false);
void matmul_nt(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate = false);
void matmul_tn(double* c, const double* a, const double* b, index_t m, index_t k, index_t n, bool accumulate = false);
void softmax_rows(double* y, const double* x, index_t rows, index_t cols);
void masked_softmax_rows(double* y, const double* x, const unsigned char* mask, index_t rows, index_t cols);
void log_softmax_rows(double* y, const double* x, index_t rows, index_t cols);
void softmax_backward_rows(double* dx, const double* y, const double* dy, index_t rows, index_t cols, bool accumulate = false);
void layer_norm_rows(double* y, const double* x, const double* gain, const double* bias,
                     index_t rows, index_t cols, double eps, double* mean, double* rstd);
void layer_norm_backward_rows(double* dx, double* dgain, double* dbias,
                              const double* x, const double* dy, const double* gain,
                              const double* mean, const double* rstd, index_t rows, index_t cols);
void gelu(double* y, const double* x, index_t n);
void gelu_backward(double* dx, const double* x, const double* dy, index_t n);
void add(double* y, const double* a, const double* b, index_t n);
void mul(double* y, const double* a, const double* b, index_t n);
void axpy(double* y, double alpha, const double* x, index_t n, bool accumulate = false);
void adam_update(double* param, const double* grad, double* m, double* v, index_t n,
                 double lr, double beta1, double beta2, double eps,
                 double beta1_pow, double beta2_pow);

}  // namespace pnet::kernels
