#pragma once

// Data-parallel inner loops used by the training substrate and the crossbar
// simulator. Every kernel comes in two flavors: a plain serial reference and
// an OpenMP version parallelized over independent output elements. Because a
// thread owns a whole output element and the reduction order inside it is
// unchanged, the two flavors are bit-identical; tests and the benchmark
// target hold them against each other.

#include <cstddef>

namespace bwq::kernels {

// Runtime switch consulted by the dispatching entry points below.
bool parallel_enabled();
void set_parallel(bool on);
int max_threads();

// c[m,n] = sum_k a[m,k] * b[k,n]
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_parallel(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n);
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);

// c[m,k] = sum_n a[m,n] * b[k,n]   (B transposed; input gradient)
void matmul_bt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t n, std::size_t k);
void matmul_bt_parallel(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t n, std::size_t k);
void matmul_bt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t n, std::size_t k);

// c[k,n] = sum_m a[m,k] * b[m,n]   (A transposed; weight gradient)
void matmul_at_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_at_parallel(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n);
void matmul_at(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// out[j] = sum_i q[i,j] * w[i,j_col] style integer mat-vec lives in the sim;
// here we only keep the float GEMM family shared by forward/backward.

} // namespace bwq::kernels
