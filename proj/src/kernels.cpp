#include "bwq/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bwq::kernels {

namespace {
#ifdef _OPENMP
bool g_parallel = true;
#else
bool g_parallel = false;
#endif
} // namespace

bool parallel_enabled() { return g_parallel; }

void set_parallel(bool on) {
#ifdef _OPENMP
    g_parallel = on;
#else
    g_parallel = false;
    (void)on;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
}

void matmul_parallel(const double* a, const double* b, double* c,
                     std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
#else
    matmul_serial(a, b, c, m, k, n);
#endif
}

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
    if (g_parallel) {
        matmul_parallel(a, b, c, m, k, n);
    } else {
        matmul_serial(a, b, c, m, k, n);
    }
}

void matmul_bt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) {
                acc += a[i * n + p] * b[j * n + p];
            }
            c[i * k + j] = acc;
        }
    }
}

void matmul_bt_parallel(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t n, std::size_t k) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) {
                acc += a[i * n + p] * b[j * n + p];
            }
            c[i * k + j] = acc;
        }
    }
#else
    matmul_bt_serial(a, b, c, m, n, k);
#endif
}

void matmul_bt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t n, std::size_t k) {
    if (g_parallel) {
        matmul_bt_parallel(a, b, c, m, n, k);
    } else {
        matmul_bt_serial(a, b, c, m, n, k);
    }
}

void matmul_at_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < m; ++p) {
                acc += a[p * k + i] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
}

void matmul_at_parallel(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(k); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < m; ++p) {
                acc += a[p * k + i] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
#else
    matmul_at_serial(a, b, c, m, k, n);
#endif
}

void matmul_at(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (g_parallel) {
        matmul_at_parallel(a, b, c, m, k, n);
    } else {
        matmul_at_serial(a, b, c, m, k, n);
    }
}

} // namespace bwq::kernels
