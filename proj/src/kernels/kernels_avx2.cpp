#include "dfpt/kernels.hpp"

#if defined(DFPT_BUILD_AVX2) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace dfpt::kern {
namespace {

// float path: 8 lanes

void add_v(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_v(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_v(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}
void div_v(const float* a, const float* b, float* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_div_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}
void axpy_v(float alpha, const float* x, float* out, std::int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(out + i)));
    for (; i < n; ++i) out[i] += alpha * x[i];
}
void scale_v(float alpha, const float* x, float* out, std::int64_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}
float hsum(__m256 v) {
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, v);
    float s = 0.f;
    for (int i = 0; i < 8; ++i) s += lanes[i];
    return s;
}
float sum_v(const float* x, std::int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}
float dot_v(const float* a, const float* b, std::int64_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
    float s = hsum(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}
void relu_v(const float* x, float* out, std::int64_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.f ? x[i] : 0.f;
}
void relu_bwd_v(const float* x, const float* dy, float* dx, std::int64_t n) {
    const __m256 zero = _mm256_setzero_ps();
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        const __m256 gated = _mm256_and_ps(_mm256_loadu_ps(dy + i), mask);
        _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), gated));
    }
    for (; i < n; ++i)
        if (x[i] > 0.f) dx[i] += dy[i];
}

// C row stays hot in L1 while the k loop streams rows of B.
void gemm_v(const float* A, const float* B, float* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t i = 0; i < M; ++i) {
        float* crow = C + i * N;
        for (std::int64_t k = 0; k < K; ++k) {
            const __m256 a = _mm256_set1_ps(A[i * K + k]);
            const float* brow = B + k * N;
            std::int64_t j = 0;
            for (; j + 16 <= N; j += 16) {
                _mm256_storeu_ps(crow + j,
                                 _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
                _mm256_storeu_ps(crow + j + 8,
                                 _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + j + 8), _mm256_loadu_ps(crow + j + 8)));
            }
            for (; j + 8 <= N; j += 8)
                _mm256_storeu_ps(crow + j,
                                 _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + j), _mm256_loadu_ps(crow + j)));
            const float as = A[i * K + k];
            for (; j < N; ++j) crow[j] += as * brow[j];
        }
    }
}
void gemm_nt_v(const float* A, const float* B, float* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t i = 0; i < M; ++i) {
        const float* arow = A + i * K;
        for (std::int64_t j = 0; j < N; ++j) {
            C[i * N + j] += dot_v(arow, B + j * K, K);
        }
    }
}
void gemm_tn_v(const float* A, const float* B, float* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t m = 0; m < M; ++m) {
        const float* brow = B + m * N;
        for (std::int64_t k = 0; k < K; ++k) {
            axpy_v(A[m * K + k], brow, C + k * N, N);
        }
    }
}

// double path: 4 lanes

void add_d(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}
void sub_d(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}
void mul_d(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}
void div_d(const double* a, const double* b, double* out, std::int64_t n) {
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}
void axpy_d(double alpha, const double* x, double* out, std::int64_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(out + i)));
    for (; i < n; ++i) out[i] += alpha * x[i];
}
void scale_d(double alpha, const double* x, double* out, std::int64_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    for (; i < n; ++i) out[i] = alpha * x[i];
}
double hsum_d(__m256d v) {
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, v);
    return lanes[0] + lanes[1] + lanes[2] + lanes[3];
}
double sum_d(const double* x, std::int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum_d(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}
double dot_d(const double* a, const double* b, std::int64_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    double s = hsum_d(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}
void relu_d(const double* x, double* out, std::int64_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}
void relu_bwd_d(const double* x, const double* dy, double* dx, std::int64_t n) {
    const __m256d zero = _mm256_setzero_pd();
    std::int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
        const __m256d gated = _mm256_and_pd(_mm256_loadu_pd(dy + i), mask);
        _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), gated));
    }
    for (; i < n; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}
void gemm_d(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t i = 0; i < M; ++i) {
        double* crow = C + i * N;
        for (std::int64_t k = 0; k < K; ++k) {
            const __m256d a = _mm256_set1_pd(A[i * K + k]);
            const double* brow = B + k * N;
            std::int64_t j = 0;
            for (; j + 4 <= N; j += 4)
                _mm256_storeu_pd(crow + j,
                                 _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j), _mm256_loadu_pd(crow + j)));
            const double as = A[i * K + k];
            for (; j < N; ++j) crow[j] += as * brow[j];
        }
    }
}
void gemm_nt_d(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j) C[i * N + j] += dot_d(A + i * K, B + j * K, K);
}
void gemm_tn_d(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t k = 0; k < K; ++k) axpy_d(A[m * K + k], B + m * N, C + k * N, N);
}

}  // namespace

const Table<float>& avx2_table_f32() {
    static const Table<float> t = {add_v, sub_v, mul_v, div_v, axpy_v, scale_v, sum_v,
                                   dot_v, relu_v, relu_bwd_v, gemm_v, gemm_nt_v, gemm_tn_v};
    return t;
}
const Table<double>& avx2_table_f64() {
    static const Table<double> t = {add_d, sub_d, mul_d, div_d, axpy_d, scale_d, sum_d,
                                    dot_d, relu_d, relu_bwd_d, gemm_d, gemm_nt_d, gemm_tn_d};
    return t;
}

}  // namespace dfpt::kern

#else

namespace dfpt::kern {
const Table<float>& avx2_table_f32() { return scalar_table<float>(); }
const Table<double>& avx2_table_f64() { return scalar_table<double>(); }
}  // namespace dfpt::kern

#endif
