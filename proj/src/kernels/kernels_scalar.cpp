#include "dfpt/kernels.hpp"

namespace dfpt::kern {
namespace {

template <typename T>
void add_s(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
template <typename T>
void sub_s(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
template <typename T>
void mul_s(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
template <typename T>
void div_s(const T* a, const T* b, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}
template <typename T>
void axpy_s(T alpha, const T* x, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] += alpha * x[i];
}
template <typename T>
void scale_s(T alpha, const T* x, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}
template <typename T>
T sum_s(const T* x, std::int64_t n) {
    T acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}
template <typename T>
T dot_s(const T* a, const T* b, std::int64_t n) {
    T acc = 0;
    for (std::int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}
template <typename T>
void relu_s(const T* x, T* out, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}
template <typename T>
void relu_bwd_s(const T* x, const T* dy, T* dx, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i)
        if (x[i] > T(0)) dx[i] += dy[i];
}

// k is the outer accumulation axis in all three variants so the vector
// backends can keep the same order along j.
template <typename T>
void gemm_s(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t i = 0; i < M; ++i) {
        for (std::int64_t k = 0; k < K; ++k) {
            const T a = A[i * K + k];
            const T* brow = B + k * N;
            T* crow = C + i * N;
            for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}
template <typename T>
void gemm_nt_s(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t i = 0; i < M; ++i) {
        for (std::int64_t j = 0; j < N; ++j) {
            const T* arow = A + i * K;
            const T* brow = B + j * K;
            T acc = 0;
            for (std::int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            C[i * N + j] += acc;
        }
    }
}
template <typename T>
void gemm_tn_s(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N) {
    for (std::int64_t m = 0; m < M; ++m) {
        for (std::int64_t k = 0; k < K; ++k) {
            const T a = A[m * K + k];
            const T* brow = B + m * N;
            T* crow = C + k * N;
            for (std::int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

template <typename T>
Table<T> make_scalar() {
    Table<T> t;
    t.add = add_s<T>;
    t.sub = sub_s<T>;
    t.mul = mul_s<T>;
    t.div = div_s<T>;
    t.axpy = axpy_s<T>;
    t.scale = scale_s<T>;
    t.sum = sum_s<T>;
    t.dot = dot_s<T>;
    t.relu = relu_s<T>;
    t.relu_bwd = relu_bwd_s<T>;
    t.gemm = gemm_s<T>;
    t.gemm_nt = gemm_nt_s<T>;
    t.gemm_tn = gemm_tn_s<T>;
    return t;
}

}  // namespace

template <>
const Table<float>& scalar_table<float>() {
    static const Table<float> t = make_scalar<float>();
    return t;
}
template <>
const Table<double>& scalar_table<double>() {
    static const Table<double> t = make_scalar<double>();
    return t;
}

}  // namespace dfpt::kern
