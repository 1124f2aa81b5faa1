#pragma once

#include <cstdint>
#include <string>

// Flat array kernels behind a runtime-selected dispatch table. Every entry has
// a scalar reference implementation; on x86 with AVX2+FMA a vectorized variant
// is installed instead. Reduction order is fixed per backend, so results are
// bit-identical across runs on the same machine.
namespace dfpt::kern {

enum class Backend { scalar, avx2 };

// Active backend. Resolved once: DFPT_SIMD={auto,scalar,avx2} env override,
// otherwise CPU detection.
Backend active_backend();
std::string backend_name();

template <typename T>
struct Table {
    void (*add)(const T* a, const T* b, T* out, std::int64_t n);
    void (*sub)(const T* a, const T* b, T* out, std::int64_t n);
    void (*mul)(const T* a, const T* b, T* out, std::int64_t n);
    void (*div)(const T* a, const T* b, T* out, std::int64_t n);
    // out += alpha * x
    void (*axpy)(T alpha, const T* x, T* out, std::int64_t n);
    void (*scale)(T alpha, const T* x, T* out, std::int64_t n);
    T (*sum)(const T* x, std::int64_t n);
    T (*dot)(const T* a, const T* b, std::int64_t n);
    void (*relu)(const T* x, T* out, std::int64_t n);
    // dx += (x > 0) ? dy : 0
    void (*relu_bwd)(const T* x, const T* dy, T* dx, std::int64_t n);
    // Row-major accumulating GEMMs. C is not cleared by the kernel.
    //   gemm:    C[M,N] += A[M,K] * B[K,N]
    //   gemm_nt: C[M,N] += A[M,K] * B[N,K]^T
    //   gemm_tn: C[K,N] += A[M,K]^T * B[M,N]
    void (*gemm)(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N);
    void (*gemm_nt)(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N);
    void (*gemm_tn)(const T* A, const T* B, T* C, std::int64_t M, std::int64_t K, std::int64_t N);
};

template <typename T>
const Table<T>& table();

// Reference implementations, exposed for equivalence tests.
template <typename T>
const Table<T>& scalar_table();

}  // namespace dfpt::kern
