#include "dfpt/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace dfpt::kern {

const Table<float>& avx2_table_f32();
const Table<double>& avx2_table_f64();

namespace {

bool cpu_has_avx2() {
#if defined(DFPT_BUILD_AVX2) && defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend resolve() {
    if (const char* env = std::getenv("DFPT_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) return Backend::avx2;
        // "auto" or anything unrecognized falls through to detection
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

}  // namespace

Backend active_backend() {
    static const Backend b = resolve();
    return b;
}

std::string backend_name() {
    return active_backend() == Backend::avx2 ? "avx2" : "scalar";
}

template <>
const Table<float>& table<float>() {
    return active_backend() == Backend::avx2 ? avx2_table_f32() : scalar_table<float>();
}
template <>
const Table<double>& table<double>() {
    return active_backend() == Backend::avx2 ? avx2_table_f64() : scalar_table<double>();
}

}  // namespace dfpt::kern
