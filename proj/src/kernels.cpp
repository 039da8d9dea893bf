#include "factforge/kernels.hpp"

namespace factforge::kernels {

namespace {

bool g_force_scalar = false;

bool detect_avx2() {
#if FACTFORGE_HAVE_AVX2_BUILD && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const bool g_cpu_avx2 = detect_avx2();

} // namespace

bool avx2_active() { return g_cpu_avx2 && !g_force_scalar; }
void force_scalar(bool on) { g_force_scalar = on; }

float dot(const float* a, const float* b, size_t n) {
#if FACTFORGE_HAVE_AVX2_BUILD
    if (avx2_active()) return avx2::dot(a, b, n);
#endif
    return scalar::dot(a, b, n);
}

double dot(const double* a, const double* b, size_t n) {
#if FACTFORGE_HAVE_AVX2_BUILD
    if (avx2_active()) return avx2::dot(a, b, n);
#endif
    return scalar::dot(a, b, n);
}

void axpy(float alpha, const float* x, float* y, size_t n) {
#if FACTFORGE_HAVE_AVX2_BUILD
    if (avx2_active()) { avx2::axpy(alpha, x, y, n); return; }
#endif
    scalar::axpy(alpha, x, y, n);
}

void axpy(double alpha, const double* x, double* y, size_t n) {
#if FACTFORGE_HAVE_AVX2_BUILD
    if (avx2_active()) { avx2::axpy(alpha, x, y, n); return; }
#endif
    scalar::axpy(alpha, x, y, n);
}

float sq_sum(const float* x, size_t n) {
#if FACTFORGE_HAVE_AVX2_BUILD
    if (avx2_active()) return avx2::sq_sum(x, n);
#endif
    return scalar::sq_sum(x, n);
}

double sq_sum(const double* x, size_t n) {
#if FACTFORGE_HAVE_AVX2_BUILD
    if (avx2_active()) return avx2::sq_sum(x, n);
#endif
    return scalar::sq_sum(x, n);
}

} // namespace factforge::kernels
