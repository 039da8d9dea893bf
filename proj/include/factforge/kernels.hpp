#pragma once

#include <cstddef>

// Arithmetic inner loops used by the transformer and optimizer.
// Scalar reference implementations live in kernels::scalar; AVX2 variants
// are selected at runtime when the CPU supports them. The two are
// equivalence-tested against each other.

namespace factforge::kernels {

namespace scalar {

template <typename T>
T dot(const T* a, const T* b, size_t n) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale(T alpha, T* x, size_t n) {
    for (size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <typename T>
T sum(const T* x, size_t n) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
T sq_sum(const T* x, size_t n) {
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

} // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define FACTFORGE_HAVE_AVX2_BUILD 1
namespace avx2 {
float dot(const float* a, const float* b, size_t n);
double dot(const double* a, const double* b, size_t n);
void axpy(float alpha, const float* x, float* y, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n);
float sq_sum(const float* x, size_t n);
double sq_sum(const double* x, size_t n);
} // namespace avx2
#else
#define FACTFORGE_HAVE_AVX2_BUILD 0
#endif

// true when the running CPU has AVX2 and dispatch will use it
bool avx2_active();
void force_scalar(bool on); // test hook

float dot(const float* a, const float* b, size_t n);
double dot(const double* a, const double* b, size_t n);
void axpy(float alpha, const float* x, float* y, size_t n);
void axpy(double alpha, const double* x, double* y, size_t n);
float sq_sum(const float* x, size_t n);
double sq_sum(const double* x, size_t n);

// small helpers with no SIMD variant
using scalar::scale;
using scalar::sum;

} // namespace factforge::kernels
