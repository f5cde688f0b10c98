#pragma once

#include <cstddef>
#include <string>

// Inner-loop arithmetic kernels. Scalar reference implementations always
// exist; AVX2 (x86-64) and NEON (aarch64) variants are selected once at
// startup based on what the CPU reports. Set NEUROSLEEP_SIMD=scalar to
// force the reference path.
namespace nsn::kernels {

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
double max(const double* x, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
double max(const double* x, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);
void relu(const double* x, double* out, std::size_t n);
double sum(const double* x, std::size_t n);
double max(const double* x, std::size_t n);
}  // namespace neon
#endif

// Dispatched entry points (function pointers bound at first use).
extern double (*dot)(const double*, const double*, std::size_t);
extern void (*axpy)(double, const double*, double*, std::size_t);
extern void (*scale)(double, double*, std::size_t);
extern void (*add)(const double*, const double*, double*, std::size_t);
extern void (*relu)(const double*, double*, std::size_t);
extern double (*sum)(const double*, std::size_t);
extern double (*max)(const double*, std::size_t);

// Name of the active variant: "scalar", "avx2" or "neon".
const std::string& active_variant();

}  // namespace nsn::kernels
