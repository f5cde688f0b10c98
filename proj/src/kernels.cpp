#include "neurosleep/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace nsn::kernels {

namespace {

std::string g_variant = "scalar";

bool force_scalar() {
    const char* env = std::getenv("NEUROSLEEP_SIMD");
    return env && std::strcmp(env, "scalar") == 0;
}

struct Binder {
    Binder();
};

}  // namespace

double (*dot)(const double*, const double*, std::size_t) = scalar::dot;
void (*axpy)(double, const double*, double*, std::size_t) = scalar::axpy;
void (*scale)(double, double*, std::size_t) = scalar::scale;
void (*add)(const double*, const double*, double*, std::size_t) = scalar::add;
void (*relu)(const double*, double*, std::size_t) = scalar::relu;
double (*sum)(const double*, std::size_t) = scalar::sum;
double (*max)(const double*, std::size_t) = scalar::max;

Binder::Binder() {
    if (force_scalar()) return;
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        dot = avx2::dot;
        axpy = avx2::axpy;
        scale = avx2::scale;
        add = avx2::add;
        relu = avx2::relu;
        sum = avx2::sum;
        max = avx2::max;
        g_variant = "avx2";
    }
#elif defined(__aarch64__)
    dot = neon::dot;
    axpy = neon::axpy;
    scale = neon::scale;
    add = neon::add;
    relu = neon::relu;
    sum = neon::sum;
    max = neon::max;
    g_variant = "neon";
#endif
}

namespace {
Binder g_binder;
}

const std::string& active_variant() { return g_variant; }

}  // namespace nsn::kernels
