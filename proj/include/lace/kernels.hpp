#pragma once

// Double-precision kernels behind the dense linear algebra. Every kernel has
// a scalar reference implementation and may have SIMD variants; the active
// variant is picked once at startup from CPU capabilities (override with the
// LACE_KERNELS environment variable or force_isa()). Within one variant the
// accumulation order is fixed, so results are reproducible run to run.

#include <cstddef>

namespace lace::kern {

enum class Isa { scalar, avx2 };

// Currently selected instruction set.
Isa active_isa();
const char* isa_name(Isa isa);

// Force a variant (tests use this to compare scalar against SIMD).
// Requesting an unsupported variant falls back to scalar.
void force_isa(Isa isa);

// True if this CPU can run the given variant.
bool isa_supported(Isa isa);

double dot(const double* x, const double* y, std::size_t n);
double sum(const double* x, std::size_t n);
double max(const double* x, std::size_t n);      // n >= 1
double sqnorm(const double* x, std::size_t n);   // sum of squares
double sqdist(const double* x, const double* y, std::size_t n);

void axpy(double a, const double* x, double* y, std::size_t n);   // y += a*x
void scale(double* x, double a, std::size_t n);                   // x *= a
void sub(const double* x, const double* y, double* out, std::size_t n);

// Row-major GEMM, C overwritten.
// nn: C(m,n) = A(m,k) * B(k,n)
// nt: C(m,n) = A(m,k) * B(n,k)^T
// tn: C(m,n) = A(k,m)^T * B(k,n)
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);

}  // namespace lace::kern
