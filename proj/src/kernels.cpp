// Kernel dispatch. The table is selected once: LACE_KERNELS env override if
// set, otherwise the best variant the CPU supports.

#include "lace/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace lace::kern {

namespace scalar {
double dot(const double*, const double*, std::size_t);
double sum(const double*, std::size_t);
double max(const double*, std::size_t);
double sqnorm(const double*, std::size_t);
double sqdist(const double*, const double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
void scale(double*, double, std::size_t);
void sub(const double*, const double*, double*, std::size_t);
void gemm_nn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_nt(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_tn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double*, const double*, std::size_t);
double sum(const double*, std::size_t);
double max(const double*, std::size_t);
double sqnorm(const double*, std::size_t);
double sqdist(const double*, const double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
void scale(double*, double, std::size_t);
void sub(const double*, const double*, double*, std::size_t);
void gemm_nn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_nt(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_tn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
}  // namespace avx2
#endif

namespace {

struct KernelTable {
  Isa isa;
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*max)(const double*, std::size_t);
  double (*sqnorm)(const double*, std::size_t);
  double (*sqdist)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scale)(double*, double, std::size_t);
  void (*sub)(const double*, const double*, double*, std::size_t);
  void (*gemm_nn)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
  void (*gemm_nt)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
  void (*gemm_tn)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
};

constexpr KernelTable kScalarTable = {
    Isa::scalar,    scalar::dot,  scalar::sum,     scalar::max,
    scalar::sqnorm, scalar::sqdist, scalar::axpy,  scalar::scale,
    scalar::sub,    scalar::gemm_nn, scalar::gemm_nt, scalar::gemm_tn,
};

#if defined(__x86_64__) || defined(_M_X64)
constexpr KernelTable kAvx2Table = {
    Isa::avx2,    avx2::dot,  avx2::sum,     avx2::max,
    avx2::sqnorm, avx2::sqdist, avx2::axpy,  avx2::scale,
    avx2::sub,    avx2::gemm_nn, avx2::gemm_nt, avx2::gemm_tn,
};
#endif

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* select_table() {
  const char* env = std::getenv("LACE_KERNELS");
  if (env != nullptr) {
    if (std::strcmp(env, "scalar") == 0) return &kScalarTable;
#if defined(__x86_64__) || defined(_M_X64)
    if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2_fma()) return &kAvx2Table;
#endif
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (cpu_has_avx2_fma()) return &kAvx2Table;
#endif
  return &kScalarTable;
}

const KernelTable* g_table = select_table();

}  // namespace

Isa active_isa() { return g_table->isa; }

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "?";
}

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
  return cpu_has_avx2_fma();
}

void force_isa(Isa isa) {
#if defined(__x86_64__) || defined(_M_X64)
  if (isa == Isa::avx2 && cpu_has_avx2_fma()) {
    g_table = &kAvx2Table;
    return;
  }
#endif
  g_table = &kScalarTable;
}

double dot(const double* x, const double* y, std::size_t n) { return g_table->dot(x, y, n); }
double sum(const double* x, std::size_t n) { return g_table->sum(x, n); }
double max(const double* x, std::size_t n) { return g_table->max(x, n); }
double sqnorm(const double* x, std::size_t n) { return g_table->sqnorm(x, n); }
double sqdist(const double* x, const double* y, std::size_t n) { return g_table->sqdist(x, y, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { g_table->axpy(a, x, y, n); }
void scale(double* x, double a, std::size_t n) { g_table->scale(x, a, n); }
void sub(const double* x, const double* y, double* out, std::size_t n) { g_table->sub(x, y, out, n); }
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  g_table->gemm_nn(a, b, c, m, k, n);
}
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  g_table->gemm_nt(a, b, c, m, k, n);
}
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  g_table->gemm_tn(a, b, c, m, k, n);
}

}  // namespace lace::kern
