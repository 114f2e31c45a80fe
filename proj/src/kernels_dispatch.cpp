#include <atomic>
#include <cstdlib>
#include <cstring>

#include "jessi/common.hpp"
#include "jessi/kernels.hpp"

namespace jessi::kernels {

namespace {

bool cpu_has_avx2_fma() {
#if defined(JESSI_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect_backend() {
  if (const char* env = std::getenv("JESSI_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::Scalar;
    if (std::strcmp(env, "avx2") == 0) {
      if (!backend_available(Backend::Avx2))
        throw Error("JESSI_KERNELS=avx2 requested but AVX2 is not available");
      return Backend::Avx2;
    }
    if (std::strcmp(env, "auto") != 0)
      throw Error(strf("JESSI_KERNELS=%s is not one of scalar|avx2|auto", env));
  }
  return cpu_has_avx2_fma() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& backend_state() {
  static std::atomic<Backend> state{detect_backend()};
  return state;
}

}  // namespace

Backend active_backend() { return backend_state().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (!backend_available(b))
    throw Error(strf("kernel backend %s is not available on this machine", backend_name(b)));
  backend_state().store(b, std::memory_order_relaxed);
}

bool backend_available(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return true;
    case Backend::Avx2:
      return cpu_has_avx2_fma();
  }
  return false;
}

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::Scalar:
      return "scalar";
    case Backend::Avx2:
      return "avx2";
  }
  return "?";
}

#ifdef JESSI_HAVE_AVX2
#define JESSI_DISPATCH(fn, ...)                                              \
  do {                                                                       \
    if (active_backend() == Backend::Avx2) return avx2::fn(__VA_ARGS__);    \
    return scalar::fn(__VA_ARGS__);                                          \
  } while (0)
#else
#define JESSI_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

float dot(const float* x, const float* y, std::size_t n) { JESSI_DISPATCH(dot, x, y, n); }
double dot(const double* x, const double* y, std::size_t n) { JESSI_DISPATCH(dot, x, y, n); }

void axpy(float a, const float* x, float* y, std::size_t n) { JESSI_DISPATCH(axpy, a, x, y, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { JESSI_DISPATCH(axpy, a, x, y, n); }

void ew_add(const float* a, const float* b, float* out, std::size_t n) {
  JESSI_DISPATCH(ew_add, a, b, out, n);
}
void ew_add(const double* a, const double* b, double* out, std::size_t n) {
  JESSI_DISPATCH(ew_add, a, b, out, n);
}

void ew_mul(const float* a, const float* b, float* out, std::size_t n) {
  JESSI_DISPATCH(ew_mul, a, b, out, n);
}
void ew_mul(const double* a, const double* b, double* out, std::size_t n) {
  JESSI_DISPATCH(ew_mul, a, b, out, n);
}

void ew_scale(float a, const float* x, float* out, std::size_t n) {
  JESSI_DISPATCH(ew_scale, a, x, out, n);
}
void ew_scale(double a, const double* x, double* out, std::size_t n) {
  JESSI_DISPATCH(ew_scale, a, x, out, n);
}

void matmul_nn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  JESSI_DISPATCH(matmul_nn, A, B, C, m, k, n, accumulate);
}
void matmul_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  JESSI_DISPATCH(matmul_nn, A, B, C, m, k, n, accumulate);
}

void matmul_nt(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  JESSI_DISPATCH(matmul_nt, A, B, C, m, k, n, accumulate);
}
void matmul_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  JESSI_DISPATCH(matmul_nt, A, B, C, m, k, n, accumulate);
}

void matmul_tn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  JESSI_DISPATCH(matmul_tn, A, B, C, m, k, n, accumulate);
}
void matmul_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  JESSI_DISPATCH(matmul_tn, A, B, C, m, k, n, accumulate);
}

#undef JESSI_DISPATCH

}  // namespace jessi::kernels
