// AVX2+FMA kernel variants. This translation unit is the only one compiled
// with -mavx2 -mfma; callers reach it through the runtime dispatcher after a
// cpuid check, so the rest of the binary stays baseline-SSE2.

#include <immintrin.h>

#include <cstring>

#include "jessi/kernels.hpp"

namespace jessi::kernels::avx2 {

namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x1);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

inline double hsum4(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  lo = _mm_add_sd(lo, sh);
  return _mm_cvtsd_f64(lo);
}

}  // namespace

float dot(const float* x, const float* y, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  }
  float sum = hsum8(acc);
  for (; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  double sum = hsum4(acc);
  for (; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

void axpy(float a, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 r = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i));
    _mm256_storeu_ps(y + i, r);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d r = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    _mm256_storeu_pd(y + i, r);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void ew_add(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void ew_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void ew_mul(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void ew_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void ew_scale(float a, const float* x, float* out, std::size_t n) {
  const __m256 av = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = a * x[i];
}

void ew_scale(double a, const double* x, double* out, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = a * x[i];
}

namespace {

template <typename T>
void zero_or_keep(T* C, std::size_t n, bool accumulate) {
  if (!accumulate) std::memset(C, 0, n * sizeof(T));
}

}  // namespace

void matmul_nn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float a = A[i * k + p];
      if (a == 0.0f) continue;
      axpy(a, B + p * n, crow, n);
    }
  }
}

void matmul_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      if (a == 0.0) continue;
      axpy(a, B + p * n, crow, n);
    }
  }
}

void matmul_nt(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const float v = dot(arow, B + j * k, k);
      if (accumulate)
        C[i * n + j] += v;
      else
        C[i * n + j] = v;
    }
  }
}

void matmul_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = dot(arow, B + j * k, k);
      if (accumulate)
        C[i * n + j] += v;
      else
        C[i * n + j] = v;
    }
  }
}

void matmul_tn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  for (std::size_t p = 0; p < k; ++p) {
    const float* brow = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float a = A[p * m + i];
      if (a == 0.0f) continue;
      axpy(a, brow, C + i * n, n);
    }
  }
}

void matmul_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = A[p * m + i];
      if (a == 0.0) continue;
      axpy(a, brow, C + i * n, n);
    }
  }
}

}  // namespace jessi::kernels::avx2
