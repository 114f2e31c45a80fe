#include <cstring>

#include "jessi/kernels.hpp"

namespace jessi::kernels::scalar {

namespace {

template <typename T>
T dot_impl(const T* x, const T* y, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void axpy_impl(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void zero_or_keep(T* C, std::size_t n, bool accumulate) {
  if (!accumulate) std::memset(C, 0, n * sizeof(T));
}

template <typename T>
void matmul_nn_impl(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = A[i * k + p];
      if (a == T(0)) continue;
      axpy_impl(a, B + p * n, crow, n);
    }
  }
}

template <typename T>
void matmul_nt_impl(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T v = dot_impl(arow, B + j * k, k);
      if (accumulate)
        C[i * n + j] += v;
      else
        C[i * n + j] = v;
    }
  }
}

template <typename T>
void matmul_tn_impl(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n,
                    bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T a = A[p * m + i];
      if (a == T(0)) continue;
      axpy_impl(a, brow, C + i * n, n);
    }
  }
}

}  // namespace

float dot(const float* x, const float* y, std::size_t n) { return dot_impl(x, y, n); }
double dot(const double* x, const double* y, std::size_t n) { return dot_impl(x, y, n); }

void axpy(float a, const float* x, float* y, std::size_t n) { axpy_impl(a, x, y, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { axpy_impl(a, x, y, n); }

void ew_add(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void ew_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void ew_mul(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void ew_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void ew_scale(float a, const float* x, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}
void ew_scale(double a, const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i];
}

void matmul_nn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  matmul_nn_impl(A, B, C, m, k, n, accumulate);
}
void matmul_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  matmul_nn_impl(A, B, C, m, k, n, accumulate);
}

void matmul_nt(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  matmul_nt_impl(A, B, C, m, k, n, accumulate);
}
void matmul_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  matmul_nt_impl(A, B, C, m, k, n, accumulate);
}

void matmul_tn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  matmul_tn_impl(A, B, C, m, k, n, accumulate);
}
void matmul_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  matmul_tn_impl(A, B, C, m, k, n, accumulate);
}

}  // namespace jessi::kernels::scalar
