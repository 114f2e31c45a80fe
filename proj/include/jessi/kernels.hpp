#pragma once

#include <cstddef>

// Arithmetic inner loops behind the tensor ops. Every kernel exists as a
// scalar reference and, on x86-64, an AVX2+FMA variant; the backend is picked
// once at startup from cpuid (override with JESSI_KERNELS=scalar|avx2 or
// set_backend). SIMD variants reassociate sums, so they match the scalar
// reference to a tolerance, not bitwise; the equivalence tests pin that
// tolerance. Matmul conventions are row-major:
//   nn: C[m x n] = A[m x k] * B[k x n]
//   nt: C[m x n] = A[m x k] * B[n x k]^T
//   tn: C[m x n] = A[k x m]^T * B[k x n]
// With accumulate=false the kernels overwrite C, otherwise they add into it.

namespace jessi::kernels {

enum class Backend { Scalar, Avx2 };

Backend active_backend();
void set_backend(Backend b);
bool backend_available(Backend b);
const char* backend_name(Backend b);

float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);

// y += a * x
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);

void ew_add(const float* a, const float* b, float* out, std::size_t n);
void ew_add(const double* a, const double* b, double* out, std::size_t n);

void ew_mul(const float* a, const float* b, float* out, std::size_t n);
void ew_mul(const double* a, const double* b, double* out, std::size_t n);

void ew_scale(float a, const float* x, float* out, std::size_t n);
void ew_scale(double a, const double* x, double* out, std::size_t n);

void matmul_nn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);
void matmul_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);

void matmul_nt(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);
void matmul_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);

void matmul_tn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);
void matmul_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate = false);

namespace scalar {
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void ew_add(const float* a, const float* b, float* out, std::size_t n);
void ew_add(const double* a, const double* b, double* out, std::size_t n);
void ew_mul(const float* a, const float* b, float* out, std::size_t n);
void ew_mul(const double* a, const double* b, double* out, std::size_t n);
void ew_scale(float a, const float* x, float* out, std::size_t n);
void ew_scale(double a, const double* x, double* out, std::size_t n);
void matmul_nn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_nt(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_tn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
}  // namespace scalar

#ifdef JESSI_HAVE_AVX2
namespace avx2 {
float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void axpy(float a, const float* x, float* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void ew_add(const float* a, const float* b, float* out, std::size_t n);
void ew_add(const double* a, const double* b, double* out, std::size_t n);
void ew_mul(const float* a, const float* b, float* out, std::size_t n);
void ew_mul(const double* a, const double* b, double* out, std::size_t n);
void ew_scale(float a, const float* x, float* out, std::size_t n);
void ew_scale(double a, const double* x, double* out, std::size_t n);
void matmul_nn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_nt(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_tn(const float* A, const float* B, float* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
void matmul_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
}  // namespace avx2
#endif

}  // namespace jessi::kernels
