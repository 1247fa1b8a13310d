#pragma once
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace reppad::kernels {

// Parallel dispatch switch. The OpenMP kernels only split disjoint output ranges
// (rows or column blocks), never reorder floating-point accumulation, so serial and
// parallel paths are bit-identical; tests assert that.
bool parallel_enabled();
void set_parallel(bool on);
int thread_count();

inline constexpr int64_t kParallelFlopCutoff = 1 << 15;

// Row-major GEMMs, accumulate into C (caller zeroes C when overwrite is wanted).
// ld* = row stride.

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void gemm_nn_serial(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
                    int64_t ldb, T* C, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * lda;
    T* c = C + i * ldc;
    for (int64_t kk = 0; kk < k; ++kk) {
      T av = a[kk];
      const T* b = B + kk * ldb;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
void gemm_nn_omp(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
                 int64_t ldb, T* C, int64_t ldc) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * lda;
    T* c = C + i * ldc;
    for (int64_t kk = 0; kk < k; ++kk) {
      T av = a[kk];
      const T* b = B + kk * ldb;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T   (both operands walked along contiguous rows)
template <class T>
void gemm_nt_serial(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
                    int64_t ldb, T* C, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * lda;
    T* c = C + i * ldc;
    for (int64_t j = 0; j < n; ++j) {
      const T* b = B + j * ldb;
      T acc = 0;
      for (int64_t kk = 0; kk < k; ++kk) acc += a[kk] * b[kk];
      c[j] += acc;
    }
  }
}

template <class T>
void gemm_nt_omp(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
                 int64_t ldb, T* C, int64_t ldc) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const T* a = A + i * lda;
    T* c = C + i * ldc;
    for (int64_t j = 0; j < n; ++j) {
      const T* b = B + j * ldb;
      T acc = 0;
      for (int64_t kk = 0; kk < k; ++kk) acc += a[kk] * b[kk];
      c[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class T>
void gemm_tn_serial(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
                    int64_t ldb, T* C, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    T* c = C + i * ldc;
    for (int64_t kk = 0; kk < k; ++kk) {
      T av = A[kk * lda + i];
      const T* b = B + kk * ldb;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
void gemm_tn_omp(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
                 int64_t ldb, T* C, int64_t ldc) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    T* c = C + i * ldc;
    for (int64_t kk = 0; kk < k; ++kk) {
      T av = A[kk * lda + i];
      const T* b = B + kk * ldb;
      for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

template <class T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
             int64_t ldb, T* C, int64_t ldc) {
  if (parallel_enabled() && m > 1 && m * n * k >= kParallelFlopCutoff)
    gemm_nn_omp(m, n, k, A, lda, B, ldb, C, ldc);
  else
    gemm_nn_serial(m, n, k, A, lda, B, ldb, C, ldc);
}

template <class T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
             int64_t ldb, T* C, int64_t ldc) {
  if (parallel_enabled() && m > 1 && m * n * k >= kParallelFlopCutoff)
    gemm_nt_omp(m, n, k, A, lda, B, ldb, C, ldc);
  else
    gemm_nt_serial(m, n, k, A, lda, B, ldb, C, ldc);
}

template <class T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* A, int64_t lda, const T* B,
             int64_t ldb, T* C, int64_t ldc) {
  if (parallel_enabled() && m > 1 && m * n * k >= kParallelFlopCutoff)
    gemm_tn_omp(m, n, k, A, lda, B, ldb, C, ldc);
  else
    gemm_tn_serial(m, n, k, A, lda, B, ldb, C, ldc);
}

// dst[idx[r], :] += src[r, :]. Parallel variant splits the column range; every thread
// applies the rows in the same order, so sums per element are identically ordered.
template <class T>
void scatter_rows_add_serial(T* dst, int64_t d, const int32_t* idx, int64_t nrows,
                             const T* src) {
  for (int64_t r = 0; r < nrows; ++r) {
    T* out = dst + static_cast<int64_t>(idx[r]) * d;
    const T* in = src + r * d;
    for (int64_t j = 0; j < d; ++j) out[j] += in[j];
  }
}

template <class T>
void scatter_rows_add_omp(T* dst, int64_t d, const int32_t* idx, int64_t nrows,
                          const T* src) {
#ifdef _OPENMP
  int nt = thread_count();
  int64_t chunk = (d + nt - 1) / nt;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < nt; ++t) {
    int64_t j0 = t * chunk, j1 = j0 + chunk < d ? j0 + chunk : d;
    if (j0 >= j1) continue;
    for (int64_t r = 0; r < nrows; ++r) {
      T* out = dst + static_cast<int64_t>(idx[r]) * d;
      const T* in = src + r * d;
      for (int64_t j = j0; j < j1; ++j) out[j] += in[j];
    }
  }
#else
  scatter_rows_add_serial(dst, d, idx, nrows, src);
#endif
}

template <class T>
void scatter_rows_add(T* dst, int64_t d, const int32_t* idx, int64_t nrows,
                      const T* src) {
  if (parallel_enabled() && nrows * d >= kParallelFlopCutoff)
    scatter_rows_add_omp(dst, d, idx, nrows, src);
  else
    scatter_rows_add_serial(dst, d, idx, nrows, src);
}

}  // namespace reppad::kernels
