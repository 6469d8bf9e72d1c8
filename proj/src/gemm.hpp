#pragma once

#include <cstddef>

namespace dadet::detail {

// C[M,N] += A[M,K] * B[K,N], all row-major contiguous. Four-row register
// blocking; the inner axpy over N auto-vectorizes. Accumulation order over k
// is fixed, so results do not depend on how callers partition work.
inline void gemm_acc(int M, int N, int K, const float* A, const float* B,
                     float* C) {
  int m = 0;
  for (; m + 4 <= M; m += 4) {
    float* c0 = C + static_cast<std::size_t>(m + 0) * N;
    float* c1 = C + static_cast<std::size_t>(m + 1) * N;
    float* c2 = C + static_cast<std::size_t>(m + 2) * N;
    float* c3 = C + static_cast<std::size_t>(m + 3) * N;
    const float* a0 = A + static_cast<std::size_t>(m + 0) * K;
    const float* a1 = A + static_cast<std::size_t>(m + 1) * K;
    const float* a2 = A + static_cast<std::size_t>(m + 2) * K;
    const float* a3 = A + static_cast<std::size_t>(m + 3) * K;
    for (int k = 0; k < K; ++k) {
      const float* b = B + static_cast<std::size_t>(k) * N;
      const float v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
      for (int n = 0; n < N; ++n) {
        const float bn = b[n];
        c0[n] += v0 * bn;
        c1[n] += v1 * bn;
        c2[n] += v2 * bn;
        c3[n] += v3 * bn;
      }
    }
  }
  for (; m < M; ++m) {
    float* c = C + static_cast<std::size_t>(m) * N;
    const float* a = A + static_cast<std::size_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      const float ak = a[k];
      const float* b = B + static_cast<std::size_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += ak * b[n];
    }
  }
}

// C[M,N] += A[M,K] * B^T where B is [N,K] row-major. Dot-product kernel; the
// shared K dimension is contiguous in both operands.
inline void gemm_abt_acc(int M, int N, int K, const float* A, const float* B,
                         float* C) {
  for (int m = 0; m < M; ++m) {
    const float* a = A + static_cast<std::size_t>(m) * K;
    float* c = C + static_cast<std::size_t>(m) * N;
    for (int n = 0; n < N; ++n) {
      const float* b = B + static_cast<std::size_t>(n) * K;
      float acc = 0.0f;
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      c[n] += acc;
    }
  }
}

// Out[N,M] = In[M,N].
inline void transpose(int M, int N, const float* in, float* out) {
  for (int m = 0; m < M; ++m)
    for (int n = 0; n < N; ++n)
      out[static_cast<std::size_t>(n) * M + m] =
          in[static_cast<std::size_t>(m) * N + n];
}

}  // namespace dadet::detail
