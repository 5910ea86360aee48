#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "prcnn/parallel.hpp"

namespace prcnn {

// Packed, blocked GEMM for row-major matrices:
//   C (M x N) = op(A) * op(B)      or  C += op(A) * op(B)
// where op is optional transposition. Every C element is produced by exactly
// one task accumulating in ascending-k order, so results do not depend on the
// thread count.

namespace gemm_detail {

#if defined(__AVX512F__)
inline constexpr int simd_bytes = 64;
#elif defined(__AVX__)
inline constexpr int simd_bytes = 32;
#else
inline constexpr int simd_bytes = 16;
#endif

template <class T>
struct Tile {
    static constexpr int MR = 6;
    static constexpr int NR = 2 * simd_bytes / static_cast<int>(sizeof(T));
};

template <class T>
struct Blocking {
    static constexpr int KC = sizeof(T) == 4 ? 512 : 256;
    static constexpr int MC = 132;
    static constexpr int NC = sizeof(T) == 4 ? 2048 : 1024;
};

// A panel: kc x MR, k-major. B panel: kc x NR, k-major. Zero-padded.
template <class T>
inline void pack_a(const T* A, long lda, bool trans, int ic, int pc, int mr, int kc, T* out) {
    constexpr int MR = Tile<T>::MR;
    for (int k = 0; k < kc; ++k) {
        for (int i = 0; i < MR; ++i) {
            out[static_cast<long>(k) * MR + i] =
                i < mr ? (trans ? A[static_cast<long>(pc + k) * lda + ic + i]
                                : A[static_cast<long>(ic + i) * lda + pc + k])
                       : T(0);
        }
    }
}

template <class T>
inline void pack_b(const T* B, long ldb, bool trans, int pc, int jc, int nr, int kc, T* out) {
    constexpr int NR = Tile<T>::NR;
    for (int k = 0; k < kc; ++k) {
        for (int j = 0; j < NR; ++j) {
            out[static_cast<long>(k) * NR + j] =
                j < nr ? (trans ? B[static_cast<long>(jc + j) * ldb + pc + k]
                                : B[static_cast<long>(pc + k) * ldb + jc + j])
                       : T(0);
        }
    }
}

template <class T>
inline void micro_kernel(int kc, const T* __restrict a, const T* __restrict b,
                         T* __restrict acc) {
    constexpr int MR = Tile<T>::MR;
    constexpr int NR = Tile<T>::NR;
    T c[MR][NR] = {};
    for (int k = 0; k < kc; ++k) {
        const T* bk = b + static_cast<long>(k) * NR;
        const T* ak = a + static_cast<long>(k) * MR;
#pragma GCC unroll 6
        for (int i = 0; i < MR; ++i) {
            T ai = ak[i];
            for (int j = 0; j < NR; ++j) c[i][j] += ai * bk[j];
        }
    }
    for (int i = 0; i < MR; ++i)
        for (int j = 0; j < NR; ++j) acc[i * NR + j] = c[i][j];
}

template <class T>
inline std::vector<T>& scratch(int which) {
    thread_local std::vector<T> bufs[3];
    return bufs[which];
}

} // namespace gemm_detail

template <class T>
void gemm(bool trans_a, bool trans_b, int M, int N, int K, const T* A, long lda, const T* B,
          long ldb, T* C, long ldc, bool accumulate = false) {
    using namespace gemm_detail;
    constexpr int MR = Tile<T>::MR;
    constexpr int NR = Tile<T>::NR;
    constexpr int KC = Blocking<T>::KC;
    constexpr int MC = Blocking<T>::MC;
    constexpr int NC = Blocking<T>::NC;

    if (M <= 0 || N <= 0) return;
    if (K <= 0) {
        if (!accumulate)
            for (int i = 0; i < M; ++i) std::fill(C + i * ldc, C + i * ldc + N, T(0));
        return;
    }

    std::vector<T>& bpack = scratch<T>(0);
    std::vector<T>& apack = scratch<T>(1);
    bpack.resize(static_cast<std::size_t>(KC) * NC);
    apack.resize(static_cast<std::size_t>(MC + MR) * KC);

    for (int jc = 0; jc < N; jc += NC) {
        int nc = std::min(NC, N - jc);
        int n_panels = (nc + NR - 1) / NR;
        for (int pc = 0; pc < K; pc += KC) {
            int kc = std::min(KC, K - pc);
            bool first = (pc == 0) && !accumulate;
            T* bp = bpack.data();
            parallel_for(0, n_panels, [&](std::int64_t jr) {
                int j0 = static_cast<int>(jr) * NR;
                pack_b<T>(B, ldb, trans_b, pc, jc + j0, std::min(NR, nc - j0), kc,
                          bp + static_cast<long>(j0) * kc);
            });
            for (int ic = 0; ic < M; ic += MC) {
                int mc = std::min(MC, M - ic);
                int m_panels = (mc + MR - 1) / MR;
                T* ap = apack.data();
                parallel_for(0, m_panels, [&](std::int64_t ir) {
                    int i0 = static_cast<int>(ir) * MR;
                    pack_a<T>(A, lda, trans_a, ic + i0, pc, std::min(MR, mc - i0), kc,
                              ap + static_cast<long>(i0) * kc);
                });
                parallel_for(0, static_cast<std::int64_t>(m_panels) * n_panels, [&](std::int64_t t) {
                    int ir = static_cast<int>(t / n_panels);
                    int jr = static_cast<int>(t % n_panels);
                    T acc[MR * NR];
                    micro_kernel<T>(kc, ap + static_cast<long>(ir) * MR * kc,
                                    bp + static_cast<long>(jr) * NR * kc, acc);
                    int i0 = ic + ir * MR, j0 = jc + jr * NR;
                    int mr = std::min(MR, M - i0), nr = std::min(NR, N - j0);
                    for (int i = 0; i < mr; ++i) {
                        T* crow = C + static_cast<long>(i0 + i) * ldc + j0;
                        const T* arow = acc + i * NR;
                        if (first)
                            for (int j = 0; j < nr; ++j) crow[j] = arow[j];
                        else
                            for (int j = 0; j < nr; ++j) crow[j] += arow[j];
                    }
                });
            }
        }
    }
}

} // namespace prcnn
