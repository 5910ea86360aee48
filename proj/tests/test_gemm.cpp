#include <doctest.h>

#include <cstring>
#include <vector>

#include "prcnn/gemm.hpp"
#include "prcnn/parallel.hpp"
#include "prcnn/rng.hpp"

using namespace prcnn;

namespace {

template <class T>
void naive_gemm(bool ta, bool tb, int M, int N, int K, const std::vector<T>& A,
                const std::vector<T>& B, std::vector<T>& C, bool acc) {
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            double s = acc ? static_cast<double>(C[i * N + j]) : 0.0;
            for (int k = 0; k < K; ++k) {
                double a = ta ? A[k * M + i] : A[i * K + k];
                double b = tb ? B[j * K + k] : B[k * N + j];
                s += a * b;
            }
            C[i * N + j] = static_cast<T>(s);
        }
}

template <class T>
std::vector<T> random_vec(std::size_t n, Rng& rng) {
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(rng.next_uniform() * 2.0 - 1.0);
    return v;
}

} // namespace

TEST_CASE("gemm matches the reference for all transpose combinations") {
    Rng rng(17);
    const int shapes[][3] = {{1, 1, 1},   {3, 5, 7},    {6, 16, 4},  {7, 33, 65},
                             {64, 121, 100}, {13, 200, 19}, {40, 40, 40}};
    for (auto [M, N, K] : shapes) {
        for (int ta = 0; ta < 2; ++ta)
            for (int tb = 0; tb < 2; ++tb) {
                auto A = random_vec<double>(static_cast<std::size_t>(M) * K, rng);
                auto B = random_vec<double>(static_cast<std::size_t>(K) * N, rng);
                std::vector<double> C(static_cast<std::size_t>(M) * N, 0.5);
                std::vector<double> ref = C;
                const long lda = ta ? M : K;
                const long ldb = tb ? K : N;
                gemm<double>(ta, tb, M, N, K, A.data(), lda, B.data(), ldb, C.data(), N, true);
                naive_gemm<double>(ta, tb, M, N, K, A, B, ref, true);
                double worst = 0.0;
                for (std::size_t i = 0; i < C.size(); ++i)
                    worst = std::max(worst, std::abs(C[i] - ref[i]));
                CHECK(worst < 1e-11);
            }
    }
}

TEST_CASE("gemm results are bitwise independent of thread count") {
    Rng rng(23);
    const int M = 37, N = 211, K = 301;
    auto A = random_vec<float>(static_cast<std::size_t>(M) * K, rng);
    auto B = random_vec<float>(static_cast<std::size_t>(K) * N, rng);
    std::vector<float> c1(static_cast<std::size_t>(M) * N), c2 = c1;

    set_thread_count(1);
    gemm<float>(false, false, M, N, K, A.data(), K, B.data(), N, c1.data(), N);
    set_thread_count(2);
    gemm<float>(false, false, M, N, K, A.data(), K, B.data(), N, c2.data(), N);
    set_thread_count(0);
    CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
}

TEST_CASE("gemm overwrite vs accumulate") {
    Rng rng(29);
    const int M = 5, N = 9, K = 3;
    auto A = random_vec<double>(M * K, rng);
    auto B = random_vec<double>(K * N, rng);
    std::vector<double> base(M * N, 0.0), twice(M * N, 0.0);
    gemm<double>(false, false, M, N, K, A.data(), K, B.data(), N, base.data(), N);
    gemm<double>(false, false, M, N, K, A.data(), K, B.data(), N, twice.data(), N);
    gemm<double>(false, false, M, N, K, A.data(), K, B.data(), N, twice.data(), N, true);
    for (int i = 0; i < M * N; ++i) CHECK(twice[i] == doctest::Approx(2.0 * base[i]));
}
