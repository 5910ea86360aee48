#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>

#include "prcnn/tensor.hpp"
#include "test_util.hpp"

using namespace prcnn;

TEST_CASE("zeros produces the requested shape") {
    auto t = zeros<double>({1, 1, 2, 2});
    CHECK(t.data == std::vector<double>{0, 0, 0, 0});

    auto big = zeros<double>({2, 3, 4, 4});
    CHECK(big.size() == 96);
    for (double v : big.data) CHECK(v == 0.0);

    CHECK(zeros<double>({1, 1, 1, 1}).size() == 1);
    CHECK_THROWS_AS(zeros<double>({0, 1, 1, 1}), ConfigError);
}

TEST_CASE("flat length overflow is rejected") {
    Dims4 d{1 << 30, 1 << 30, 1 << 30, 1 << 30};
    CHECK_THROWS_AS(d.flat(), ConfigError);
}

TEST_CASE("gaussian_init degenerate and reproducible cases") {
    Rng r1(42), r2(42);
    auto a = gaussian_init<double>({1, 1, 1, 100}, 3.5, 0.0, r1);
    for (double v : a.data) CHECK(v == 3.5);

    Rng s1(7), s2(7);
    auto x = gaussian_init<double>({2, 3, 4, 5}, 0.0, 1.0, s1);
    auto y = gaussian_init<double>({2, 3, 4, 5}, 0.0, 1.0, s2);
    CHECK(std::memcmp(x.data.data(), y.data.data(), x.size() * sizeof(double)) == 0);

    Rng r3(11);
    auto big = gaussian_init<double>({1, 1, 1, 1000}, 0.0, 0.01, r3);
    double mean = 0.0;
    for (double v : big.data) mean += v;
    mean /= 1000.0;
    CHECK(std::abs(mean) < 1e-3);

    Rng r4(1);
    CHECK_THROWS_AS(gaussian_init<double>({1, 1, 1, 1}, 0.0, -1.0, r4), ConfigError);
}

TEST_CASE("l1/l2 reduces over all channels of a spatial window") {
    auto t = Tensor4::from_data({1, 1, 2, 2}, {1, -2, 3, 0});
    CHECK(l1_reduce(t, 0, 0, 2, 0, 2) == doctest::Approx(6.0));
    CHECK(l2sq_reduce(t, 0, 0, 2, 0, 2) == doctest::Approx(14.0));

    auto z = zeros<double>({1, 2, 3, 3});
    CHECK(l1_reduce(z, 0, 0, 3, 0, 3) == 0.0);
    CHECK(l2sq_reduce(z, 0, 0, 3, 0, 3) == 0.0);

    auto two = Tensor4::from_data({1, 2, 1, 1}, {1, -1});
    CHECK(l1_reduce(two, 0, 0, 1, 0, 1) == doctest::Approx(2.0));

    CHECK_THROWS_AS(l1_reduce(t, 0, 0, 3, 0, 2), ConfigError);
    CHECK_THROWS_AS(l1_reduce(t, 1, 0, 1, 0, 1), ConfigError);
}

TEST_CASE("l1 over disjoint regions sums to the union") {
    Rng rng(3);
    auto t = test::random_tensor({1, 3, 6, 6}, rng);
    const double whole = l1_reduce(t, 0, 0, 6, 0, 6);
    const double parts = l1_reduce(t, 0, 0, 3, 0, 6) + l1_reduce(t, 0, 3, 6, 0, 6);
    CHECK(whole == doctest::Approx(parts).epsilon(1e-12));
}

TEST_CASE("tensor dump round-trips bit-exactly") {
    Rng rng(5);
    auto t = test::random_tensor({2, 3, 4, 5}, rng);
    const std::string path = (std::filesystem::temp_directory_path() / "prcnn_t.prt4").string();
    save_tensor(path, t);
    auto back = load_tensor<double>(path);
    REQUIRE(back.dims == t.dims);
    CHECK(std::memcmp(back.data.data(), t.data.data(), t.size() * sizeof(double)) == 0);

    CHECK_THROWS_AS(load_tensor<float>(path), DataError);
    auto widened = load_tensor_cast<float>(path);
    CHECK(widened.dims == t.dims);
    std::remove(path.c_str());
}

TEST_CASE("non-finite payloads are rejected") {
    CHECK_THROWS_AS(Tensor4::from_data({1, 1, 1, 2}, {1.0, std::nan("")}), DataError);

    const std::string path = (std::filesystem::temp_directory_path() / "prcnn_nan.prt4").string();
    Tensor4 t({1, 1, 1, 2});
    t.data[1] = std::numeric_limits<double>::infinity();
    save_tensor(path, t);
    CHECK_THROWS_AS(load_tensor<double>(path), DataError);
    std::remove(path.c_str());
}

TEST_CASE("label file round trip") {
    std::vector<std::uint8_t> labels{0, 7, 9, 3};
    const std::string path = (std::filesystem::temp_directory_path() / "prcnn_l.bin").string();
    save_labels(path, labels);
    CHECK(load_labels(path) == labels);
    std::remove(path.c_str());
}

TEST_CASE("rng streams are seed-deterministic") {
    Rng a(123), b(123), c(124);
    bool all_eq = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
        all_eq = all_eq && (x == y);
        any_diff = any_diff || (x != z);
    }
    CHECK(all_eq);
    CHECK(any_diff);

    Rng d(9);
    for (int i = 0; i < 1000; ++i) {
        double u = d.next_uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(d.next_below(10) < 10);
    }
}
