#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "prcnn/mnist.hpp"
#include "test_util.hpp"

using namespace prcnn;

namespace {

std::string tmp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// A tiny synthetic IDX pair: 3 images of 4x4, labels 7, 0, 9.
void write_fixture(const std::string& images, const std::string& labels) {
    MnistSet set;
    set.images = Tensor4f({3, 1, 4, 4});
    for (int i = 0; i < 3; ++i)
        for (int p = 0; p < 16; ++p)
            set.images.plane(i, 0)[p] = static_cast<float>((i * 37 + p * 11) % 256) / 255.0f;
    set.labels = {7, 0, 9};
    write_idx(images, labels, set);
}

// 28x28 gaussian blob centered in the frame.
Tensor4f centered_blob() {
    Tensor4f img({1, 1, 28, 28});
    for (int r = 0; r < 28; ++r)
        for (int c = 0; c < 28; ++c) {
            const double d2 = (r - 13.5) * (r - 13.5) + (c - 13.5) * (c - 13.5);
            img.plane(0, 0)[r * 28 + c] = static_cast<float>(std::exp(-d2 / 18.0));
        }
    return img;
}

} // namespace

TEST_CASE("parse_idx decodes headers and labels") {
    const auto imgs = tmp_path("prcnn_idx_img"), labs = tmp_path("prcnn_idx_lab");
    write_fixture(imgs, labs);
    auto set = parse_idx(imgs, labs);
    CHECK(set.images.dims == Dims4{3, 1, 4, 4});
    CHECK(set.labels == std::vector<std::uint8_t>{7, 0, 9});
    CHECK(set.images.data[0] == doctest::Approx(0.0));
    std::remove(imgs.c_str());
    std::remove(labs.c_str());
}

TEST_CASE("parse_idx error paths") {
    const auto imgs = tmp_path("prcnn_idx_img2"), labs = tmp_path("prcnn_idx_lab2");
    write_fixture(imgs, labs);

    // images file carrying the label magic
    CHECK_THROWS_WITH_AS(parse_idx(labs, labs), doctest::Contains("bad IDX magic"), DataError);

    // truncation
    {
        auto bytes = slurp(imgs);
        std::ofstream f(imgs, std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
    }
    CHECK_THROWS_WITH_AS(parse_idx(imgs, labs), doctest::Contains("truncated"), DataError);

    // count mismatch
    write_fixture(imgs, labs);
    MnistSet small;
    small.images = Tensor4f({1, 1, 4, 4});
    small.labels = {1};
    const auto labs_small = tmp_path("prcnn_idx_lab3");
    write_idx(tmp_path("prcnn_idx_img3"), labs_small, small);
    CHECK_THROWS_WITH_AS(parse_idx(imgs, labs_small), doctest::Contains("count mismatch"),
                         DataError);

    std::remove(imgs.c_str());
    std::remove(labs.c_str());
    std::remove(labs_small.c_str());
    std::remove(tmp_path("prcnn_idx_img3").c_str());
}

TEST_CASE("parse_idx round-trips against the re-serializer bit-exactly") {
    const auto imgs = tmp_path("prcnn_idx_rt_i"), labs = tmp_path("prcnn_idx_rt_l");
    write_fixture(imgs, labs);
    auto original_i = slurp(imgs), original_l = slurp(labs);

    auto set = parse_idx(imgs, labs);
    const auto imgs2 = tmp_path("prcnn_idx_rt_i2"), labs2 = tmp_path("prcnn_idx_rt_l2");
    write_idx(imgs2, labs2, set);
    CHECK(slurp(imgs2) == original_i);
    CHECK(slurp(labs2) == original_l);

    for (auto p : {imgs, labs, imgs2, labs2}) std::remove(p.c_str());
}

TEST_CASE("rotation by 0 degrees is the identity") {
    auto img = centered_blob();
    auto out = rotate_plane(img.plane(0, 0), 28, 28, 0.0);
    for (int p = 0; p < 28 * 28; ++p) CHECK(out[p] == doctest::Approx(img.plane(0, 0)[p]));
}

TEST_CASE("rotation composes with its inverse away from the boundary") {
    auto img = centered_blob();
    auto once = rotate_plane(img.plane(0, 0), 28, 28, 90.0);
    auto back = rotate_plane(once.data(), 28, 28, -90.0);
    for (int r = 4; r < 24; ++r)
        for (int c = 4; c < 24; ++c)
            CHECK(std::abs(back[r * 28 + c] - img.plane(0, 0)[r * 28 + c]) < 1e-6);
}

TEST_CASE("rotation approximately conserves total intensity of centered digits") {
    auto img = centered_blob();
    double before = 0.0;
    for (int p = 0; p < 28 * 28; ++p) before += img.plane(0, 0)[p];
    for (double angle : {-90.0, -37.0, 15.0, 90.0}) {
        auto out = rotate_plane(img.plane(0, 0), 28, 28, angle);
        double after = 0.0;
        for (float v : out) after += v;
        CHECK(std::abs(after - before) / before < 0.05);
    }
}

TEST_CASE("translation places the digit exactly and conserves mass") {
    auto img = centered_blob();
    auto centered = translate_plane(img.plane(0, 0), 28, 28, 42, 7, 7);
    CHECK(centered[7 * 42 + 7] == img.plane(0, 0)[0]);
    CHECK(centered[(7 + 27) * 42 + 7 + 27] == img.plane(0, 0)[27 * 28 + 27]);

    auto corner = translate_plane(img.plane(0, 0), 28, 28, 42, 0, 0);
    for (int r = 28; r < 42; ++r)
        for (int c = 0; c < 42; ++c) CHECK(corner[r * 42 + c] == 0.0f);
    for (int r = 0; r < 42; ++r)
        for (int c = 28; c < 42; ++c) CHECK(corner[r * 42 + c] == 0.0f);

    double in_sum = 0.0, out_sum = 0.0;
    for (int p = 0; p < 28 * 28; ++p) in_sum += img.plane(0, 0)[p];
    for (float v : corner) out_sum += v;
    CHECK(in_sum == out_sum); // copy semantics, exact


    CHECK_THROWS_AS(translate_plane(img.plane(0, 0), 28, 28, 42, 15, 0), ConfigError);
}

TEST_CASE("distorted sets are a pure function of (source, spec, seed)") {
    MnistSet src;
    src.images = Tensor4f({20, 1, 28, 28});
    Rng rng(7);
    for (auto& v : src.images.data) v = static_cast<float>(rng.next_uniform());
    src.labels.assign(20, 1);

    TransformSpec t{TransformSpec::Kind::translation, 90.0, 42};
    auto a = make_distorted_set(src, t, 99);
    auto b = make_distorted_set(src, t, 99);
    CHECK(a.images.dims == Dims4{20, 1, 42, 42});
    CHECK(a.images.data == b.images.data);

    auto c = make_distorted_set(src, t, 100);
    CHECK(a.images.data != c.images.data);

    TransformSpec r{TransformSpec::Kind::rotation, 90.0, 42};
    auto d = make_distorted_set(src, r, 5);
    CHECK(d.images.dims == src.images.dims);
}

TEST_CASE("rotation angles are approximately uniform over [-90, 90]") {
    MnistSet src;
    src.images = Tensor4f({4000, 1, 2, 2});
    src.labels.assign(4000, 0);
    DistortionLog log;
    make_distorted_set(src, TransformSpec{TransformSpec::Kind::rotation, 90.0, 42}, 2024, &log);

    const int bins = 12;
    std::vector<int> counts(bins, 0);
    for (double a : log.angles) {
        CHECK(a >= -90.0);
        CHECK(a <= 90.0);
        int b = std::min(bins - 1, static_cast<int>((a + 90.0) / 180.0 * bins));
        counts[b]++;
    }
    const double expected = 4000.0 / bins;
    double chi2 = 0.0;
    for (int b = 0; b < bins; ++b)
        chi2 += (counts[b] - expected) * (counts[b] - expected) / expected;
    // 11 degrees of freedom; 99.9th percentile is ~31.3
    CHECK(chi2 < 31.3);
}
