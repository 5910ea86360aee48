#include <doctest.h>

#include <cmath>

#include "prcnn/analysis.hpp"
#include "test_util.hpp"

using namespace prcnn;

namespace {

// Exhaustive reference for the invariance measure, written independently of
// the implementation: tries every observed response as the threshold.
struct RefScore {
    bool included;
    double t, g, l, score;
};

RefScore reference_invariance(const std::vector<double>& base,
                              const std::vector<double>& transformed, int neuron, int n_base,
                              int orbit) {
    const double* r = base.data() + static_cast<std::size_t>(neuron) * n_base;
    RefScore best{false, 0, 0, 0, 0};
    double best_t = -1e300;
    bool found = false;
    // candidate thresholds: all observed values; pick the highest with G > 0.01
    for (int cand = 0; cand < n_base; ++cand) {
        const double t = r[cand];
        int fired = 0;
        for (int x = 0; x < n_base; ++x)
            if (r[x] > t) ++fired;
        const double g = static_cast<double>(fired) / n_base;
        if (g > 0.01 && (!found || t > best_t)) {
            found = true;
            best_t = t;
        }
    }
    if (!found) return best;
    int fired = 0;
    long orbit_hits = 0, orbit_total = 0;
    for (int x = 0; x < n_base; ++x) {
        if (r[x] <= best_t) continue;
        ++fired;
        for (int o = 0; o < orbit; ++o) {
            const double v =
                transformed[(static_cast<std::size_t>(neuron) * n_base + x) * orbit + o];
            if (v > best_t) ++orbit_hits;
            ++orbit_total;
        }
    }
    best.included = true;
    best.t = best_t;
    best.g = static_cast<double>(fired) / n_base;
    best.l = orbit_total ? static_cast<double>(orbit_hits) / orbit_total : 0.0;
    best.score = best.l / best.g;
    return best;
}

} // namespace

TEST_CASE("invariance limiting case: 1% selectivity, fully invariant orbit") {
    const int n_base = 200, orbit = 11;
    std::vector<double> base(n_base, 0.0);
    // exactly 2 of 200 base inputs fire strongly (G = 0.01 is not > 0.01, so
    // the threshold drops to include 2 -> G = 2/200 = 0.01 ... use 3 to be
    // strictly above)
    base[10] = 5.0;
    base[20] = 4.0;
    base[30] = 3.0;
    std::vector<double> transformed(static_cast<std::size_t>(n_base) * orbit, 0.0);
    for (int x : {10, 20, 30})
        for (int o = 0; o < orbit; ++o)
            transformed[static_cast<std::size_t>(x) * orbit + o] = 10.0;

    auto rep = invariance_score(base, 1, n_base, transformed, orbit);
    REQUIRE(rep.neurons[0].included);
    CHECK(rep.neurons[0].selectivity == doctest::Approx(3.0 / 200.0));
    CHECK(rep.neurons[0].local_fire == doctest::Approx(1.0));
    CHECK(rep.neurons[0].score == doctest::Approx(200.0 / 3.0));
}

TEST_CASE("invariance by construction: identical orbits give L = 1") {
    Rng rng(101);
    const int neurons = 5, n_base = 150, orbit = 7;
    std::vector<double> base(static_cast<std::size_t>(neurons) * n_base);
    for (auto& v : base) v = rng.next_uniform();
    std::vector<double> transformed(base.size() * orbit);
    for (std::size_t i = 0; i < base.size(); ++i)
        for (int o = 0; o < orbit; ++o) transformed[i * orbit + o] = base[i];

    auto rep = invariance_score(base, neurons, n_base, transformed, orbit);
    for (const auto& ns : rep.neurons) {
        REQUIRE(ns.included);
        CHECK(ns.local_fire == doctest::Approx(1.0));
        CHECK(ns.selectivity > 0.01);
    }
}

TEST_CASE("constant-response neurons are excluded with a reason") {
    const int n_base = 100, orbit = 3;
    std::vector<double> base(n_base, 2.5);
    std::vector<double> transformed(static_cast<std::size_t>(n_base) * orbit, 2.5);
    auto rep = invariance_score(base, 1, n_base, transformed, orbit);
    CHECK(!rep.neurons[0].included);
    CHECK(rep.neurons[0].reason == "constant response");
    CHECK(rep.included_count == 0);
}

TEST_CASE("invariance matches the exhaustive reference on a synthetic case") {
    Rng rng(103);
    const int neurons = 5, n_base = 200, orbit = 11;
    std::vector<double> base(static_cast<std::size_t>(neurons) * n_base);
    for (auto& v : base) v = rng.next_normal();
    std::vector<double> transformed(base.size() * orbit);
    for (std::size_t i = 0; i < base.size(); ++i)
        for (int o = 0; o < orbit; ++o)
            transformed[i * orbit + o] = base[i] + 0.3 * rng.next_normal();

    auto rep = invariance_score(base, neurons, n_base, transformed, orbit);
    for (int i = 0; i < neurons; ++i) {
        auto ref = reference_invariance(base, transformed, i, n_base, orbit);
        REQUIRE(rep.neurons[i].included == ref.included);
        if (ref.included) {
            CHECK(std::abs(rep.neurons[i].threshold - ref.t) < 1e-12);
            CHECK(std::abs(rep.neurons[i].selectivity - ref.g) < 1e-12);
            CHECK(std::abs(rep.neurons[i].local_fire - ref.l) < 1e-12);
            CHECK(std::abs(rep.neurons[i].score - ref.score) < 1e-12);
        }
    }
}

TEST_CASE("invariance is permutation-invariant over neuron and input order") {
    Rng rng(107);
    const int neurons = 4, n_base = 120, orbit = 5;
    std::vector<double> base(static_cast<std::size_t>(neurons) * n_base);
    for (auto& v : base) v = rng.next_uniform();
    std::vector<double> transformed(base.size() * orbit);
    for (auto& v : transformed) v = rng.next_uniform();

    auto rep = invariance_score(base, neurons, n_base, transformed, orbit);

    // permute base inputs (and their orbits) by reversal
    std::vector<double> base_r(base.size()), trans_r(transformed.size());
    for (int i = 0; i < neurons; ++i)
        for (int x = 0; x < n_base; ++x) {
            const int xr = n_base - 1 - x;
            base_r[static_cast<std::size_t>(i) * n_base + x] =
                base[static_cast<std::size_t>(i) * n_base + xr];
            for (int o = 0; o < orbit; ++o)
                trans_r[(static_cast<std::size_t>(i) * n_base + x) * orbit + o] =
                    transformed[(static_cast<std::size_t>(i) * n_base + xr) * orbit + o];
        }
    auto rep_r = invariance_score(base_r, neurons, n_base, trans_r, orbit);
    CHECK(rep.top_p_mean == doctest::Approx(rep_r.top_p_mean).epsilon(1e-14));
    for (int i = 0; i < neurons; ++i)
        CHECK(rep.neurons[i].score == doctest::Approx(rep_r.neurons[i].score).epsilon(1e-14));
}

TEST_CASE("orbit grids match the measurement protocol") {
    auto rot = rotation_orbit_grid();
    REQUIRE(rot.size() == 11);
    CHECK(rot.front() == -45.0);
    CHECK(rot.back() == 45.0);
    CHECK(rot[5] == 0.0);

    auto tr = translation_orbit_grid();
    REQUIRE(tr.size() == 11);
    CHECK(tr.front() == doctest::Approx(-0.2));
    CHECK(tr.back() == doctest::Approx(0.2));
}

TEST_CASE("shift_plane moves content with zero fill") {
    std::vector<float> img(16, 0.0f);
    img[5] = 1.0f; // (1,1) in 4x4
    auto s = shift_plane(img.data(), 4, 4, 1, 2);
    CHECK(s[2 * 4 + 3] == 1.0f);
    for (int c = 0; c < 4; ++c) CHECK(s[c] == 0.0f);
}

TEST_CASE("weight redundancy: identical, orthogonal, zero-norm rows") {
    Rng rng(109);
    {
        std::vector<double> w{1, 2, 3, 1, 2, 3};
        auto h = weight_redundancy(w.data(), 2, 3, 1000, rng);
        CHECK(h.pairs == 1);
        CHECK(h.mean_abs_cos == doctest::Approx(1.0));
        CHECK(h.counts.back() == 1); // cos = 1 lands in the last bin
    }
    {
        std::vector<double> w{1, 0, 0, 1};
        auto h = weight_redundancy(w.data(), 2, 2, 1000, rng);
        CHECK(h.mean_abs_cos == doctest::Approx(0.0));
    }
    {
        std::vector<double> w{1, 1, 0, 0, 2, 2};
        auto h = weight_redundancy(w.data(), 3, 2, 1000, rng);
        CHECK(h.pairs == 2);
        CHECK(h.skipped_zero_norm == 1);
        std::uint64_t total = 0;
        for (auto c : h.counts) total += c;
        CHECK(total == h.pairs);
    }
}

TEST_CASE("weight redundancy matches the iid analytic expectation") {
    Rng rng(113);
    const int rows = 200, cols = 1024;
    std::vector<double> w(static_cast<std::size_t>(rows) * cols);
    for (auto& v : w) v = rng.next_normal();
    auto h = weight_redundancy(w.data(), rows, cols, 1u << 30, rng);
    const double expected = std::sqrt(2.0 / (3.14159265358979 * cols));
    CHECK(std::abs(h.mean_abs_cos - expected) / expected < 0.2);
    CHECK(!h.sampled);
}

TEST_CASE("weight redundancy is invariant under positive row rescaling") {
    Rng rng(127);
    const int rows = 20, cols = 16;
    std::vector<double> w(static_cast<std::size_t>(rows) * cols);
    for (auto& v : w) v = rng.next_normal();
    auto h1 = weight_redundancy(w.data(), rows, cols, 1u << 20, rng);
    std::vector<double> w2 = w;
    for (int i = 0; i < rows; ++i)
        for (int k = 0; k < cols; ++k) w2[static_cast<std::size_t>(i) * cols + k] *= (i + 1) * 0.5;
    auto h2 = weight_redundancy(w2.data(), rows, cols, 1u << 20, rng);
    CHECK(h1.mean_abs_cos == doctest::Approx(h2.mean_abs_cos).epsilon(1e-12));
}

TEST_CASE("pair sampling kicks in above the cap") {
    Rng rng(131);
    const int rows = 100, cols = 8;
    std::vector<double> w(static_cast<std::size_t>(rows) * cols);
    for (auto& v : w) v = rng.next_normal();
    auto h = weight_redundancy(w.data(), rows, cols, 500, rng);
    CHECK(h.sampled);
    CHECK(h.pairs == 500);
}

TEST_CASE("ablation sweep: cells, baseline-only, and failure rows") {
    MnistSet data;
    data.images = Tensor4f({40, 1, 12, 12});
    Rng rng(137);
    for (auto& v : data.images.data) v = static_cast<float>(rng.next_uniform());
    data.labels.resize(40);
    for (auto& l : data.labels) l = static_cast<std::uint8_t>(rng.next_below(10));

    TrainConfig cfg;
    cfg.total_iters = 3;
    cfg.batch = 8;
    cfg.eval_every = 3;
    cfg.seed = 5;

    NetworkSpec base = preset_network("tiny_cnn");
    PatchReorderConfig level1{{{2, 2}}, EnergyNorm::l1, RemainderPolicy::fixed_margin};

    auto cells = ablation_sweep<double>(base, {1, 2}, {level1}, data, data, cfg);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].ok);
    CHECK(cells[1].ok);
    CHECK(cells[0].placement == 1);
    CHECK(cells[1].placement == 2);

    auto baseline = ablation_sweep<double>(base, {}, {level1}, data, data, cfg);
    REQUIRE(baseline.size() == 1);
    CHECK(baseline[0].levels == "none");
    CHECK(baseline[0].ok);

    // invalid placement is recorded, not thrown
    auto failing = ablation_sweep<double>(base, {7}, {level1}, data, data, cfg);
    REQUIRE(failing.size() == 1);
    CHECK(!failing[0].ok);
    CHECK(failing[0].error.find("conv layer") != std::string::npos);
}
