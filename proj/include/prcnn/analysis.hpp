#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "prcnn/network.hpp"
#include "prcnn/rng.hpp"
#include "prcnn/tensor.hpp"
#include "prcnn/train.hpp"

namespace prcnn {

// ---------------------------------------------------------------------------
// Invariance measure: a neuron fires when its response exceeds t_i, where t_i
// is the largest observed response that keeps the selectivity
// G(i) = |{x : h_i(x) > t_i}| / N above 0.01. The local firing rate L(i) is
// the fraction of transformed versions of firing base inputs that still fire,
// and the per-neuron score is L(i)/G(i).

struct NeuronScore {
    int neuron = 0;
    double threshold = 0.0;
    double selectivity = 0.0; // G
    double local_fire = 0.0;  // L
    double score = 0.0;       // L / G
    bool included = false;
    std::string reason; // why a neuron was excluded
};

struct InvarianceReport {
    std::vector<NeuronScore> neurons;
    int included_count = 0;
    double p = 0.2;
    double top_p_mean = 0.0; // mean score of the top-p fraction of included neurons
};

// base: responses over N base inputs, laid out base[neuron * n_base + x].
// transformed: responses over each base input's orbit of `orbit` transformed
// versions, laid out transformed[(neuron * n_base + x) * orbit + o].
inline InvarianceReport invariance_score(const std::vector<double>& base, int neurons, int n_base,
                                         const std::vector<double>& transformed, int orbit,
                                         double p = 0.2, double g_min = 0.01) {
    if (neurons < 1 || n_base < 1 || orbit < 1)
        throw ConfigError("invariance_score: empty inputs");
    if (base.size() != static_cast<std::size_t>(neurons) * n_base ||
        transformed.size() != static_cast<std::size_t>(neurons) * n_base * orbit)
        throw ConfigError("invariance_score: activation matrix sizes do not match dims");

    InvarianceReport report;
    report.p = p;
    report.neurons.resize(neurons);
    for (int i = 0; i < neurons; ++i) {
        NeuronScore& ns = report.neurons[i];
        ns.neuron = i;
        const double* r = base.data() + static_cast<std::size_t>(i) * n_base;

        std::vector<double> sorted(r, r + n_base);
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        // Candidate thresholds are observed values, scanned from the top;
        // the first with G > g_min is the most selective admissible one.
        bool found = false;
        double t = 0.0;
        int firing = 0;
        for (int k = 0; k < n_base; ++k) {
            if (k + 1 < n_base && sorted[k + 1] == sorted[k]) continue; // same candidate
            const double cand = sorted[k];
            const int count = static_cast<int>(std::lower_bound(sorted.begin(), sorted.end(), cand,
                                                                std::greater<>()) -
                                               sorted.begin());
            if (static_cast<double>(count) / n_base > g_min) {
                t = cand;
                firing = count;
                found = true;
                break;
            }
        }
        if (!found) {
            ns.included = false;
            ns.reason = sorted.front() == sorted.back()
                            ? "constant response"
                            : "no threshold satisfies G > " + std::to_string(g_min);
            continue;
        }
        ns.threshold = t;
        ns.selectivity = static_cast<double>(firing) / n_base;

        long fired_orbit = 0, total_orbit = 0;
        for (int x = 0; x < n_base; ++x) {
            if (r[x] <= t) continue;
            const double* o = transformed.data() +
                              (static_cast<std::size_t>(i) * n_base + x) * orbit;
            for (int k = 0; k < orbit; ++k)
                if (o[k] > t) ++fired_orbit;
            total_orbit += orbit;
        }
        ns.local_fire = total_orbit ? static_cast<double>(fired_orbit) / total_orbit : 0.0;
        ns.score = ns.local_fire / ns.selectivity;
        ns.included = true;
    }

    std::vector<double> scores;
    for (const auto& ns : report.neurons)
        if (ns.included) scores.push_back(ns.score);
    report.included_count = static_cast<int>(scores.size());
    if (!scores.empty()) {
        std::sort(scores.begin(), scores.end(), std::greater<>());
        const std::size_t top = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(p * static_cast<double>(scores.size()))));
        double acc = 0.0;
        for (std::size_t k = 0; k < top; ++k) acc += scores[k];
        report.top_p_mean = acc / static_cast<double>(top);
    }
    return report;
}

// The §-grids used to build transform orbits: 11 rotations / 11 shifts.
inline std::vector<double> rotation_orbit_grid() {
    std::vector<double> g;
    for (int k = -5; k <= 5; ++k) g.push_back(9.0 * k);
    return g;
}

inline std::vector<double> translation_orbit_grid() {
    std::vector<double> g;
    for (int k = -5; k <= 5; ++k) g.push_back(0.04 * k);
    return g;
}

// Whole-plane shift with zero fill (orbit transform for translation grids).
inline std::vector<float> shift_plane(const float* img, int h, int w, int dy, int dx) {
    std::vector<float> out(static_cast<std::size_t>(h) * w, 0.0f);
    for (int r = 0; r < h; ++r) {
        const int sr = r - dy;
        if (sr < 0 || sr >= h) continue;
        for (int c = 0; c < w; ++c) {
            const int sc = c - dx;
            if (sc < 0 || sc >= w) continue;
            out[static_cast<std::size_t>(r) * w + c] = img[static_cast<std::size_t>(sr) * w + sc];
        }
    }
    return out;
}

// Activations of layer `layer_index` over a whole set, transposed to
// neuron-major layout out[neuron * n + sample].
template <class T>
std::vector<double> collect_activations(Network<T>& net, const Tensor4f& images,
                                        std::size_t layer_index, int batch = 256) {
    const int n = images.dims.n;
    const Dims4 od = net.layers().at(layer_index).out_dims;
    const std::size_t neurons = static_cast<std::size_t>(od.c) * od.h * od.w;
    std::vector<double> out(neurons * n);
    for (int start = 0; start < n; start += batch) {
        const int b = std::min(batch, n - start);
        Tensor4T<T> x({b, images.dims.c, images.dims.h, images.dims.w});
        const std::size_t per = x.size() / b;
        for (int i = 0; i < b; ++i) {
            const float* src = images.sample(start + i);
            T* dst = x.sample(i);
            for (std::size_t pp = 0; pp < per; ++pp) dst[pp] = static_cast<T>(src[pp]);
        }
        Tensor4T<T> act = net.forward_to(x, layer_index);
        for (int i = 0; i < b; ++i) {
            const T* row = act.sample(i);
            for (std::size_t j = 0; j < neurons; ++j)
                out[j * n + start + i] = static_cast<double>(row[j]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cosine-similarity histogram between weight-matrix rows.

struct RedundancyHistogram {
    int bins = 80; // over [-1, 1]
    std::vector<std::uint64_t> counts;
    std::uint64_t pairs = 0;             // pairs measured (counts sum to this)
    std::uint64_t skipped_zero_norm = 0; // sampled pairs dropped for zero-norm rows
    bool sampled = false;                // true when max_pairs capped the pair set
    double mean_abs_cos = 0.0;

    double bin_low(int b) const { return -1.0 + 2.0 * b / bins; }
};

inline RedundancyHistogram weight_redundancy(const double* w, int rows, long cols,
                                             std::uint64_t max_pairs, Rng& rng, int bins = 80) {
    if (rows < 2) throw ConfigError("weight_redundancy: need at least 2 rows");
    RedundancyHistogram hist;
    hist.bins = bins;
    hist.counts.assign(bins, 0);

    std::vector<double> norms(rows);
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        const double* row = w + static_cast<std::size_t>(i) * cols;
        for (long k = 0; k < cols; ++k) acc += row[k] * row[k];
        norms[i] = std::sqrt(acc);
    }

    double abs_acc = 0.0;
    auto add_pair = [&](int i, int j) {
        if (norms[i] == 0.0 || norms[j] == 0.0) {
            ++hist.skipped_zero_norm;
            return;
        }
        const double* a = w + static_cast<std::size_t>(i) * cols;
        const double* b = w + static_cast<std::size_t>(j) * cols;
        double acc = 0.0;
        for (long k = 0; k < cols; ++k) acc += a[k] * b[k];
        double cos = std::clamp(acc / (norms[i] * norms[j]), -1.0, 1.0);
        int bin = std::min(bins - 1, static_cast<int>((cos + 1.0) / 2.0 * bins));
        ++hist.counts[bin];
        ++hist.pairs;
        abs_acc += std::abs(cos);
    };

    const std::uint64_t all = static_cast<std::uint64_t>(rows) * (rows - 1) / 2;
    if (all <= max_pairs) {
        for (int i = 0; i < rows; ++i)
            for (int j = i + 1; j < rows; ++j) add_pair(i, j);
    } else {
        hist.sampled = true;
        for (std::uint64_t s = 0; s < max_pairs; ++s) {
            int i = static_cast<int>(rng.next_below(rows));
            int j = static_cast<int>(rng.next_below(rows - 1));
            if (j >= i) ++j;
            add_pair(std::min(i, j), std::max(i, j));
        }
    }
    hist.mean_abs_cos = hist.pairs ? abs_acc / static_cast<double>(hist.pairs) : 0.0;
    return hist;
}

// ---------------------------------------------------------------------------
// Ablation sweep: trains one model per (pr placement, level config) cell.

struct AblationCell {
    int placement = 0; // conv index, 0 = baseline without pr
    std::string levels;
    double final_error = 0.0;
    bool ok = false;
    std::string error;
};

template <class T>
std::vector<AblationCell> ablation_sweep(const NetworkSpec& base,
                                         const std::vector<int>& placements,
                                         const std::vector<PatchReorderConfig>& level_configs,
                                         const MnistSet& train_set, const MnistSet& eval_set,
                                         const TrainConfig& cfg) {
    auto describe = [](const PatchReorderConfig& c) {
        std::string s;
        for (auto [gh, gw] : c.grids) {
            if (!s.empty()) s += "/";
            s += std::to_string(gh) + "x" + std::to_string(gw);
        }
        return s + (c.norm == EnergyNorm::l1 ? ":l1" : ":l2");
    };

    std::vector<AblationCell> cells;
    auto run_cell = [&](const NetworkSpec& spec, AblationCell cell) {
        try {
            Rng rng(Rng::derive(cfg.seed, 0));
            const Dims4 in = train_set.images.dims;
            Network<T> net(spec, {1, in.c, in.h, in.w}, rng, cfg.weight_std, cfg.bias_init);
            auto result = train(net, cfg, train_set, eval_set);
            cell.final_error = result.final_eval_error;
            cell.ok = true;
        } catch (const std::exception& e) {
            cell.ok = false;
            cell.error = e.what();
        }
        cells.push_back(std::move(cell));
    };

    if (placements.empty()) {
        AblationCell cell;
        cell.placement = 0;
        cell.levels = "none";
        run_cell(base, std::move(cell));
        return cells;
    }
    for (int placement : placements)
        for (const auto& level_cfg : level_configs) {
            AblationCell cell;
            cell.placement = placement;
            cell.levels = describe(level_cfg);
            try {
                NetworkSpec spec = with_patch_reorder(base, placement, level_cfg);
                run_cell(spec, std::move(cell));
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
                cells.push_back(std::move(cell));
            }
        }
    return cells;
}

} // namespace prcnn
