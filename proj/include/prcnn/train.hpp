#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "prcnn/mnist.hpp"
#include "prcnn/network.hpp"
#include "prcnn/tensor.hpp"

namespace prcnn {

struct TrainConfig {
    double base_lr = 0.01;
    double lr_decay_factor = 0.1;
    long lr_step = 50000;
    long total_iters = 150000;
    int batch = 256;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;
    long eval_every = 1000;
    double weight_std = 0.01;
    double bias_init = 0.1;

    double lr_at(long iter) const {
        return base_lr * std::pow(lr_decay_factor, static_cast<double>(iter / lr_step));
    }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.base_lr = j.value("base_lr", c.base_lr);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_step = j.value("lr_step", c.lr_step);
    c.total_iters = j.value("total_iters", c.total_iters);
    c.batch = j.value("batch", c.batch);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.weight_std = j.value("weight_std", c.weight_std);
    c.bias_init = j.value("bias_init", c.bias_init);
    if (c.batch < 1 || c.total_iters < 0 || c.lr_step < 1 || c.eval_every < 1)
        throw ConfigError("train config: batch, lr_step and eval_every must be >= 1");
    return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"base_lr", c.base_lr},
            {"lr_decay_factor", c.lr_decay_factor},
            {"lr_step", c.lr_step},
            {"total_iters", c.total_iters},
            {"batch", c.batch},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"seed", c.seed},
            {"eval_every", c.eval_every},
            {"weight_std", c.weight_std},
            {"bias_init", c.bias_init}};
}

// ---------------------------------------------------------------------------

// Top-1 error rate in percent; ties in the logits resolve to the first class.
template <class T>
double evaluate(Network<T>& net, const MnistSet& set, int batch = 256) {
    const int n = set.images.dims.n;
    if (n == 0) throw ConfigError("evaluate: empty dataset");
    long wrong = 0;
    for (int start = 0; start < n; start += batch) {
        const int b = std::min(batch, n - start);
        Tensor4T<T> x({b, set.images.dims.c, set.images.dims.h, set.images.dims.w});
        const std::size_t per = x.size() / b;
        for (int i = 0; i < b; ++i) {
            const float* src = set.images.sample(start + i);
            T* dst = x.sample(i);
            for (std::size_t p = 0; p < per; ++p) dst[p] = static_cast<T>(src[p]);
        }
        Tensor4T<T> logits = net.forward(x, false);
        const int classes = logits.dims.c;
        for (int i = 0; i < b; ++i) {
            const T* row = logits.sample(i);
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (row[c] > row[best]) best = c;
            if (best != set.labels[start + i]) ++wrong;
        }
    }
    return 100.0 * static_cast<double>(wrong) / n;
}

struct MetricsRow {
    long iter;
    double lr;
    double train_loss;
    double eval_error;
};

template <class T>
struct TrainResult {
    std::vector<MetricsRow> log;
    double final_eval_error = 0.0;
};

// Minibatch SGD with the update v <- momentum*v - lr*g; w <- w + v (plain
// w <- w - lr*g when momentum is 0). Deterministic given config.seed; aborts
// with NumericError on a non-finite loss after restoring the last parameters
// that produced a finite loss.
template <class T>
TrainResult<T> train(Network<T>& net, const TrainConfig& cfg, const MnistSet& train_set,
                     const MnistSet& eval_set,
                     const std::function<void(const MetricsRow&)>& on_log = {}) {
    const int n = train_set.images.dims.n;
    if (n == 0) throw ConfigError("train: empty dataset");
    if (static_cast<int>(train_set.labels.size()) != n)
        throw ConfigError("train: image/label count mismatch");

    auto params = net.params();
    std::vector<std::vector<T>> velocity;
    if (cfg.momentum != 0.0) {
        for (auto& p : params)
            velocity.emplace_back(p.tensor ? p.tensor->size() : p.vec->size(), T(0));
    }
    std::vector<std::vector<T>> last_good;
    auto snapshot = [&] {
        last_good.clear();
        for (auto& p : params)
            last_good.push_back(p.tensor ? p.tensor->data : *p.vec);
    };
    auto restore = [&] {
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].tensor)
                params[i].tensor->data = last_good[i];
            else
                *params[i].vec = last_good[i];
        }
    };
    snapshot();

    Rng order_rng(Rng::derive(cfg.seed, 1));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto reshuffle = [&] {
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[static_cast<int>(order_rng.next_below(i + 1))]);
    };
    reshuffle();
    int cursor = 0;

    const Dims4 img = train_set.images.dims;
    Tensor4T<T> x({cfg.batch, img.c, img.h, img.w});
    std::vector<std::uint8_t> labels(cfg.batch);
    const std::size_t per = static_cast<std::size_t>(img.c) * img.h * img.w;

    TrainResult<T> result;
    double last_loss = 0.0;
    for (long iter = 0; iter < cfg.total_iters; ++iter) {
        if (cursor + cfg.batch > n) {
            reshuffle();
            cursor = 0;
        }
        for (int i = 0; i < cfg.batch; ++i) {
            const int src_idx = order[cursor + i];
            const float* src = train_set.images.sample(src_idx);
            T* dst = x.sample(i);
            for (std::size_t p = 0; p < per; ++p) dst[p] = static_cast<T>(src[p]);
            labels[i] = train_set.labels[src_idx];
        }
        cursor += cfg.batch;

        Tensor4T<T> logits = net.forward(x, true);
        auto sm = softmax_xent_forward(logits, labels);
        if (!std::isfinite(sm.loss)) {
            restore();
            throw NumericError("train: loss became non-finite at iteration " +
                               std::to_string(iter) + "; last good parameters restored");
        }
        last_loss = sm.loss;
        snapshot();

        net.backward(softmax_xent_backward(sm.probs, labels));

        const double lr = cfg.lr_at(iter);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            T* w = p.tensor ? p.tensor->data.data() : p.vec->data();
            const T* g = p.grad_tensor && p.tensor ? p.grad_tensor->data.data()
                                                   : p.grad_vec->data();
            const std::size_t len = p.tensor ? p.tensor->size() : p.vec->size();
            if (cfg.momentum != 0.0) {
                T* v = velocity[pi].data();
                for (std::size_t k = 0; k < len; ++k) {
                    T grad = g[k] + static_cast<T>(cfg.weight_decay) * w[k];
                    v[k] = static_cast<T>(cfg.momentum) * v[k] - static_cast<T>(lr) * grad;
                    w[k] += v[k];
                }
            } else {
                for (std::size_t k = 0; k < len; ++k) {
                    T grad = g[k] + static_cast<T>(cfg.weight_decay) * w[k];
                    w[k] -= static_cast<T>(lr) * grad;
                }
            }
        }

        const long done = iter + 1;
        if (done % cfg.eval_every == 0 || done == cfg.total_iters) {
            MetricsRow row{done, lr, last_loss, evaluate(net, eval_set)};
            result.log.push_back(row);
            if (on_log) on_log(row);
        }
    }
    result.final_eval_error = result.log.empty() ? evaluate(net, eval_set)
                                                 : result.log.back().eval_error;
    return result;
}

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences, f64 only.

struct GradcheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool skipped = false;
    std::string note;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double max_rel_err = 0.0;
    bool skipped_for_ties = false;
    std::string note;

    bool pass(double tol) const { return !skipped_for_ties && max_rel_err < tol; }
};

namespace gradcheck_detail {

// Relative error with a per-tensor floor: entries far below the tensor's
// largest gradient are compared on that scale instead, which keeps
// finite-difference round-off on vanishing entries from dominating the
// report.
inline double rel_err(double a, double b, double tensor_scale) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3 * tensor_scale, 1e-12});
}

inline double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace gradcheck_detail

struct GradcheckOptions {
    int batch = 2;
    double step = 1e-5;
    double input_scale = 1.0;   // inputs drawn from U[-s, s]
    double weight_std = 0.3;    // larger than training init so gradients are well-scaled
    double bias_init = 0.1;
    double tie_gap_threshold = 1e-3;
    int reseed_attempts = 5;
};

// Compares analytic gradients of the scalar training loss with central
// differences for every parameter and the input. Patch-reorder layers are
// checked at inputs whose patch energies are separated; near-tie inputs are
// reported as skipped because the permutation is not locally constant there.
inline GradcheckReport gradcheck_network(const NetworkSpec& spec, Dims4 input_dims,
                                         std::uint64_t seed,
                                         const GradcheckOptions& opt = {}) {
    GradcheckReport report;
    for (int attempt = 0; attempt < opt.reseed_attempts; ++attempt) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(attempt)));
        Network<double> net(spec, {opt.batch, input_dims.c, input_dims.h, input_dims.w}, rng,
                            opt.weight_std, opt.bias_init);
        Tensor4 x({opt.batch, input_dims.c, input_dims.h, input_dims.w});
        for (auto& v : x.data) v = opt.input_scale * (2.0 * rng.next_uniform() - 1.0);
        std::vector<std::uint8_t> labels(opt.batch);
        const int classes = net.output_dims().c;
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng.next_below(classes));

        // Energy separation at every pr layer, measured at its actual input.
        bool has_pr = false;
        double min_gap = std::numeric_limits<double>::infinity();
        {
            Tensor4 cur = x;
            for (auto& l : net.layers()) {
                if (l.spec.kind == LayerSpec::Kind::pr) {
                    has_pr = true;
                    auto hier = partition(cur.dims.h, cur.dims.w, l.spec.pr);
                    auto maps = compute_energies(cur, hier, l.spec.pr.norm);
                    for (const auto& em : maps)
                        for (const auto& lv : em.levels)
                            for (int p = 0; p < lv.parents; ++p) {
                                const long base = static_cast<long>(p) * lv.rows * lv.cols;
                                std::vector<double> e(lv.e.begin() + base,
                                                      lv.e.begin() + base + lv.rows * lv.cols);
                                std::sort(e.begin(), e.end());
                                for (std::size_t k = 1; k < e.size(); ++k)
                                    min_gap = std::min(min_gap, e[k] - e[k - 1]);
                            }
                }
                cur = net.forward_layer_for_analysis(l, std::move(cur));
            }
        }
        if (has_pr && min_gap < opt.tie_gap_threshold) {
            if (attempt + 1 < opt.reseed_attempts) continue;
            report.skipped_for_ties = true;
            report.note = "patch energies nearly tied (min gap " + std::to_string(min_gap) +
                          " < " + std::to_string(opt.tie_gap_threshold) +
                          "); permutation not locally constant, finite differences invalid";
            return report;
        }

        auto loss_at = [&](Network<double>& n2, const Tensor4& xin) {
            Tensor4 logits = n2.forward(xin, false);
            return softmax_xent_forward(logits, labels).loss;
        };

        Tensor4 logits = net.forward(x, true);
        auto sm = softmax_xent_forward(logits, labels);
        Tensor4 grad_x = net.backward(softmax_xent_backward(sm.probs, labels), true);

        auto check_tensor = [&](const std::string& name, Tensor4* values, const Tensor4& analytic,
                                const std::function<double()>& eval) {
            GradcheckEntry entry{name, 0.0, false, ""};
            const double scale = gradcheck_detail::max_abs(analytic.data);
            for (std::size_t i = 0; i < values->data.size(); ++i) {
                const double orig = values->data[i];
                values->data[i] = orig + opt.step;
                const double up = eval();
                values->data[i] = orig - opt.step;
                const double down = eval();
                values->data[i] = orig;
                const double fd = (up - down) / (2.0 * opt.step);
                entry.max_rel_err = std::max(
                    entry.max_rel_err, gradcheck_detail::rel_err(analytic.data[i], fd, scale));
            }
            report.entries.push_back(entry);
            report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        };

        // input gradient
        check_tensor("input", &x, grad_x, [&] { return loss_at(net, x); });

        // parameters (bias vectors are viewed as 1-D tensors)
        for (auto& p : net.params()) {
            if (p.tensor) {
                check_tensor(p.name, p.tensor, *p.grad_tensor, [&] { return loss_at(net, x); });
            } else {
                GradcheckEntry entry{p.name, 0.0, false, ""};
                const double scale = gradcheck_detail::max_abs(*p.grad_vec);
                for (std::size_t i = 0; i < p.vec->size(); ++i) {
                    const double orig = (*p.vec)[i];
                    (*p.vec)[i] = orig + opt.step;
                    const double up = loss_at(net, x);
                    (*p.vec)[i] = orig - opt.step;
                    const double down = loss_at(net, x);
                    (*p.vec)[i] = orig;
                    const double fd = (up - down) / (2.0 * opt.step);
                    entry.max_rel_err = std::max(
                        entry.max_rel_err,
                        gradcheck_detail::rel_err((*p.grad_vec)[i], fd, scale));
                }
                report.entries.push_back(entry);
                report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
            }
        }
        return report;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Dataset directory format produced by prepare-data: one tensor dump plus one
// label file per split.

inline void save_dataset_split(const std::string& dir, const std::string& split,
                               const MnistSet& set) {
    save_tensor(dir + "/" + split + "_images.prt4", set.images);
    save_labels(dir + "/" + split + "_labels.bin", set.labels);
}

inline MnistSet load_dataset_split(const std::string& dir, const std::string& split) {
    MnistSet set;
    set.images = load_tensor_cast<float>(dir + "/" + split + "_images.prt4");
    set.labels = load_labels(dir + "/" + split + "_labels.bin");
    if (set.images.dims.n != static_cast<int>(set.labels.size()))
        throw DataError("dataset split " + split + " in " + dir +
                        ": image/label count mismatch");
    return set;
}

} // namespace prcnn
