// prcnn: train and analyze small CNNs with feature-map patch reordering.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prcnn/analysis.hpp"
#include "prcnn/manifest.hpp"
#include "prcnn/mnist.hpp"
#include "prcnn/network.hpp"
#include "prcnn/parallel.hpp"
#include "prcnn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prcnn;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

NetworkSpec resolve_spec(const std::string& spec_arg) {
    if (spec_arg == "mnist_cnn" || spec_arg == "mnist_prcnn" || spec_arg == "tiny_cnn" ||
        spec_arg == "tiny_prcnn")
        return preset_network(spec_arg);
    return load_network_spec(spec_arg);
}

// ---------------------------------------------------------------------------
// prepare-data

struct PrepareArgs {
    std::string mnist_dir, transform, out;
    std::uint64_t seed = 1;
    int canvas = 42;
};

int cmd_prepare_data(const PrepareArgs& a) {
    const std::string ti = a.mnist_dir + "/train-images-idx3-ubyte";
    const std::string tl = a.mnist_dir + "/train-labels-idx1-ubyte";
    const std::string ei = a.mnist_dir + "/t10k-images-idx3-ubyte";
    const std::string el = a.mnist_dir + "/t10k-labels-idx1-ubyte";
    for (const auto& p : {ti, tl, ei, el})
        if (!fs::exists(p)) throw DataError("missing IDX file: " + p);

    TransformSpec spec;
    spec.kind = a.transform == "r" ? TransformSpec::Kind::rotation
                                   : TransformSpec::Kind::translation;
    spec.canvas = a.canvas;

    // Train and test distortions come from disjoint derived streams.
    const std::uint64_t train_seed = Rng::derive(a.seed, 1);
    const std::uint64_t test_seed = Rng::derive(a.seed, 2);

    json cfg{{"mnist_dir", a.mnist_dir}, {"transform", a.transform}, {"seed", a.seed},
             {"canvas", a.canvas},       {"train_seed", train_seed}, {"test_seed", test_seed}};
    RunManifest manifest(a.out, "prepare-data", cfg, a.seed);

    MnistSet train_src = parse_idx(ti, tl);
    MnistSet test_src = parse_idx(ei, el);
    MnistSet train_set = make_distorted_set(train_src, spec, train_seed);
    MnistSet test_set = make_distorted_set(test_src, spec, test_seed);

    save_dataset_split(a.out, "train", train_set);
    save_dataset_split(a.out, "test", test_set);
    for (const char* f :
         {"train_images.prt4", "train_labels.bin", "test_images.prt4", "test_labels.bin"})
        manifest.add_output(f);
    manifest.finish();
    std::printf("prepared %s set: train %d images (%dx%d), test %d images\n",
                a.transform == "r" ? "rotated" : "translated", train_set.images.dims.n,
                train_set.images.dims.h, train_set.images.dims.w, test_set.images.dims.n);
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string spec = "mnist_cnn", config_path, data, out, dtype = "f32";
};

template <class T>
int run_train(const TrainArgs& a, const NetworkSpec& spec, const TrainConfig& cfg,
              RunManifest& manifest) {
    MnistSet train_set = load_dataset_split(a.data, "train");
    MnistSet eval_set = load_dataset_split(a.data, "test");
    const Dims4 img = train_set.images.dims;

    Rng init_rng(Rng::derive(cfg.seed, 0));
    Network<T> net(spec, {1, img.c, img.h, img.w}, init_rng, cfg.weight_std, cfg.bias_init);

    std::ofstream csv(a.out + "/metrics.csv");
    if (!csv) throw DataError("cannot write metrics.csv in " + a.out);
    csv << "iter,lr,train_loss,eval_error\n";
    auto log_row = [&](const MetricsRow& row) {
        char line[128];
        std::snprintf(line, sizeof line, "%ld,%.10g,%.10g,%.10g\n", row.iter, row.lr,
                      row.train_loss, row.eval_error);
        csv << line;
        csv.flush();
        std::printf("iter %ld  lr %.5g  loss %.4f  eval_error %.2f%%\n", row.iter, row.lr,
                    row.train_loss, row.eval_error);
        std::fflush(stdout);
    };

    const std::string ckpt_dir = a.out + "/checkpoint";
    try {
        auto result = train(net, cfg, train_set, eval_set, log_row);
        save_checkpoint(net, ckpt_dir);
        manifest.add_output("checkpoint");
        manifest.add_output("metrics.csv");
        manifest.set("final_eval_error", result.final_eval_error);
        manifest.finish();
        std::printf("final eval error: %.4f%%\n", result.final_eval_error);
        return 0;
    } catch (const NumericError& e) {
        // train() restored the last finite-loss parameters; keep them.
        save_checkpoint(net, ckpt_dir);
        manifest.add_output("checkpoint");
        manifest.add_output("metrics.csv");
        manifest.finish("aborted-non-finite-loss");
        std::fprintf(stderr, "error: %s (last good checkpoint retained)\n", e.what());
        return kExitNumeric;
    }
}

// ---------------------------------------------------------------------------
// eval

template <class T>
double eval_checkpoint(const std::string& ckpt, const std::string& data,
                       const std::string& split) {
    Network<T> net = load_checkpoint<T>(ckpt);
    MnistSet set = load_dataset_split(data, split);
    return evaluate(net, set);
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& split,
             const std::string& out) {
    json cfg{{"checkpoint", ckpt}, {"data", data}, {"split", split}};
    RunManifest manifest(out, "eval", cfg, 0);
    const double err = checkpoint_dtype(ckpt) == "f64"
                           ? eval_checkpoint<double>(ckpt, data, split)
                           : eval_checkpoint<float>(ckpt, data, split);
    std::ofstream f(out + "/eval.json");
    f << json{{"error_percent", err}, {"split", split}, {"checkpoint", ckpt}}.dump(2) << "\n";
    manifest.add_output("eval.json");
    manifest.finish();
    std::printf("eval error: %.4f%%\n", err);
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& spec_arg, int input_hw, std::uint64_t seed, double tol,
                  const std::string& out) {
    json cfg{{"spec", spec_arg}, {"input", input_hw}, {"seed", seed}, {"tol", tol}};
    RunManifest manifest(out, "gradcheck", cfg, seed);

    std::vector<std::pair<std::string, NetworkSpec>> specs;
    if (spec_arg.empty()) {
        specs.emplace_back("tiny_cnn", preset_network("tiny_cnn"));
        specs.emplace_back("tiny_prcnn", preset_network("tiny_prcnn"));
    } else {
        specs.emplace_back(spec_arg, resolve_spec(spec_arg));
    }

    json reports = json::array();
    bool ok = true;
    double worst = 0.0;
    for (auto& [name, spec] : specs) {
        auto report = gradcheck_network(spec, {1, 1, input_hw, input_hw}, seed);
        json entries = json::array();
        for (const auto& e : report.entries)
            entries.push_back({{"name", e.name}, {"max_rel_err", e.max_rel_err}});
        reports.push_back({{"spec", name},
                           {"max_rel_err", report.max_rel_err},
                           {"skipped_for_ties", report.skipped_for_ties},
                           {"note", report.note},
                           {"entries", entries}});
        std::printf("%s: max rel err %.3g%s\n", name.c_str(), report.max_rel_err,
                    report.skipped_for_ties ? " (skipped: near-tie energies)" : "");
        worst = std::max(worst, report.max_rel_err);
        if (report.skipped_for_ties || report.max_rel_err >= tol) ok = false;
    }
    std::ofstream f(out + "/gradcheck.json");
    f << json{{"tolerance", tol}, {"pass", ok}, {"reports", reports}}.dump(2) << "\n";
    manifest.add_output("gradcheck.json");
    manifest.finish(ok ? "ok" : "failed");
    if (!ok) {
        std::fprintf(stderr, "gradcheck failed: max rel err %.3g (tolerance %.3g)\n", worst, tol);
        return kExitNumeric;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// invariance

struct InvarianceArgs {
    std::string checkpoint, data, split = "test", grid = "rotation", layer = "auto", out;
    int count = 2000;
    double p = 0.2;
};

template <class T>
int run_invariance(const InvarianceArgs& a, RunManifest& manifest) {
    Network<T> net = load_checkpoint<T>(a.checkpoint);
    MnistSet set = load_dataset_split(a.data, a.split);
    const int n = std::min(a.count, set.images.dims.n);
    const int h = set.images.dims.h, w = set.images.dims.w;

    std::size_t layer_index = 0;
    if (a.layer == "auto") {
        bool found = false;
        for (std::size_t i = 0; i < net.layers().size(); ++i)
            if (net.layers()[i].spec.kind == LayerSpec::Kind::pool) {
                layer_index = i;
                found = true;
            }
        if (!found) layer_index = net.layers().size() - 1;
    } else {
        bool found = false;
        std::string all;
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            all += (all.empty() ? "" : ", ") + net.layers()[i].name;
            if (net.layers()[i].name == a.layer) {
                layer_index = i;
                found = true;
            }
        }
        if (!found)
            throw ConfigError("no layer named \"" + a.layer + "\" (layers: " + all + ")");
    }
    const std::string layer_name = net.layers()[layer_index].name;

    Tensor4f base({n, 1, h, w});
    std::copy(set.images.data.begin(),
              set.images.data.begin() + static_cast<long>(n) * h * w, base.data.begin());

    const Dims4 od = net.layers()[layer_index].out_dims;
    const int neurons = od.c * od.h * od.w;
    std::vector<double> base_acts = collect_activations(net, base, layer_index);

    std::vector<double> grid_values =
        a.grid == "rotation" ? rotation_orbit_grid() : translation_orbit_grid();
    const int orbit = static_cast<int>(grid_values.size());

    std::vector<double> transformed(static_cast<std::size_t>(neurons) * n * orbit);
    Tensor4f warped({n, 1, h, w});
    for (int o = 0; o < orbit; ++o) {
        for (int i = 0; i < n; ++i) {
            std::vector<float> plane;
            if (a.grid == "rotation") {
                plane = rotate_plane(base.plane(i, 0), h, w, grid_values[o]);
            } else {
                const int dy = static_cast<int>(std::lround(grid_values[o] * h));
                const int dx = static_cast<int>(std::lround(grid_values[o] * w));
                plane = shift_plane(base.plane(i, 0), h, w, dy, dx);
            }
            std::copy(plane.begin(), plane.end(), warped.plane(i, 0));
        }
        std::vector<double> acts = collect_activations(net, warped, layer_index);
        for (std::size_t j = 0; j < static_cast<std::size_t>(neurons) * n; ++j)
            transformed[j * orbit + o] = acts[j];
    }

    InvarianceReport report = invariance_score(base_acts, neurons, n, transformed, orbit, a.p);

    std::ofstream csv(a.out + "/invariance.csv");
    csv << "neuron,threshold,selectivity,local_fire,score,included,reason\n";
    for (const auto& ns : report.neurons) {
        char line[256];
        std::snprintf(line, sizeof line, "%d,%.10g,%.10g,%.10g,%.10g,%d,%s\n", ns.neuron,
                      ns.threshold, ns.selectivity, ns.local_fire, ns.score,
                      ns.included ? 1 : 0, ns.reason.c_str());
        csv << line;
    }
    std::ofstream js(a.out + "/invariance.json");
    js << json{{"top_p_mean", report.top_p_mean},
               {"p", report.p},
               {"included", report.included_count},
               {"excluded", static_cast<int>(report.neurons.size()) - report.included_count},
               {"neurons", neurons},
               {"base_inputs", n},
               {"orbit", orbit},
               {"grid", a.grid},
               {"layer", layer_name}}
              .dump(2)
       << "\n";
    manifest.add_output("invariance.csv");
    manifest.add_output("invariance.json");
    manifest.finish();
    std::printf("invariance (%s grid, layer %s): top-%.0f%% mean score %.4f over %d neurons\n",
                a.grid.c_str(), layer_name.c_str(), 100.0 * a.p, report.top_p_mean,
                report.included_count);
    return 0;
}

int cmd_invariance(const InvarianceArgs& a) {
    json cfg{{"checkpoint", a.checkpoint}, {"data", a.data},   {"split", a.split},
             {"transform_grid", a.grid},   {"layer", a.layer}, {"count", a.count},
             {"p", a.p}};
    RunManifest manifest(a.out, "invariance", cfg, 0);
    if (checkpoint_dtype(a.checkpoint) == "f64") return run_invariance<double>(a, manifest);
    return run_invariance<float>(a, manifest);
}

// ---------------------------------------------------------------------------
// redundancy

int cmd_redundancy(const std::string& ckpt, const std::string& layer, std::uint64_t max_pairs,
                   std::uint64_t seed, const std::string& out) {
    json cfg{{"checkpoint", ckpt}, {"layer", layer}, {"max_pairs", max_pairs}, {"seed", seed}};
    RunManifest manifest(out, "redundancy", cfg, seed);

    json ckpt_manifest = load_checkpoint_manifest(ckpt);
    std::string file;
    for (const auto& p : ckpt_manifest["params"])
        if (p["name"] == layer + ".weights") file = p["file"].get<std::string>();
    if (file.empty())
        throw ConfigError("checkpoint has no parameter \"" + layer + ".weights\"");
    Tensor4 w = load_tensor_cast<double>(ckpt + "/" + file);
    const int rows = w.dims.n;
    const long cols = static_cast<long>(w.dims.c) * w.dims.h * w.dims.w;

    Rng rng(seed);
    RedundancyHistogram hist = weight_redundancy(w.data.data(), rows, cols, max_pairs, rng);

    std::ofstream csv(out + "/redundancy.csv");
    csv << "bin_low,bin_high,count\n";
    for (int b = 0; b < hist.bins; ++b) {
        char line[96];
        std::snprintf(line, sizeof line, "%.6f,%.6f,%llu\n", hist.bin_low(b), hist.bin_low(b + 1),
                      static_cast<unsigned long long>(hist.counts[b]));
        csv << line;
    }
    std::ofstream js(out + "/redundancy.json");
    js << json{{"mean_abs_cos", hist.mean_abs_cos},
               {"pairs", hist.pairs},
               {"skipped_zero_norm", hist.skipped_zero_norm},
               {"sampled", hist.sampled},
               {"rows", rows},
               {"cols", cols},
               {"layer", layer}}
              .dump(2)
       << "\n";
    manifest.add_output("redundancy.csv");
    manifest.add_output("redundancy.json");
    manifest.finish();
    std::printf("redundancy (%s): mean |cos| %.6f over %llu pairs\n", layer.c_str(),
                hist.mean_abs_cos, static_cast<unsigned long long>(hist.pairs));
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const std::string& grid_file, const std::string& data, const std::string& out) {
    std::ifstream f(grid_file);
    if (!f) throw DataError("cannot open grid file: " + grid_file);
    json grid;
    try {
        f >> grid;
    } catch (const json::exception& e) {
        throw ConfigError("grid file " + grid_file + " is not valid JSON: " + e.what());
    }

    NetworkSpec base = grid["base_spec"].is_string()
                           ? resolve_spec(grid["base_spec"].get<std::string>())
                           : network_spec_from_json(grid["base_spec"]);
    std::vector<int> placements;
    for (const auto& p : grid.value("placements", json::array())) placements.push_back(p);
    EnergyNorm norm = grid.value("norm", "l1") == std::string("l2") ? EnergyNorm::l2
                                                                    : EnergyNorm::l1;
    std::vector<PatchReorderConfig> level_cfgs;
    for (const auto& lv : grid.value("levels", json::array())) {
        PatchReorderConfig c;
        c.norm = norm;
        c.remainder = RemainderPolicy::fixed_margin;
        for (const auto& g : lv) c.grids.emplace_back(g[0].get<int>(), g[1].get<int>());
        level_cfgs.push_back(std::move(c));
    }
    if (level_cfgs.empty() && !placements.empty())
        throw ConfigError("grid file: non-empty \"placements\" needs a \"levels\" array");
    TrainConfig cfg = grid.contains("config") ? train_config_from_json(grid["config"])
                                              : TrainConfig{};
    const std::string dtype = grid.value("dtype", "f32");

    RunManifest manifest(out, "ablate", grid, cfg.seed);
    MnistSet train_set = load_dataset_split(data, "train");
    MnistSet eval_set = load_dataset_split(data, "test");

    std::vector<AblationCell> cells =
        dtype == "f64"
            ? ablation_sweep<double>(base, placements, level_cfgs, train_set, eval_set, cfg)
            : ablation_sweep<float>(base, placements, level_cfgs, train_set, eval_set, cfg);

    std::ofstream csv(out + "/ablate.csv");
    csv << "placement,levels,status,final_error,message\n";
    for (const auto& c : cells) {
        char line[512];
        std::snprintf(line, sizeof line, "%d,%s,%s,%.10g,%s\n", c.placement, c.levels.c_str(),
                      c.ok ? "ok" : "failed", c.final_error, c.error.c_str());
        csv << line;
        std::printf("placement %d levels %s: %s %.4f%% %s\n", c.placement, c.levels.c_str(),
                    c.ok ? "error" : "FAILED", c.final_error, c.error.c_str());
    }
    manifest.add_output("ablate.csv");
    manifest.finish();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"patch-reordering CNN trainer and analysis toolkit"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads,
                   "worker threads for tensor ops (0 = hardware default; results are bitwise "
                   "independent of this setting)");

    PrepareArgs prep;
    auto* prep_cmd = app.add_subcommand("prepare-data",
                                        "build frozen rotated/translated digit datasets");
    prep_cmd->add_option("--mnist-dir", prep.mnist_dir, "directory with the four IDX files")
        ->required();
    prep_cmd->add_option("--transform", prep.transform, "r (rotation) or t (translation)")
        ->required()
        ->check(CLI::IsMember({"r", "t"}));
    prep_cmd->add_option("--seed", prep.seed, "distortion seed (default 1)");
    prep_cmd->add_option("--canvas", prep.canvas, "canvas size for translation (default 42)");
    prep_cmd->add_option("--out", prep.out, "output dataset directory")->required();

    TrainArgs targs;
    TrainConfig cli_cfg;
    auto* train_cmd = app.add_subcommand("train", "train a network with minibatch SGD");
    train_cmd->add_option("--spec", targs.spec,
                          "mnist_cnn | mnist_prcnn | tiny_cnn | tiny_prcnn | spec.json path");
    train_cmd->add_option("--config", targs.config_path, "train config JSON file");
    train_cmd->add_option("--data", targs.data, "dataset directory from prepare-data")
        ->required();
    train_cmd->add_option("--out", targs.out, "output run directory")->required();
    train_cmd->add_option("--dtype", targs.dtype, "f32 (default) or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    auto* o_iters = train_cmd->add_option("--iters", cli_cfg.total_iters, "total SGD iterations");
    auto* o_batch = train_cmd->add_option("--batch", cli_cfg.batch, "minibatch size");
    auto* o_lr = train_cmd->add_option("--lr", cli_cfg.base_lr, "base learning rate");
    auto* o_decay =
        train_cmd->add_option("--lr-decay", cli_cfg.lr_decay_factor, "decay factor per step");
    auto* o_step = train_cmd->add_option("--lr-step", cli_cfg.lr_step, "iterations per decay");
    auto* o_mom = train_cmd->add_option("--momentum", cli_cfg.momentum, "SGD momentum");
    auto* o_wd = train_cmd->add_option("--weight-decay", cli_cfg.weight_decay, "L2 penalty");
    auto* o_seed = train_cmd->add_option("--seed", cli_cfg.seed, "run seed");
    auto* o_eval = train_cmd->add_option("--eval-every", cli_cfg.eval_every, "eval cadence");

    std::string eval_ckpt, eval_data, eval_split = "test", eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "top-1 error of a checkpoint on a dataset");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--split", eval_split, "train or test (default test)");
    eval_cmd->add_option("--out", eval_out, "output directory")->required();

    std::string gc_spec;
    int gc_input = 12;
    std::uint64_t gc_seed = 7;
    double gc_tol = 1e-4;
    std::string gc_out;
    auto* gc_cmd = app.add_subcommand(
        "gradcheck", "finite-difference check of every gradient (f64, central differences)");
    gc_cmd->add_option("--spec", gc_spec, "network spec (default: tiny_cnn and tiny_prcnn)");
    gc_cmd->add_option("--input", gc_input, "input height/width (default 12)");
    gc_cmd->add_option("--seed", gc_seed, "seed for the check point");
    gc_cmd->add_option("--tol", gc_tol, "max relative error tolerance (default 1e-4)");
    gc_cmd->add_option("--out", gc_out, "output directory")->required();

    InvarianceArgs inv;
    auto* inv_cmd = app.add_subcommand("invariance", "selectivity/invariance score of a layer");
    inv_cmd->add_option("--checkpoint", inv.checkpoint, "checkpoint directory")->required();
    inv_cmd->add_option("--data", inv.data, "dataset directory with base images")->required();
    inv_cmd->add_option("--split", inv.split, "dataset split (default test)");
    inv_cmd->add_option("--transform-grid", inv.grid, "rotation | translation")
        ->check(CLI::IsMember({"rotation", "translation"}));
    inv_cmd->add_option("--layer", inv.layer, "layer name (default: last pool layer)");
    inv_cmd->add_option("--count", inv.count, "number of base images (default 2000)");
    inv_cmd->add_option("--p", inv.p, "top fraction to average (default 0.2)");
    inv_cmd->add_option("--out", inv.out, "output directory")->required();

    std::string red_ckpt, red_layer = "dense1", red_out;
    std::uint64_t red_pairs = 2000000, red_seed = 1;
    auto* red_cmd = app.add_subcommand(
        "redundancy", "cosine-similarity histogram between weight rows of a dense layer");
    red_cmd->add_option("--checkpoint", red_ckpt, "checkpoint directory")->required();
    red_cmd->add_option("--layer", red_layer, "dense layer name (default dense1)");
    red_cmd->add_option("--max-pairs", red_pairs, "pair sampling cap (default 2000000)");
    red_cmd->add_option("--seed", red_seed, "sampling seed");
    red_cmd->add_option("--out", red_out, "output directory")->required();

    std::string ab_grid, ab_data, ab_out;
    auto* ab_cmd =
        app.add_subcommand("ablate", "train one model per (pr placement, level) grid cell");
    ab_cmd->add_option("--grid-file", ab_grid, "JSON sweep description")->required();
    ab_cmd->add_option("--data", ab_data, "dataset directory")->required();
    ab_cmd->add_option("--out", ab_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);
    set_thread_count(threads);

    try {
        if (*prep_cmd) return cmd_prepare_data(prep);
        if (*train_cmd) {
            TrainConfig cfg;
            if (!targs.config_path.empty()) {
                std::ifstream f(targs.config_path);
                if (!f) throw DataError("cannot open config: " + targs.config_path);
                json j;
                try {
                    f >> j;
                } catch (const json::exception& e) {
                    throw ConfigError("config " + targs.config_path + " is not valid JSON: " +
                                      e.what());
                }
                cfg = train_config_from_json(j);
            }
            if (*o_iters) cfg.total_iters = cli_cfg.total_iters;
            if (*o_batch) cfg.batch = cli_cfg.batch;
            if (*o_lr) cfg.base_lr = cli_cfg.base_lr;
            if (*o_decay) cfg.lr_decay_factor = cli_cfg.lr_decay_factor;
            if (*o_step) cfg.lr_step = cli_cfg.lr_step;
            if (*o_mom) cfg.momentum = cli_cfg.momentum;
            if (*o_wd) cfg.weight_decay = cli_cfg.weight_decay;
            if (*o_seed) cfg.seed = cli_cfg.seed;
            if (*o_eval) cfg.eval_every = cli_cfg.eval_every;

            NetworkSpec spec = resolve_spec(targs.spec);
            json cfg_echo = train_config_to_json(cfg);
            cfg_echo["spec"] = network_spec_to_json(spec);
            cfg_echo["data"] = targs.data;
            cfg_echo["dtype"] = targs.dtype;
            cfg_echo["threads"] = threads;
            RunManifest manifest(targs.out, "train", cfg_echo, cfg.seed);
            return targs.dtype == "f64" ? run_train<double>(targs, spec, cfg, manifest)
                                        : run_train<float>(targs, spec, cfg, manifest);
        }
        if (*eval_cmd) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_out);
        if (*gc_cmd) return cmd_gradcheck(gc_spec, gc_input, gc_seed, gc_tol, gc_out);
        if (*inv_cmd) return cmd_invariance(inv);
        if (*red_cmd) return cmd_redundancy(red_ckpt, red_layer, red_pairs, red_seed, red_out);
        if (*ab_cmd) return cmd_ablate(ab_grid, ab_data, ab_out);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumeric;
    }
    return kExitUsage;
}
