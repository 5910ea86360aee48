#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "prcnn/layers.hpp"
#include "prcnn/patch_reorder.hpp"
#include "prcnn/tensor.hpp"

namespace prcnn {

// ---------------------------------------------------------------------------
// Declarative network description, loadable from JSON.

struct LayerSpec {
    enum class Kind { conv, relu, pool, pr, dense };
    Kind kind = Kind::relu;
    // conv
    int out_channels = 0, kernel = 0, stride = 1, pad = 0;
    // pool
    int window = 2, pool_stride = 2;
    // pr
    PatchReorderConfig pr;
    // dense
    int out = 0;
};

struct NetworkSpec {
    std::string name;
    std::vector<LayerSpec> layers;
};

namespace spec_detail {

inline int require_int(const nlohmann::json& j, const std::string& field, int layer_idx) {
    if (!j.contains(field) || !j[field].is_number_integer())
        throw ConfigError("network spec: layer " + std::to_string(layer_idx) +
                          " missing integer field \"" + field + "\"");
    return j[field].get<int>();
}

} // namespace spec_detail

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    spec.name = j.value("name", "");
    if (!j.contains("layers") || !j["layers"].is_array())
        throw ConfigError("network spec: missing array field \"layers\"");
    int idx = 0;
    for (const auto& lj : j["layers"]) {
        const std::string type = lj.value("type", "");
        LayerSpec l;
        if (type == "conv") {
            l.kind = LayerSpec::Kind::conv;
            l.out_channels = spec_detail::require_int(lj, "out_channels", idx);
            l.kernel = spec_detail::require_int(lj, "kernel", idx);
            l.stride = lj.value("stride", 1);
            l.pad = lj.value("pad", 0);
        } else if (type == "relu") {
            l.kind = LayerSpec::Kind::relu;
        } else if (type == "pool") {
            l.kind = LayerSpec::Kind::pool;
            l.window = lj.value("window", 2);
            l.pool_stride = lj.value("stride", 2);
        } else if (type == "pr") {
            l.kind = LayerSpec::Kind::pr;
            if (!lj.contains("grids") || !lj["grids"].is_array() || lj["grids"].empty())
                throw ConfigError("network spec: layer " + std::to_string(idx) +
                                  " missing array field \"grids\"");
            for (const auto& g : lj["grids"]) {
                if (!g.is_array() || g.size() != 2)
                    throw ConfigError("network spec: layer " + std::to_string(idx) +
                                      " field \"grids\" entries must be [h, w]");
                l.pr.grids.emplace_back(g[0].get<int>(), g[1].get<int>());
            }
            const std::string norm = lj.value("norm", "l1");
            if (norm == "l1")
                l.pr.norm = EnergyNorm::l1;
            else if (norm == "l2")
                l.pr.norm = EnergyNorm::l2;
            else
                throw ConfigError("network spec: layer " + std::to_string(idx) +
                                  " field \"norm\" must be \"l1\" or \"l2\"");
            const std::string rem = lj.value("remainder", "fixed_margin");
            if (rem == "strict")
                l.pr.remainder = RemainderPolicy::strict;
            else if (rem == "fixed_margin")
                l.pr.remainder = RemainderPolicy::fixed_margin;
            else
                throw ConfigError("network spec: layer " + std::to_string(idx) +
                                  " field \"remainder\" must be \"strict\" or \"fixed_margin\"");
        } else if (type == "dense") {
            l.kind = LayerSpec::Kind::dense;
            l.out = spec_detail::require_int(lj, "out", idx);
        } else {
            throw ConfigError("network spec: layer " + std::to_string(idx) +
                              " has unknown field \"type\" value \"" + type + "\"");
        }
        spec.layers.push_back(std::move(l));
        ++idx;
    }
    if (spec.layers.empty()) throw ConfigError("network spec: field \"layers\" is empty");
    return spec;
}

inline nlohmann::json network_spec_to_json(const NetworkSpec& spec) {
    nlohmann::json j;
    j["name"] = spec.name;
    j["layers"] = nlohmann::json::array();
    for (const auto& l : spec.layers) {
        nlohmann::json lj;
        switch (l.kind) {
        case LayerSpec::Kind::conv:
            lj = {{"type", "conv"}, {"out_channels", l.out_channels}, {"kernel", l.kernel},
                  {"stride", l.stride}, {"pad", l.pad}};
            break;
        case LayerSpec::Kind::relu:
            lj = {{"type", "relu"}};
            break;
        case LayerSpec::Kind::pool:
            lj = {{"type", "pool"}, {"window", l.window}, {"stride", l.pool_stride}};
            break;
        case LayerSpec::Kind::pr: {
            nlohmann::json grids = nlohmann::json::array();
            for (auto [gh, gw] : l.pr.grids) grids.push_back({gh, gw});
            lj = {{"type", "pr"},
                  {"grids", grids},
                  {"norm", l.pr.norm == EnergyNorm::l1 ? "l1" : "l2"},
                  {"remainder",
                   l.pr.remainder == RemainderPolicy::strict ? "strict" : "fixed_margin"}};
            break;
        }
        case LayerSpec::Kind::dense:
            lj = {{"type", "dense"}, {"out", l.out}};
            break;
        }
        j["layers"].push_back(std::move(lj));
    }
    return j;
}

inline NetworkSpec load_network_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open network spec: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("network spec " + path + " is not valid JSON: " + e.what());
    }
    return network_spec_from_json(j);
}

// The two reference architectures: conv9x9/64, pool2, conv7x7/64, pool2,
// dense->10, ReLU after each conv; the pr variant reorders the second conv's
// activations with a 2x2 grid and L1 energies.
inline NetworkSpec preset_network(const std::string& name) {
    auto conv = [](int out_c, int k) {
        LayerSpec l;
        l.kind = LayerSpec::Kind::conv;
        l.out_channels = out_c;
        l.kernel = k;
        return l;
    };
    auto relu = [] {
        LayerSpec l;
        l.kind = LayerSpec::Kind::relu;
        return l;
    };
    auto pool = [] {
        LayerSpec l;
        l.kind = LayerSpec::Kind::pool;
        return l;
    };
    auto dense = [](int out) {
        LayerSpec l;
        l.kind = LayerSpec::Kind::dense;
        l.out = out;
        return l;
    };
    auto pr = [](std::vector<std::pair<int, int>> grids) {
        LayerSpec l;
        l.kind = LayerSpec::Kind::pr;
        l.pr.grids = std::move(grids);
        l.pr.norm = EnergyNorm::l1;
        l.pr.remainder = RemainderPolicy::fixed_margin;
        return l;
    };
    if (name == "mnist_cnn")
        return {"mnist_cnn",
                {conv(64, 9), relu(), pool(), conv(64, 7), relu(), pool(), dense(10)}};
    if (name == "mnist_prcnn")
        return {"mnist_prcnn",
                {conv(64, 9), relu(), pool(), conv(64, 7), relu(), pr({{2, 2}}), pool(),
                 dense(10)}};
    if (name == "tiny_cnn")
        return {"tiny_cnn", {conv(4, 3), relu(), pool(), conv(4, 2), relu(), pool(), dense(10)}};
    if (name == "tiny_prcnn")
        return {"tiny_prcnn",
                {conv(4, 3), relu(), pool(), conv(4, 2), relu(), pr({{2, 2}}), pool(), dense(10)}};
    throw ConfigError("unknown network preset \"" + name + "\"");
}

// Inserts a patch-reorder layer after the activation of the conv_index-th
// conv layer (1-based); used by the ablation sweep.
inline NetworkSpec with_patch_reorder(NetworkSpec base, int conv_index,
                                      const PatchReorderConfig& cfg) {
    int seen = 0;
    for (std::size_t i = 0; i < base.layers.size(); ++i) {
        if (base.layers[i].kind != LayerSpec::Kind::conv) continue;
        if (++seen != conv_index) continue;
        std::size_t insert_at = i + 1;
        if (insert_at < base.layers.size() && base.layers[insert_at].kind == LayerSpec::Kind::relu)
            ++insert_at;
        LayerSpec l;
        l.kind = LayerSpec::Kind::pr;
        l.pr = cfg;
        base.layers.insert(base.layers.begin() + static_cast<long>(insert_at), l);
        base.name += "+pr" + std::to_string(conv_index);
        return base;
    }
    throw ConfigError("with_patch_reorder: network has no conv layer #" +
                      std::to_string(conv_index));
}

// ---------------------------------------------------------------------------
// Runtime network.

template <class T>
class Network {
public:
    struct Layer {
        LayerSpec spec;
        std::string name;
        Dims4 in_dims{}, out_dims{};
        Conv2dLayer<T> conv;
        DenseLayer<T> dense;
        MaxPoolLayer pool;
        // forward caches (training mode)
        Tensor4T<T> input;
        std::vector<std::int32_t> argmax;
        PermutationRecord record;
        // parameter gradients from the last backward
        Conv2dGrads<T> conv_grads;
        DenseGrads<T> dense_grads;
    };

    Network() = default;

    // input_dims uses n as a placeholder batch (shape checking only).
    Network(const NetworkSpec& spec, Dims4 input_dims, Rng& rng, double weight_std = 0.01,
            double bias_init = 0.1)
        : spec_(spec), input_dims_(input_dims) {
        Dims4 cur = input_dims;
        int conv_n = 0, pool_n = 0, relu_n = 0, pr_n = 0, dense_n = 0;
        for (const auto& ls : spec.layers) {
            Layer l;
            l.spec = ls;
            l.in_dims = cur;
            switch (ls.kind) {
            case LayerSpec::Kind::conv:
                l.name = "conv" + std::to_string(++conv_n);
                l.conv.kernels = gaussian_init<T>({ls.out_channels, cur.c, ls.kernel, ls.kernel},
                                                  0.0, weight_std, rng);
                l.conv.bias.assign(ls.out_channels, static_cast<T>(bias_init));
                l.conv.stride = ls.stride;
                l.conv.pad = ls.pad;
                cur = l.conv.out_dims(cur);
                break;
            case LayerSpec::Kind::relu:
                l.name = "relu" + std::to_string(++relu_n);
                break;
            case LayerSpec::Kind::pool:
                l.name = "pool" + std::to_string(++pool_n);
                l.pool = MaxPoolLayer{ls.window, ls.pool_stride};
                cur = l.pool.out_dims(cur);
                break;
            case LayerSpec::Kind::pr:
                l.name = "pr" + std::to_string(++pr_n);
                partition(cur.h, cur.w, ls.pr); // validates placement
                break;
            case LayerSpec::Kind::dense: {
                l.name = "dense" + std::to_string(++dense_n);
                const int in_dim = cur.c * cur.h * cur.w;
                l.dense.weights = gaussian_init<T>({ls.out, in_dim, 1, 1}, 0.0, weight_std, rng);
                l.dense.bias.assign(ls.out, static_cast<T>(bias_init));
                cur = {cur.n, ls.out, 1, 1};
                break;
            }
            }
            l.out_dims = cur;
            layers_.push_back(std::move(l));
        }
        output_dims_ = cur;
    }

    const NetworkSpec& spec() const { return spec_; }
    Dims4 input_dims() const { return input_dims_; }
    Dims4 output_dims() const { return output_dims_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    // Forward pass; train=true keeps the caches backward() needs.
    Tensor4T<T> forward(const Tensor4T<T>& x, bool train) {
        Tensor4T<T> cur = x;
        for (auto& l : layers_) cur = forward_layer(l, std::move(cur), train);
        return cur;
    }

    // Runs a single layer in eval mode; used by analyses that walk the net.
    Tensor4T<T> forward_layer_for_analysis(Layer& l, Tensor4T<T> cur) {
        return forward_layer(l, std::move(cur), false);
    }

    // Activations after layer `index` (eval mode).
    Tensor4T<T> forward_to(const Tensor4T<T>& x, std::size_t index) {
        if (index >= layers_.size()) throw ConfigError("forward_to: layer index out of range");
        Tensor4T<T> cur = x;
        for (std::size_t i = 0; i <= index; ++i)
            cur = forward_layer(layers_[i], std::move(cur), false);
        return cur;
    }

    // Backpropagates grad wrt logits; fills per-layer parameter gradients and
    // returns grad wrt the input. Requires a preceding forward(train=true).
    Tensor4T<T> backward(const Tensor4T<T>& grad_logits, bool need_input_grad = false) {
        Tensor4T<T> g = grad_logits;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            Layer& l = layers_[i];
            const bool need_gx = need_input_grad || i > 0;
            switch (l.spec.kind) {
            case LayerSpec::Kind::conv:
                l.conv_grads = conv2d_backward(l.input, l.conv, g, need_gx);
                g = need_gx ? std::move(l.conv_grads.x) : Tensor4T<T>();
                l.conv_grads.x = Tensor4T<T>();
                break;
            case LayerSpec::Kind::relu:
                g = relu_backward(l.input, g);
                break;
            case LayerSpec::Kind::pool:
                g = maxpool_backward(l.in_dims, l.argmax, g);
                break;
            case LayerSpec::Kind::pr:
                g = pr_backward(g, l.record);
                break;
            case LayerSpec::Kind::dense: {
                Tensor4T<T> reshaped = std::move(g);
                reshaped.dims = {l.in_dims.n, l.spec.out, 1, 1};
                l.dense_grads = dense_backward(l.input, l.dense, reshaped);
                g = need_gx ? std::move(l.dense_grads.x) : Tensor4T<T>();
                l.dense_grads.x = Tensor4T<T>();
                if (need_gx) g.dims = l.in_dims;
                break;
            }
            }
        }
        return g;
    }

    struct ParamRef {
        std::string name;
        Tensor4T<T>* tensor = nullptr;        // null for bias params
        std::vector<T>* vec = nullptr;        // null for tensor params
        Tensor4T<T>* grad_tensor = nullptr;
        std::vector<T>* grad_vec = nullptr;
    };

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (auto& l : layers_) {
            if (l.spec.kind == LayerSpec::Kind::conv) {
                out.push_back({l.name + ".kernels", &l.conv.kernels, nullptr,
                               &l.conv_grads.kernels, nullptr});
                out.push_back({l.name + ".bias", nullptr, &l.conv.bias, nullptr,
                               &l.conv_grads.bias});
            } else if (l.spec.kind == LayerSpec::Kind::dense) {
                out.push_back({l.name + ".weights", &l.dense.weights, nullptr,
                               &l.dense_grads.weights, nullptr});
                out.push_back({l.name + ".bias", nullptr, &l.dense.bias, nullptr,
                               &l.dense_grads.bias});
            }
        }
        return out;
    }

    std::size_t param_count() {
        std::size_t n = 0;
        for (auto& p : params()) n += p.tensor ? p.tensor->size() : p.vec->size();
        return n;
    }

private:
    Tensor4T<T> forward_layer(Layer& l, Tensor4T<T> cur, bool train) {
        switch (l.spec.kind) {
        case LayerSpec::Kind::conv: {
            Tensor4T<T> y = conv2d_forward(cur, l.conv);
            if (train) l.input = std::move(cur);
            return y;
        }
        case LayerSpec::Kind::relu: {
            Tensor4T<T> y = relu_forward(cur);
            if (train) l.input = std::move(cur);
            return y;
        }
        case LayerSpec::Kind::pool: {
            auto r = maxpool_forward(cur, l.pool);
            l.argmax = std::move(r.argmax);
            l.in_dims = cur.dims;
            return std::move(r.y);
        }
        case LayerSpec::Kind::pr: {
            auto r = pr_forward(cur, l.spec.pr);
            l.record = std::move(r.record);
            return std::move(r.z);
        }
        case LayerSpec::Kind::dense: {
            l.in_dims = cur.dims;
            Tensor4T<T> y = dense_forward(cur, l.dense);
            if (train) l.input = std::move(cur);
            return y;
        }
        }
        throw ConfigError("unreachable layer kind");
    }

    NetworkSpec spec_;
    Dims4 input_dims_{}, output_dims_{};
    std::vector<Layer> layers_;
};

// ---------------------------------------------------------------------------
// Checkpoints: manifest.json (ordered layer names, shapes, network spec,
// dtype) plus one tensor dump per parameter.

template <class T>
void save_checkpoint(Network<T>& net, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "prcnn-checkpoint-v1";
    manifest["dtype"] = std::is_same_v<T, double> ? "f64" : "f32";
    const Dims4 in = net.input_dims();
    manifest["input"] = {in.c, in.h, in.w};
    manifest["spec"] = network_spec_to_json(net.spec());
    manifest["params"] = nlohmann::json::array();
    int idx = 0;
    for (auto& p : net.params()) {
        char file[64];
        std::snprintf(file, sizeof file, "p%03d_%s.prt4", idx, p.name.c_str());
        Tensor4T<T> tmp;
        const Tensor4T<T>* t = p.tensor;
        if (!t) {
            tmp = Tensor4T<T>({1, 1, 1, static_cast<int>(p.vec->size())});
            tmp.data = *p.vec;
            t = &tmp;
        }
        save_tensor(dir + "/" + file, *t);
        manifest["params"].push_back(
            {{"name", p.name},
             {"file", file},
             {"shape", {t->dims.n, t->dims.c, t->dims.h, t->dims.w}}});
        ++idx;
    }
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw DataError("cannot write checkpoint manifest in " + dir);
    f << manifest.dump(2) << "\n";
}

inline nlohmann::json load_checkpoint_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw DataError("checkpoint manifest not found: " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        f >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint manifest in " + dir + " is not valid JSON: " + e.what());
    }
    if (manifest.value("format", "") != "prcnn-checkpoint-v1")
        throw DataError("unrecognized checkpoint format in " + dir);
    return manifest;
}

inline std::string checkpoint_dtype(const std::string& dir) {
    return load_checkpoint_manifest(dir).value("dtype", "f64");
}

template <class T>
Network<T> load_checkpoint(const std::string& dir) {
    nlohmann::json manifest = load_checkpoint_manifest(dir);
    const std::string want = std::is_same_v<T, double> ? "f64" : "f32";
    if (manifest["dtype"] != want)
        throw DataError("checkpoint dtype " + manifest["dtype"].get<std::string>() +
                        " does not match requested " + want);
    NetworkSpec spec = network_spec_from_json(manifest["spec"]);
    auto in = manifest["input"];
    Dims4 input_dims{1, in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
    Rng rng(0);
    Network<T> net(spec, input_dims, rng, 0.0, 0.0);
    auto params = net.params();
    const auto& pj = manifest["params"];
    if (pj.size() != params.size())
        throw DataError("checkpoint parameter count mismatch in " + dir);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (pj[i]["name"] != params[i].name)
            throw DataError("checkpoint parameter order mismatch: expected " + params[i].name +
                            ", found " + pj[i]["name"].get<std::string>());
        Tensor4T<T> t = load_tensor<T>(dir + "/" + pj[i]["file"].get<std::string>());
        if (params[i].tensor) {
            if (!(t.dims == params[i].tensor->dims))
                throw DataError("checkpoint shape mismatch for " + params[i].name);
            *params[i].tensor = std::move(t);
        } else {
            if (t.size() != params[i].vec->size())
                throw DataError("checkpoint shape mismatch for " + params[i].name);
            *params[i].vec = std::move(t.data);
        }
    }
    return net;
}

} // namespace prcnn
