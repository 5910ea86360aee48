#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "prcnn/gemm.hpp"
#include "prcnn/parallel.hpp"
#include "prcnn/tensor.hpp"

namespace prcnn {

// ---------------------------------------------------------------------------
// conv2d: cross-correlation (no kernel flip) + per-channel bias, zero padding.

template <class T>
struct Conv2dLayer {
    Tensor4T<T> kernels; // (out_c, in_c, kh, kw)
    std::vector<T> bias; // out_c
    int stride = 1;
    int pad = 0;

    Dims4 out_dims(Dims4 in) const {
        const Dims4& k = kernels.dims;
        if (in.c != k.c)
            throw ConfigError("conv2d: input channels " + std::to_string(in.c) +
                              " != kernel channels " + std::to_string(k.c));
        int oh = (in.h + 2 * pad - k.h) / stride + 1;
        int ow = (in.w + 2 * pad - k.w) / stride + 1;
        if (in.h + 2 * pad < k.h || in.w + 2 * pad < k.w || oh < 1 || ow < 1)
            throw ConfigError("conv2d: no valid output position for input (" + in.to_string() +
                              ") with kernel (" + k.to_string() + ")");
        return {in.n, k.n, oh, ow};
    }
};

namespace conv_detail {

template <class T>
std::vector<T>& scratch(int which) {
    thread_local std::vector<T> bufs[4];
    return bufs[which];
}

// col is (in_c*kh*kw) x (n*oh*ow), position index = s*oh*ow + oy*ow + ox.
template <class T>
void im2col(const Tensor4T<T>& x, const Conv2dLayer<T>& layer, Dims4 od, T* col) {
    const int kh = layer.kernels.dims.h, kw = layer.kernels.dims.w;
    const int stride = layer.stride, pad = layer.pad;
    const int P = od.h * od.w;
    const long Nt = static_cast<long>(od.n) * P;
    const int rows = x.dims.c * kh * kw;
    parallel_for(0, rows, [&](std::int64_t k) {
        const int ci = static_cast<int>(k) / (kh * kw);
        const int u = (static_cast<int>(k) / kw) % kh;
        const int v = static_cast<int>(k) % kw;
        T* dst = col + k * Nt;
        for (int s = 0; s < od.n; ++s) {
            const T* src = x.plane(s, ci);
            for (int oy = 0; oy < od.h; ++oy) {
                const int iy = oy * stride + u - pad;
                T* drow = dst + static_cast<long>(s) * P + static_cast<long>(oy) * od.w;
                if (iy < 0 || iy >= x.dims.h) {
                    std::fill(drow, drow + od.w, T(0));
                    continue;
                }
                const T* srow = src + static_cast<long>(iy) * x.dims.w;
                for (int ox = 0; ox < od.w; ++ox) {
                    const int ix = ox * stride + v - pad;
                    drow[ox] = (ix >= 0 && ix < x.dims.w) ? srow[ix] : T(0);
                }
            }
        }
    });
}

} // namespace conv_detail

template <class T>
Tensor4T<T> conv2d_forward(const Tensor4T<T>& x, const Conv2dLayer<T>& layer) {
    const Dims4 od = layer.out_dims(x.dims);
    const int M = od.c;
    const int K = x.dims.c * layer.kernels.dims.h * layer.kernels.dims.w;
    const int P = od.h * od.w;
    const long Nt = static_cast<long>(od.n) * P;

    auto& col = conv_detail::scratch<T>(0);
    auto& out_rows = conv_detail::scratch<T>(1);
    col.resize(static_cast<std::size_t>(K) * Nt);
    out_rows.resize(static_cast<std::size_t>(M) * Nt);

    conv_detail::im2col(x, layer, od, col.data());
    gemm<T>(false, false, M, static_cast<int>(Nt), K, layer.kernels.data.data(), K, col.data(),
            Nt, out_rows.data(), Nt);

    Tensor4T<T> y(od);
    parallel_for(0, static_cast<std::int64_t>(od.n) * M, [&](std::int64_t t) {
        const int s = static_cast<int>(t / M), m = static_cast<int>(t % M);
        const T* src = out_rows.data() + static_cast<long>(m) * Nt + static_cast<long>(s) * P;
        T* dst = y.plane(s, m);
        const T b = layer.bias[m];
        for (int p = 0; p < P; ++p) dst[p] = src[p] + b;
    });
    return y;
}

template <class T>
struct Conv2dGrads {
    Tensor4T<T> x;
    Tensor4T<T> kernels;
    std::vector<T> bias;
};

template <class T>
Conv2dGrads<T> conv2d_backward(const Tensor4T<T>& x, const Conv2dLayer<T>& layer,
                               const Tensor4T<T>& grad_out, bool need_grad_x = true) {
    const Dims4 od = layer.out_dims(x.dims);
    if (!(grad_out.dims == od))
        throw ConfigError("conv2d_backward: grad_out dims (" + grad_out.dims.to_string() +
                          ") != forward output dims (" + od.to_string() + ")");
    const int M = od.c;
    const int K = x.dims.c * layer.kernels.dims.h * layer.kernels.dims.w;
    const int P = od.h * od.w;
    const long Nt = static_cast<long>(od.n) * P;

    auto& col = conv_detail::scratch<T>(0);
    auto& g_rows = conv_detail::scratch<T>(1);
    col.resize(static_cast<std::size_t>(K) * Nt);
    g_rows.resize(static_cast<std::size_t>(M) * Nt);
    conv_detail::im2col(x, layer, od, col.data());
    parallel_for(0, static_cast<std::int64_t>(od.n) * M, [&](std::int64_t t) {
        const int s = static_cast<int>(t / M), m = static_cast<int>(t % M);
        const T* src = grad_out.plane(s, m);
        T* dst = g_rows.data() + static_cast<long>(m) * Nt + static_cast<long>(s) * P;
        for (int p = 0; p < P; ++p) dst[p] = src[p];
    });

    Conv2dGrads<T> g;
    g.kernels = Tensor4T<T>(layer.kernels.dims);
    gemm<T>(false, true, M, K, static_cast<int>(Nt), g_rows.data(), Nt, col.data(), Nt,
            g.kernels.data.data(), K);

    g.bias.assign(M, T(0));
    parallel_for(0, M, [&](std::int64_t m) {
        const T* row = g_rows.data() + m * Nt;
        T acc = 0;
        for (long i = 0; i < Nt; ++i) acc += row[i];
        g.bias[m] = acc;
    });

    if (need_grad_x) {
        auto& grad_col = conv_detail::scratch<T>(2);
        grad_col.resize(static_cast<std::size_t>(K) * Nt);
        gemm<T>(true, false, K, static_cast<int>(Nt), M, layer.kernels.data.data(), K,
                g_rows.data(), Nt, grad_col.data(), Nt);

        g.x = Tensor4T<T>(x.dims);
        const int kh = layer.kernels.dims.h, kw = layer.kernels.dims.w;
        parallel_for(0, od.n, [&](std::int64_t s) {
            for (int k = 0; k < K; ++k) {
                const int ci = k / (kh * kw);
                const int u = (k / kw) % kh;
                const int v = k % kw;
                const T* src = grad_col.data() + static_cast<long>(k) * Nt + s * P;
                T* dst = g.x.plane(static_cast<int>(s), ci);
                for (int oy = 0; oy < od.h; ++oy) {
                    const int iy = oy * layer.stride + u - layer.pad;
                    if (iy < 0 || iy >= x.dims.h) continue;
                    for (int ox = 0; ox < od.w; ++ox) {
                        const int ix = ox * layer.stride + v - layer.pad;
                        if (ix < 0 || ix >= x.dims.w) continue;
                        dst[static_cast<long>(iy) * x.dims.w + ix] += src[oy * od.w + ox];
                    }
                }
            }
        });
    }
    return g;
}

// ---------------------------------------------------------------------------
// max pooling; ties resolved toward the first raster-order maximum so the
// backward routing is deterministic.

struct MaxPoolLayer {
    int window = 2;
    int stride = 2;

    Dims4 out_dims(Dims4 in) const {
        if (window < 1 || stride < 1 || window > in.h || window > in.w)
            throw ConfigError("maxpool: empty pooling window for input (" + in.to_string() + ")");
        return {in.n, in.c, (in.h - window) / stride + 1, (in.w - window) / stride + 1};
    }
};

template <class T>
struct MaxPoolResult {
    Tensor4T<T> y;
    std::vector<std::int32_t> argmax; // flat spatial input index per output element
};

template <class T>
MaxPoolResult<T> maxpool_forward(const Tensor4T<T>& x, const MaxPoolLayer& layer) {
    const Dims4 od = layer.out_dims(x.dims);
    MaxPoolResult<T> r{Tensor4T<T>(od), std::vector<std::int32_t>(od.flat())};
    parallel_for(0, static_cast<std::int64_t>(od.n) * od.c, [&](std::int64_t t) {
        const int s = static_cast<int>(t / od.c), c = static_cast<int>(t % od.c);
        const T* src = x.plane(s, c);
        T* dst = r.y.plane(s, c);
        std::int32_t* arg = r.argmax.data() + r.y.index(s, c, 0, 0);
        for (int oy = 0; oy < od.h; ++oy) {
            for (int ox = 0; ox < od.w; ++ox) {
                const int y0 = oy * layer.stride, x0 = ox * layer.stride;
                T best = src[static_cast<long>(y0) * x.dims.w + x0];
                int best_idx = y0 * x.dims.w + x0;
                for (int u = 0; u < layer.window; ++u)
                    for (int v = 0; v < layer.window; ++v) {
                        const int idx = (y0 + u) * x.dims.w + (x0 + v);
                        if (src[idx] > best) {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                dst[oy * od.w + ox] = best;
                arg[oy * od.w + ox] = best_idx;
            }
        }
    });
    return r;
}

template <class T>
Tensor4T<T> maxpool_backward(Dims4 in_dims, const std::vector<std::int32_t>& argmax,
                             const Tensor4T<T>& grad_out) {
    if (argmax.size() != grad_out.size())
        throw ConfigError("maxpool_backward: argmax cache does not match grad_out dims");
    Tensor4T<T> gx(in_dims);
    const int P = grad_out.dims.h * grad_out.dims.w;
    parallel_for(0, static_cast<std::int64_t>(in_dims.n) * in_dims.c, [&](std::int64_t t) {
        const int s = static_cast<int>(t / in_dims.c), c = static_cast<int>(t % in_dims.c);
        const T* g = grad_out.plane(s, c);
        const std::int32_t* arg = argmax.data() + grad_out.index(s, c, 0, 0);
        T* dst = gx.plane(s, c);
        for (int p = 0; p < P; ++p) dst[arg[p]] += g[p];
    });
    return gx;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor4T<T> relu_forward(const Tensor4T<T>& x) {
    Tensor4T<T> y(x.dims);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    return y;
}

// Subgradient 0 at the kink.
template <class T>
Tensor4T<T> relu_backward(const Tensor4T<T>& x, const Tensor4T<T>& grad_y) {
    if (!x.same_shape(grad_y)) throw ConfigError("relu_backward: shape mismatch");
    Tensor4T<T> gx(x.dims);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        gx.data[i] = x.data[i] > T(0) ? grad_y.data[i] : T(0);
    return gx;
}

// ---------------------------------------------------------------------------
// dense: y = W x + b on the flattened (c, h, w) of each sample.

template <class T>
struct DenseLayer {
    Tensor4T<T> weights; // (out_dim, in_dim, 1, 1)
    std::vector<T> bias; // out_dim

    int out_dim() const { return weights.dims.n; }
    int in_dim() const { return weights.dims.c; }

    Dims4 out_dims(Dims4 in) const {
        const long flat = static_cast<long>(in.c) * in.h * in.w;
        if (flat != in_dim())
            throw ConfigError("dense: flattened input length " + std::to_string(flat) +
                              " != in_dim " + std::to_string(in_dim()));
        return {in.n, out_dim(), 1, 1};
    }
};

template <class T>
Tensor4T<T> dense_forward(const Tensor4T<T>& x, const DenseLayer<T>& layer) {
    const Dims4 od = layer.out_dims(x.dims);
    const int in = layer.in_dim(), out = layer.out_dim();
    Tensor4T<T> y(od);
    gemm<T>(false, true, x.dims.n, out, in, x.data.data(), in, layer.weights.data.data(), in,
            y.data.data(), out);
    parallel_for(0, x.dims.n, [&](std::int64_t s) {
        T* row = y.sample(static_cast<int>(s));
        for (int o = 0; o < out; ++o) row[o] += layer.bias[o];
    });
    return y;
}

template <class T>
struct DenseGrads {
    Tensor4T<T> x;
    Tensor4T<T> weights;
    std::vector<T> bias;
};

template <class T>
DenseGrads<T> dense_backward(const Tensor4T<T>& x, const DenseLayer<T>& layer,
                             const Tensor4T<T>& grad_out) {
    const int in = layer.in_dim(), out = layer.out_dim(), n = x.dims.n;
    if (!(grad_out.dims == Dims4{n, out, 1, 1}))
        throw ConfigError("dense_backward: grad_out shape mismatch");
    DenseGrads<T> g;
    g.x = Tensor4T<T>(x.dims);
    gemm<T>(false, false, n, in, out, grad_out.data.data(), out, layer.weights.data.data(), in,
            g.x.data.data(), in);
    g.weights = Tensor4T<T>(layer.weights.dims);
    gemm<T>(true, false, out, in, n, grad_out.data.data(), out, x.data.data(), in,
            g.weights.data.data(), in);
    g.bias.assign(out, T(0));
    for (int s = 0; s < n; ++s) {
        const T* row = grad_out.sample(s);
        for (int o = 0; o < out; ++o) g.bias[o] += row[o];
    }
    return g;
}

// ---------------------------------------------------------------------------
// softmax + cross-entropy on logits (n, classes, 1, 1); loss is the batch
// mean of -log p[label]. Computed with max subtraction.

template <class T>
struct SoftmaxXentResult {
    double loss = 0.0;
    Tensor4T<T> probs;
};

template <class T>
SoftmaxXentResult<T> softmax_xent_forward(const Tensor4T<T>& logits,
                                          std::span<const std::uint8_t> labels) {
    const int n = logits.dims.n, classes = logits.dims.c;
    if (logits.dims.h != 1 || logits.dims.w != 1)
        throw ConfigError("softmax_xent: logits must be (n, classes, 1, 1)");
    if (static_cast<int>(labels.size()) != n)
        throw ConfigError("softmax_xent: label count != batch size");
    SoftmaxXentResult<T> r;
    r.probs = Tensor4T<T>(logits.dims);
    double loss = 0.0;
    for (int s = 0; s < n; ++s) {
        if (labels[s] >= classes)
            throw DataError("softmax_xent: label " + std::to_string(labels[s]) +
                            " out of range [0," + std::to_string(classes) + ")");
        const T* l = logits.sample(s);
        T* p = r.probs.sample(s);
        double m = l[0];
        for (int c = 1; c < classes; ++c) m = std::max(m, static_cast<double>(l[c]));
        double z = 0.0;
        for (int c = 0; c < classes; ++c) {
            double e = std::exp(static_cast<double>(l[c]) - m);
            p[c] = static_cast<T>(e);
            z += e;
        }
        for (int c = 0; c < classes; ++c) p[c] = static_cast<T>(p[c] / z);
        loss -= static_cast<double>(l[labels[s]]) - m - std::log(z);
    }
    r.loss = loss / n;
    return r;
}

template <class T>
Tensor4T<T> softmax_xent_backward(const Tensor4T<T>& probs, std::span<const std::uint8_t> labels) {
    const int n = probs.dims.n, classes = probs.dims.c;
    Tensor4T<T> g(probs.dims);
    const T inv_n = T(1) / static_cast<T>(n);
    for (int s = 0; s < n; ++s) {
        const T* p = probs.sample(s);
        T* gs = g.sample(s);
        for (int c = 0; c < classes; ++c)
            gs[c] = (p[c] - (c == labels[s] ? T(1) : T(0))) * inv_n;
    }
    return g;
}

} // namespace prcnn
