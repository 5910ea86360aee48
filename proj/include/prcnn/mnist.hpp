#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "prcnn/parallel.hpp"
#include "prcnn/rng.hpp"
#include "prcnn/tensor.hpp"

namespace prcnn {

// Images in [0,1] (raw byte / 255), one label per image.
struct MnistSet {
    Tensor4f images; // (n, 1, h, w)
    std::vector<std::uint8_t> labels;
};

namespace idx_detail {

inline std::uint32_t read_be32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated IDX header in " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

inline void write_be32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace idx_detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline MnistSet parse_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw DataError("cannot open IDX images file: " + images_path);
    const std::uint32_t magic_i = idx_detail::read_be32(fi, images_path);
    if (magic_i != kIdxImagesMagic)
        throw DataError("bad IDX magic in " + images_path + ": expected 0x00000803, got 0x" +
                        [&] { char b[16]; std::snprintf(b, sizeof b, "%08x", magic_i); return std::string(b); }());
    const std::uint32_t n = idx_detail::read_be32(fi, images_path);
    const std::uint32_t rows = idx_detail::read_be32(fi, images_path);
    const std::uint32_t cols = idx_detail::read_be32(fi, images_path);
    std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * rows * cols);
    if (!fi.read(reinterpret_cast<char*>(pixels.data()),
                 static_cast<std::streamsize>(pixels.size())))
        throw DataError("truncated IDX image payload in " + images_path);

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw DataError("cannot open IDX labels file: " + labels_path);
    const std::uint32_t magic_l = idx_detail::read_be32(fl, labels_path);
    if (magic_l != kIdxLabelsMagic)
        throw DataError("bad IDX magic in " + labels_path + ": expected 0x00000801, got 0x" +
                        [&] { char b[16]; std::snprintf(b, sizeof b, "%08x", magic_l); return std::string(b); }());
    const std::uint32_t nl = idx_detail::read_be32(fl, labels_path);
    if (nl != n)
        throw DataError("IDX count mismatch: " + std::to_string(n) + " images in " + images_path +
                        " vs " + std::to_string(nl) + " labels in " + labels_path);
    std::vector<std::uint8_t> labels(nl);
    if (!fl.read(reinterpret_cast<char*>(labels.data()), nl))
        throw DataError("truncated IDX label payload in " + labels_path);

    MnistSet set;
    set.images = Tensor4f({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
    for (std::size_t i = 0; i < pixels.size(); ++i)
        set.images.data[i] = static_cast<float>(pixels[i]) / 255.0f;
    set.labels = std::move(labels);
    return set;
}

// Re-serializer; parse_idx(write_idx(set)) reproduces the original bytes.
inline void write_idx(const std::string& images_path, const std::string& labels_path,
                      const MnistSet& set) {
    std::ofstream fi(images_path, std::ios::binary);
    if (!fi) throw DataError("cannot open for write: " + images_path);
    idx_detail::write_be32(fi, kIdxImagesMagic);
    idx_detail::write_be32(fi, static_cast<std::uint32_t>(set.images.dims.n));
    idx_detail::write_be32(fi, static_cast<std::uint32_t>(set.images.dims.h));
    idx_detail::write_be32(fi, static_cast<std::uint32_t>(set.images.dims.w));
    for (float v : set.images.data) {
        const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0f));
        fi.write(reinterpret_cast<const char*>(&b), 1);
    }
    std::ofstream fl(labels_path, std::ios::binary);
    if (!fl) throw DataError("cannot open for write: " + labels_path);
    idx_detail::write_be32(fl, kIdxLabelsMagic);
    idx_detail::write_be32(fl, static_cast<std::uint32_t>(set.labels.size()));
    fl.write(reinterpret_cast<const char*>(set.labels.data()),
             static_cast<std::streamsize>(set.labels.size()));
}

// Rotation about the image center, inverse mapping with bilinear
// interpolation; points that fall outside sample as 0.
inline std::vector<float> rotate_plane(const float* img, int h, int w, double angle_deg) {
    const double rad = angle_deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    std::vector<float> out(static_cast<std::size_t>(h) * w, 0.0f);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double dy = r - cy, dx = c - cx;
            const double sy = cs * dy + sn * dx + cy;
            const double sx = -sn * dy + cs * dx + cx;
            const int r0 = static_cast<int>(std::floor(sy));
            const int c0 = static_cast<int>(std::floor(sx));
            const double fy = sy - r0, fx = sx - c0;
            double acc = 0.0;
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    const int rr = r0 + i, cc = c0 + j;
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                    const double wgt = (i ? fy : 1.0 - fy) * (j ? fx : 1.0 - fx);
                    acc += wgt * img[static_cast<std::size_t>(rr) * w + cc];
                }
            out[static_cast<std::size_t>(r) * w + c] = static_cast<float>(acc);
        }
    }
    return out;
}

// Copies the digit verbatim into a zero canvas at (off_r, off_c).
inline std::vector<float> translate_plane(const float* img, int h, int w, int canvas, int off_r,
                                          int off_c) {
    if (off_r < 0 || off_c < 0 || off_r > canvas - h || off_c > canvas - w)
        throw ConfigError("translate: offset (" + std::to_string(off_r) + "," +
                          std::to_string(off_c) + ") out of range for " + std::to_string(h) + "x" +
                          std::to_string(w) + " digit in " + std::to_string(canvas) + " canvas");
    std::vector<float> out(static_cast<std::size_t>(canvas) * canvas, 0.0f);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out[static_cast<std::size_t>(off_r + r) * canvas + off_c + c] =
                img[static_cast<std::size_t>(r) * w + c];
    return out;
}

struct TransformSpec {
    enum class Kind { rotation, translation };
    Kind kind = Kind::rotation;
    double rotation_range = 90.0; // degrees; angles drawn from U[-range, range]
    int canvas = 42;
};

struct DistortionLog {
    std::vector<double> angles;
    std::vector<std::pair<int, int>> offsets;
};

// One transformed image per source image. Per-image seeds are seed XOR index,
// so generation is order- and thread-count-independent.
inline MnistSet make_distorted_set(const MnistSet& src, const TransformSpec& spec,
                                   std::uint64_t seed, DistortionLog* log = nullptr) {
    const int n = src.images.dims.n, h = src.images.dims.h, w = src.images.dims.w;
    MnistSet out;
    out.labels = src.labels;
    if (spec.kind == TransformSpec::Kind::rotation) {
        out.images = Tensor4f({n, 1, h, w});
        if (log) log->angles.assign(n, 0.0);
        parallel_for(0, n, [&](std::int64_t i) {
            Rng rng(seed ^ static_cast<std::uint64_t>(i));
            const double angle = -spec.rotation_range + 2.0 * spec.rotation_range * rng.next_uniform();
            auto plane = rotate_plane(src.images.plane(static_cast<int>(i), 0), h, w, angle);
            std::copy(plane.begin(), plane.end(), out.images.plane(static_cast<int>(i), 0));
            if (log) log->angles[i] = angle;
        });
    } else {
        const int canvas = spec.canvas;
        if (canvas < h || canvas < w)
            throw ConfigError("translate: canvas " + std::to_string(canvas) +
                              " smaller than digit " + std::to_string(h) + "x" + std::to_string(w));
        out.images = Tensor4f({n, 1, canvas, canvas});
        if (log) log->offsets.assign(n, {0, 0});
        parallel_for(0, n, [&](std::int64_t i) {
            Rng rng(seed ^ static_cast<std::uint64_t>(i));
            const int off_r = static_cast<int>(rng.next_below(canvas - h + 1));
            const int off_c = static_cast<int>(rng.next_below(canvas - w + 1));
            auto plane = translate_plane(src.images.plane(static_cast<int>(i), 0), h, w, canvas,
                                         off_r, off_c);
            std::copy(plane.begin(), plane.end(), out.images.plane(static_cast<int>(i), 0));
            if (log) log->offsets[i] = {off_r, off_c};
        });
    }
    return out;
}

} // namespace prcnn
