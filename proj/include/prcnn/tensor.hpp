#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "prcnn/errors.hpp"
#include "prcnn/rng.hpp"

namespace prcnn {

static_assert(std::endian::native == std::endian::little,
              "tensor file format is little-endian; big-endian hosts are unsupported");

struct Dims4 {
    int n = 0, c = 0, h = 0, w = 0;

    bool operator==(const Dims4&) const = default;

    // Flat length with overflow check.
    std::size_t flat() const {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw ConfigError("tensor dims must all be >= 1, got (" + to_string() + ")");
        std::size_t len = static_cast<std::size_t>(n);
        for (std::size_t d : {static_cast<std::size_t>(c), static_cast<std::size_t>(h),
                              static_cast<std::size_t>(w)}) {
            if (len > std::numeric_limits<std::size_t>::max() / d)
                throw ConfigError("tensor flat length overflows for dims (" + to_string() + ")");
            len *= d;
        }
        return len;
    }

    std::string to_string() const {
        return std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w);
    }
};

// Dense rank-4 array in row-major (n, c, h, w) order. double in every
// correctness path, float available for training runs.
template <class T>
class Tensor4T {
public:
    Dims4 dims{};
    std::vector<T> data;

    Tensor4T() = default;
    explicit Tensor4T(Dims4 d) : dims(d), data(d.flat(), T(0)) {}

    static Tensor4T zeros(Dims4 d) { return Tensor4T(d); }

    // Adopts externally produced values; rejects non-finite elements.
    static Tensor4T from_data(Dims4 d, std::vector<T> values) {
        if (values.size() != d.flat())
            throw ConfigError("tensor data length " + std::to_string(values.size()) +
                              " does not match dims (" + d.to_string() + ")");
        for (T v : values)
            if (!std::isfinite(static_cast<double>(v)))
                throw DataError("non-finite element rejected at tensor construction");
        Tensor4T t;
        t.dims = d;
        t.data = std::move(values);
        return t;
    }

    std::size_t size() const { return data.size(); }

    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * dims.c + c) * dims.h + h) * dims.w + w;
    }

    T& at(int n, int c, int h, int w) { return data[index(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data[index(n, c, h, w)]; }

    T* plane(int n, int c) { return data.data() + index(n, c, 0, 0); }
    const T* plane(int n, int c) const { return data.data() + index(n, c, 0, 0); }

    T* sample(int n) { return data.data() + index(n, 0, 0, 0); }
    const T* sample(int n) const { return data.data() + index(n, 0, 0, 0); }

    bool same_shape(const Tensor4T& o) const { return dims == o.dims; }

    template <class U>
    Tensor4T<U> cast() const {
        Tensor4T<U> out{};
        out.dims = dims;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor4 = Tensor4T<double>;
using Tensor4f = Tensor4T<float>;

template <class T>
Tensor4T<T> zeros(Dims4 d) {
    return Tensor4T<T>::zeros(d);
}

// I.i.d. N(mean, stddev^2) samples, reproducible from the rng seed.
template <class T>
Tensor4T<T> gaussian_init(Dims4 d, double mean, double stddev, Rng& rng) {
    if (stddev < 0) throw ConfigError("gaussian_init: stddev must be >= 0");
    Tensor4T<T> t(d);
    for (auto& v : t.data) v = static_cast<T>(mean + stddev * rng.next_normal());
    return t;
}

namespace detail {
template <class T>
void check_region(const Tensor4T<T>& t, int n, int r0, int r1, int c0, int c1) {
    if (n < 0 || n >= t.dims.n || r0 < 0 || c0 < 0 || r1 > t.dims.h || c1 > t.dims.w ||
        r0 >= r1 || c0 >= c1)
        throw ConfigError("reduce region [" + std::to_string(r0) + "," + std::to_string(r1) +
                          ")x[" + std::to_string(c0) + "," + std::to_string(c1) +
                          ") out of bounds for sample " + std::to_string(n) + " of (" +
                          t.dims.to_string() + ")");
}
} // namespace detail

// Sum of |x| over the spatial window [r0,r1)x[c0,c1) of sample n, across all
// channels. Accumulates in double regardless of element type.
template <class T>
double l1_reduce(const Tensor4T<T>& t, int n, int r0, int r1, int c0, int c1) {
    detail::check_region(t, n, r0, r1, c0, c1);
    double acc = 0.0;
    for (int c = 0; c < t.dims.c; ++c) {
        const T* p = t.plane(n, c);
        for (int r = r0; r < r1; ++r)
            for (int col = c0; col < c1; ++col)
                acc += std::abs(static_cast<double>(p[static_cast<std::size_t>(r) * t.dims.w + col]));
    }
    return acc;
}

// Sum of x^2 over the same region.
template <class T>
double l2sq_reduce(const Tensor4T<T>& t, int n, int r0, int r1, int c0, int c1) {
    detail::check_region(t, n, r0, r1, c0, c1);
    double acc = 0.0;
    for (int c = 0; c < t.dims.c; ++c) {
        const T* p = t.plane(n, c);
        for (int r = r0; r < r1; ++r)
            for (int col = c0; col < c1; ++col) {
                double v = static_cast<double>(p[static_cast<std::size_t>(r) * t.dims.w + col]);
                acc += v * v;
            }
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Tensor dump format: magic "PRT4", 4 x u32 dims (n,c,h,w), 1 x u8 dtype tag
// (0 = f64, 1 = f32), then raw elements in layout order, all little-endian.

namespace detail {
template <class T>
constexpr std::uint8_t dtype_tag() {
    static_assert(std::is_same_v<T, double> || std::is_same_v<T, float>);
    return std::is_same_v<T, double> ? 0 : 1;
}
} // namespace detail

template <class T>
void save_tensor(const std::string& path, const Tensor4T<T>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    f.write("PRT4", 4);
    std::uint32_t d[4] = {static_cast<std::uint32_t>(t.dims.n), static_cast<std::uint32_t>(t.dims.c),
                          static_cast<std::uint32_t>(t.dims.h), static_cast<std::uint32_t>(t.dims.w)};
    f.write(reinterpret_cast<const char*>(d), sizeof d);
    std::uint8_t tag = detail::dtype_tag<T>();
    f.write(reinterpret_cast<const char*>(&tag), 1);
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!f) throw DataError("short write: " + path);
}

inline int tensor_file_dtype(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    char magic[4];
    std::uint32_t d[4];
    std::uint8_t tag;
    if (!f.read(magic, 4) || std::memcmp(magic, "PRT4", 4) != 0)
        throw DataError("bad tensor magic in " + path);
    if (!f.read(reinterpret_cast<char*>(d), sizeof d) || !f.read(reinterpret_cast<char*>(&tag), 1))
        throw DataError("truncated tensor header in " + path);
    return tag;
}

// Loads a dump whose dtype tag matches T exactly.
template <class T>
Tensor4T<T> load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "PRT4", 4) != 0)
        throw DataError("bad tensor magic in " + path);
    std::uint32_t d[4];
    std::uint8_t tag;
    if (!f.read(reinterpret_cast<char*>(d), sizeof d) || !f.read(reinterpret_cast<char*>(&tag), 1))
        throw DataError("truncated tensor header in " + path);
    if (tag != detail::dtype_tag<T>())
        throw DataError("tensor dtype tag " + std::to_string(tag) + " does not match requested type in " + path);
    Dims4 dims{static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]),
               static_cast<int>(d[3])};
    std::vector<T> values(dims.flat());
    if (!f.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(T))))
        throw DataError("truncated tensor payload in " + path);
    return Tensor4T<T>::from_data(dims, std::move(values));
}

// Loads either dtype and widens/narrows to T.
template <class T>
Tensor4T<T> load_tensor_cast(const std::string& path) {
    int tag = tensor_file_dtype(path);
    if (tag == detail::dtype_tag<T>()) return load_tensor<T>(path);
    if (tag == 0) return load_tensor<double>(path).template cast<T>();
    return load_tensor<float>(path).template cast<T>();
}

// Label file: u32 count header then raw u8 labels.
inline void save_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    std::uint32_t count = static_cast<std::uint32_t>(labels.size());
    f.write(reinterpret_cast<const char*>(&count), sizeof count);
    f.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
    if (!f) throw DataError("short write: " + path);
}

inline std::vector<std::uint8_t> load_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::uint32_t count = 0;
    if (!f.read(reinterpret_cast<char*>(&count), sizeof count))
        throw DataError("truncated label header in " + path);
    std::vector<std::uint8_t> labels(count);
    if (count && !f.read(reinterpret_cast<char*>(labels.data()), count))
        throw DataError("truncated label payload in " + path);
    return labels;
}

} // namespace prcnn
