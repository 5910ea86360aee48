#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prcnn/parallel.hpp"
#include "prcnn/tensor.hpp"

namespace prcnn {

enum class EnergyNorm { l1, l2 };
enum class RemainderPolicy { strict, fixed_margin };

// Hierarchical patch grid: level 1 tiles the map with grids[0], each deeper
// level tiles the patches of the level above. When a dimension does not
// divide evenly, fixed_margin keeps equal floor-sized patches and freezes the
// trailing rows/columns in place; strict raises an error instead.
struct PatchReorderConfig {
    std::vector<std::pair<int, int>> grids; // (grid_h, grid_w) per level
    EnergyNorm norm = EnergyNorm::l1;
    RemainderPolicy remainder = RemainderPolicy::fixed_margin;

    void validate() const {
        if (grids.empty()) throw ConfigError("patch reorder: at least one level required");
        bool nontrivial = false;
        for (auto [gh, gw] : grids) {
            if (gh < 1 || gw < 1) throw ConfigError("patch reorder: grid dims must be >= 1");
            if (gh > 1 || gw > 1) nontrivial = true;
        }
        if (!nontrivial)
            throw ConfigError("patch reorder: at least one grid dim must exceed 1");
    }
};

struct PatchHierarchy {
    int map_h = 0, map_w = 0;
    struct Level {
        int grid_h, grid_w;    // subdivision applied to each parent
        int patch_h, patch_w;  // resulting patch size (uniform across the level)
        int parents;           // number of patches at the level above (1 at level 1)
    };
    std::vector<Level> levels;

    int depth() const { return static_cast<int>(levels.size()); }
    int patches_per_parent(int level) const {
        return levels[level].grid_h * levels[level].grid_w;
    }
};

// Splits an h x w map into the configured hierarchy. Under the strict policy
// every level must divide its parent exactly; the error names the first level
// that does not.
inline PatchHierarchy partition(int h, int w, const PatchReorderConfig& config) {
    config.validate();
    if (h < 1 || w < 1) throw ConfigError("patch reorder: map dims must be >= 1");
    PatchHierarchy hier;
    hier.map_h = h;
    hier.map_w = w;
    int ph = h, pw = w, parents = 1;
    for (std::size_t l = 0; l < config.grids.size(); ++l) {
        auto [gh, gw] = config.grids[l];
        if (config.remainder == RemainderPolicy::strict && (ph % gh != 0 || pw % gw != 0))
            throw ConfigError("patch reorder: level " + std::to_string(l + 1) + " grid " +
                              std::to_string(gh) + "x" + std::to_string(gw) +
                              " does not divide parent dims " + std::to_string(ph) + "x" +
                              std::to_string(pw) + " under strict remainder policy");
        int child_h = ph / gh, child_w = pw / gw;
        if (child_h < 1 || child_w < 1)
            throw ConfigError("patch reorder: level " + std::to_string(l + 1) +
                              " patches would be empty (parent " + std::to_string(ph) + "x" +
                              std::to_string(pw) + ", grid " + std::to_string(gh) + "x" +
                              std::to_string(gw) + ")");
        hier.levels.push_back({gh, gw, child_h, child_w, parents});
        parents *= gh * gw;
        ph = child_h;
        pw = child_w;
    }
    return hier;
}

// Patch energies per level. Margin pixels are excluded from every energy:
// the entries of the deepest level reduce their full windows, and each
// shallower entry is the sum of its descendants, so frozen rows/columns never
// influence a ranking.
struct EnergyMap {
    struct Level {
        int parents, rows, cols;
        std::vector<double> e; // [(parent * rows + i) * cols + j]
        double at(int parent, int i, int j) const {
            return e[(static_cast<std::size_t>(parent) * rows + i) * cols + j];
        }
    };
    std::vector<Level> levels;
};

template <class T>
std::vector<EnergyMap> compute_energies(const Tensor4T<T>& x, const PatchHierarchy& hier,
                                        EnergyNorm norm) {
    if (x.dims.h != hier.map_h || x.dims.w != hier.map_w)
        throw ConfigError("compute_energies: hierarchy built for " + std::to_string(hier.map_h) +
                          "x" + std::to_string(hier.map_w) + ", tensor is " +
                          std::to_string(x.dims.h) + "x" + std::to_string(x.dims.w));
    const int L = hier.depth();
    std::vector<EnergyMap> maps(x.dims.n);
    parallel_for(0, x.dims.n, [&](std::int64_t s) {
        EnergyMap& m = maps[s];
        m.levels.resize(L);
        for (int l = 0; l < L; ++l) {
            const auto& lv = hier.levels[l];
            m.levels[l] = {lv.parents, lv.grid_h, lv.grid_w,
                           std::vector<double>(static_cast<std::size_t>(lv.parents) * lv.grid_h *
                                               lv.grid_w)};
        }
        // Deepest level: direct window reduction. Decode each patch's chain
        // of grid cells to find its window origin.
        {
            const auto& lv = hier.levels[L - 1];
            auto& dst = m.levels[L - 1].e;
            const int count = lv.parents * lv.grid_h * lv.grid_w;
            for (int q = 0; q < count; ++q) {
                int rem = q, r0 = 0, c0 = 0;
                for (int l = L - 1; l >= 0; --l) {
                    const auto& dl = hier.levels[l];
                    int cell = rem % (dl.grid_h * dl.grid_w);
                    rem /= dl.grid_h * dl.grid_w;
                    r0 += (cell / dl.grid_w) * dl.patch_h;
                    c0 += (cell % dl.grid_w) * dl.patch_w;
                }
                dst[q] = norm == EnergyNorm::l1
                             ? l1_reduce(x, static_cast<int>(s), r0, r0 + lv.patch_h, c0,
                                         c0 + lv.patch_w)
                             : l2sq_reduce(x, static_cast<int>(s), r0, r0 + lv.patch_h, c0,
                                           c0 + lv.patch_w);
            }
        }
        // Shallower levels: sum of child energies.
        for (int l = L - 2; l >= 0; --l) {
            const auto& child = m.levels[l + 1];
            auto& dst = m.levels[l].e;
            const int per_parent = child.rows * child.cols;
            for (std::size_t q = 0; q < dst.size(); ++q) {
                double acc = 0.0;
                const double* ce = child.e.data() + q * per_parent;
                for (int k = 0; k < per_parent; ++k) acc += ce[k];
                dst[q] = acc;
            }
        }
    });
    return maps;
}

// Descending stable sort: slot s (raster order) receives the patch with the
// s-th highest energy; ties keep their original raster order, so equal
// energies yield the identity assignment.
inline std::vector<int> rank_patches(std::span<const double> energies) {
    std::vector<int> order(energies.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return energies[a] > energies[b]; });
    return order;
}

// Per-sample pixel permutation over the h x w grid, stored target -> source.
// One permutation is shared by all channels of a sample.
struct PermutationRecord {
    int h = 0, w = 0;
    std::vector<std::vector<std::uint32_t>> pi; // per sample, length h*w

    bool is_identity(int sample) const {
        const auto& p = pi[sample];
        for (std::size_t t = 0; t < p.size(); ++t)
            if (p[t] != t) return false;
        return true;
    }
};

namespace pr_detail {

// Recursively assigns the source patch at src origin to the slot at dst
// origin, reordering children by energy and copying margins rigidly.
inline void build_permutation(const PatchHierarchy& hier, const EnergyMap& em, int level,
                              int parent, int src_r, int src_c, int dst_r, int dst_c,
                              int parent_h, int parent_w, int map_w,
                              std::vector<std::uint32_t>& perm) {
    if (level == hier.depth()) {
        for (int r = 0; r < parent_h; ++r)
            for (int c = 0; c < parent_w; ++c)
                perm[static_cast<std::size_t>(dst_r + r) * map_w + (dst_c + c)] =
                    static_cast<std::uint32_t>((src_r + r) * map_w + (src_c + c));
        return;
    }
    const auto& lv = hier.levels[level];
    const auto& el = em.levels[level];
    const int gh = lv.grid_h, gw = lv.grid_w, ph = lv.patch_h, pw = lv.patch_w;
    const double* energies = el.e.data() + static_cast<std::size_t>(parent) * gh * gw;
    std::vector<int> order = rank_patches({energies, static_cast<std::size_t>(gh * gw)});
    for (int slot = 0; slot < gh * gw; ++slot) {
        const int src_cell = order[slot];
        build_permutation(hier, em, level + 1, parent * gh * gw + src_cell,
                          src_r + (src_cell / gw) * ph, src_c + (src_cell % gw) * pw,
                          dst_r + (slot / gw) * ph, dst_c + (slot % gw) * pw, ph, pw, map_w,
                          perm);
    }
    // Trailing rows/columns not covered by the grid stay in place relative to
    // this parent.
    const int cov_h = gh * ph, cov_w = gw * pw;
    for (int r = 0; r < parent_h; ++r)
        for (int c = 0; c < parent_w; ++c) {
            if (r < cov_h && c < cov_w) continue;
            perm[static_cast<std::size_t>(dst_r + r) * map_w + (dst_c + c)] =
                static_cast<std::uint32_t>((src_r + r) * map_w + (src_c + c));
        }
}

} // namespace pr_detail

template <class T>
struct PrResult {
    Tensor4T<T> z;
    PermutationRecord record;
};

// Applies the record: z[t] = x[pi[t]] for every channel of every sample.
template <class T>
Tensor4T<T> apply_permutation(const Tensor4T<T>& x, const PermutationRecord& record) {
    if (record.h != x.dims.h || record.w != x.dims.w ||
        static_cast<int>(record.pi.size()) != x.dims.n)
        throw ConfigError("apply_permutation: record does not match tensor dims");
    Tensor4T<T> z(x.dims);
    const std::size_t hw = static_cast<std::size_t>(x.dims.h) * x.dims.w;
    parallel_for(0, static_cast<std::int64_t>(x.dims.n) * x.dims.c, [&](std::int64_t t) {
        const int s = static_cast<int>(t / x.dims.c), c = static_cast<int>(t % x.dims.c);
        const auto& pi = record.pi[s];
        const T* src = x.plane(s, c);
        T* dst = z.plane(s, c);
        for (std::size_t i = 0; i < hw; ++i) dst[i] = src[pi[i]];
    });
    return z;
}

template <class T>
PermutationRecord make_permutation_record(const Tensor4T<T>& x, const PatchHierarchy& hier,
                                          EnergyNorm norm) {
    std::vector<EnergyMap> energies = compute_energies(x, hier, norm);
    PermutationRecord record;
    record.h = x.dims.h;
    record.w = x.dims.w;
    record.pi.resize(x.dims.n);
    parallel_for(0, x.dims.n, [&](std::int64_t s) {
        auto& perm = record.pi[s];
        perm.assign(static_cast<std::size_t>(x.dims.h) * x.dims.w, 0);
        pr_detail::build_permutation(hier, energies[s], 0, 0, 0, 0, 0, 0, x.dims.h, x.dims.w,
                                     x.dims.w, perm);
    });
    return record;
}

template <class T>
PrResult<T> pr_forward(const Tensor4T<T>& x, const PatchReorderConfig& config) {
    PatchHierarchy hier = partition(x.dims.h, x.dims.w, config);
    PermutationRecord record = make_permutation_record(x, hier, config.norm);
    return {apply_permutation(x, record), std::move(record)};
}

// Exact transpose of the forward permutation; the ranking itself is treated
// as piecewise constant, so no gradient flows through the energies.
template <class T>
Tensor4T<T> pr_backward(const Tensor4T<T>& grad_z, const PermutationRecord& record) {
    if (record.h != grad_z.dims.h || record.w != grad_z.dims.w ||
        static_cast<int>(record.pi.size()) != grad_z.dims.n)
        throw ConfigError("pr_backward: record does not match grad dims");
    Tensor4T<T> gx(grad_z.dims);
    const std::size_t hw = static_cast<std::size_t>(grad_z.dims.h) * grad_z.dims.w;
    parallel_for(0, static_cast<std::int64_t>(grad_z.dims.n) * grad_z.dims.c,
                 [&](std::int64_t t) {
                     const int s = static_cast<int>(t / grad_z.dims.c);
                     const int c = static_cast<int>(t % grad_z.dims.c);
                     const auto& pi = record.pi[s];
                     const T* src = grad_z.plane(s, c);
                     T* dst = gx.plane(s, c);
                     for (std::size_t i = 0; i < hw; ++i) dst[pi[i]] = src[i];
                 });
    return gx;
}

// Debug dump: u32 n, h, w then each sample's target->source array.
inline void save_permutation_record(const std::string& path, const PermutationRecord& r) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    std::uint32_t hdr[3] = {static_cast<std::uint32_t>(r.pi.size()),
                            static_cast<std::uint32_t>(r.h), static_cast<std::uint32_t>(r.w)};
    f.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    for (const auto& p : r.pi)
        f.write(reinterpret_cast<const char*>(p.data()),
                static_cast<std::streamsize>(p.size() * sizeof(std::uint32_t)));
    if (!f) throw DataError("short write: " + path);
}

inline PermutationRecord load_permutation_record(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    std::uint32_t hdr[3];
    if (!f.read(reinterpret_cast<char*>(hdr), sizeof hdr))
        throw DataError("truncated permutation record in " + path);
    PermutationRecord r;
    r.h = static_cast<int>(hdr[1]);
    r.w = static_cast<int>(hdr[2]);
    r.pi.resize(hdr[0]);
    const std::size_t hw = static_cast<std::size_t>(r.h) * r.w;
    for (auto& p : r.pi) {
        p.resize(hw);
        if (!f.read(reinterpret_cast<char*>(p.data()),
                    static_cast<std::streamsize>(hw * sizeof(std::uint32_t))))
            throw DataError("truncated permutation record in " + path);
    }
    return r;
}

} // namespace prcnn
