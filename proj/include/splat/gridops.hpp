#pragma once

// Pull (resampling) and push (splatting) with multilinear weights.
// Pull evaluates the interpolant as nested per-axis lerps; push scatters
// with the product weights used by the explicit operators.
//
//   pull:  out[m] = sum_n f[n] w(phi(x_m), x_n)   phi = A_src^-1 A_dst
//   push:  out[m] = sum_n f[n] w(psi(x_n), x_m)   psi = A_dst^-1 A_src
//
// push(src -> dst) is the exact transpose of pull(dst -> src). Samples and
// scattered mass outside a grid are zero / dropped.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <thread>
#include <type_traits>
#include <vector>

#include "splat/errors.hpp"
#include "splat/geometry.hpp"
#include "splat/volume.hpp"

namespace splat {

/// Threading policy for the kernels. With `reproducible` set the result is
/// bitwise identical to the single-threaded result for any thread count.
/// Clearing it allows atomic scatter in push, whose summation order (and so
/// the low bits of the result) depends on scheduling.
struct Execution {
    unsigned threads = 1;
    bool reproducible = true;
};

/// Voxel coordinates in `sampled` of the voxels of `sampling`:
/// A_sampled^-1 A_sampling. Equal affines give the exact identity.
inline AffineMap voxel_mapping(const GridSpec& sampled, const GridSpec& sampling) {
    if (sampled.dim() != sampling.dim()) {
        throw GeometryError(detail::dim_message("voxel_mapping", sampled.dim(), sampling.dim()));
    }
    if (sampled.affine() == sampling.affine()) return AffineMap::identity(sampled.dim());
    return compose(invert(sampled.affine()), sampling.affine());
}

/// Deformation field: for every voxel of `dst` (linear order, first axis
/// fastest) its D coordinates in the voxel space of `src`.
struct DeformationField {
    GridSpec grid;
    AffineMap mapping;
    std::vector<double> coords;  // voxel_count x D, interleaved
};

namespace detail {

// Maps voxels of the sampling grid into voxel coordinates of the sampled
// grid. When both linear parts are diagonal the axes are separable and the
// weights are formed in world units with a single rounding per weight, so
// e.g. a 2.5 mm -> 1 mm mapping yields the decimal weights 0.2/0.8 exactly.
template <int D> struct VoxelMap {
    bool separable = false;
    bool identity = false;
    double lin[D][D];
    double off[D];
    // separable: d = (sampling_scale * x + sampling_offset) - sampled_offset,
    // p = d / sampled_scale
    double sampling_scale[D];
    double sampling_offset[D];
    double sampled_scale[D];
    double sampled_offset[D];
};

inline bool is_diagonal(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (i != j && m(i, j) != 0.0) return false;
        }
    }
    return true;
}

template <int D> VoxelMap<D> make_voxel_map(const GridSpec& sampled, const GridSpec& sampling) {
    VoxelMap<D> m{};
    const AffineMap mapping = voxel_mapping(sampled, sampling);
    m.identity = mapping.is_identity();
    const Matrix& mat = mapping.matrix();
    for (int i = 0; i < D; ++i) {
        for (int j = 0; j < D; ++j) m.lin[i][j] = mat(i, j);
        m.off[i] = mat(i, D);
    }
    const Matrix& a = sampled.affine().matrix();
    const Matrix& b = sampling.affine().matrix();
    m.separable = !m.identity && is_diagonal(a.topLeftCorner(D, D)) && is_diagonal(b.topLeftCorner(D, D));
    for (int i = 0; i < D; ++i) {
        m.sampled_scale[i] = a(i, i);
        m.sampled_offset[i] = a(i, D);
        m.sampling_scale[i] = b(i, i);
        m.sampling_offset[i] = b(i, D);
    }
    return m;
}

/// Sample position of one voxel: floor per axis plus the two tent weights.
template <int D> struct SamplePoint {
    double p[D] = {};
    std::int64_t base[D] = {};
    double lower[D] = {};  // weight of base
    double upper[D] = {};  // weight of base + 1
    bool finite = true;
};

template <int D>
inline void map_point(const VoxelMap<D>& m, const std::int64_t (&idx)[D], SamplePoint<D>& s) {
    s.finite = true;
    for (int i = 0; i < D; ++i) {
        if (m.separable) {
            const double d = (m.sampling_scale[i] * static_cast<double>(idx[i]) + m.sampling_offset[i]) -
                             m.sampled_offset[i];
            const double a = m.sampled_scale[i];
            s.p[i] = d / a;
            if (!(std::abs(s.p[i]) < 1e15)) {
                s.finite = false;
                continue;
            }
            double fl = std::floor(s.p[i]);
            double up = (d - fl * a) / a;
            if (up < 0.0) {
                fl -= 1.0;
                up = (d - fl * a) / a;
            } else if (up >= 1.0) {
                fl += 1.0;
                up = (d - fl * a) / a;
            }
            s.base[i] = static_cast<std::int64_t>(fl);
            s.upper[i] = up;
            s.lower[i] = ((fl + 1.0) * a - d) / a;
        } else {
            double v = m.off[i];
            for (int j = 0; j < D; ++j) v += m.lin[i][j] * static_cast<double>(idx[j]);
            s.p[i] = v;
            if (!(std::abs(v) < 1e15)) {
                s.finite = false;
                continue;
            }
            const double fl = std::floor(v);
            s.base[i] = static_cast<std::int64_t>(fl);
            s.upper[i] = v - fl;
            s.lower[i] = 1.0 - s.upper[i];
        }
    }
}

template <int D> struct Shape {
    std::int64_t dims[D];
    std::int64_t strides[D];
    std::int64_t count;
};

template <int D> Shape<D> make_shape(const GridSpec& g) {
    Shape<D> s{};
    std::int64_t stride = 1;
    for (int k = 0; k < D; ++k) {
        s.dims[k] = g.dims(k);
        s.strides[k] = stride;
        stride *= s.dims[k];
    }
    s.count = stride;
    return s;
}

template <int D> inline void unravel(std::int64_t linear, const Shape<D>& s, std::int64_t (&idx)[D]) {
    for (int k = 0; k < D; ++k) {
        idx[k] = linear % s.dims[k];
        linear /= s.dims[k];
    }
}

template <int D> inline void advance(std::int64_t (&idx)[D], const Shape<D>& s) {
    for (int k = 0; k < D; ++k) {
        if (++idx[k] < s.dims[k]) return;
        idx[k] = 0;
    }
}

/// In-bounds neighbours with non-zero multilinear weight, in ascending
/// linear-index order.
template <int D> struct Stencil {
    std::int64_t index[1 << D];
    double weight[1 << D];
    int size = 0;
};

template <int D> inline bool reaches(const SamplePoint<D>& sp, const Shape<D>& s) {
    if (!sp.finite) return false;
    for (int k = 0; k < D; ++k) {
        if (sp.base[k] < -1 || sp.base[k] >= s.dims[k]) return false;
    }
    return true;
}

template <int D>
inline void make_stencil(const SamplePoint<D>& sp, const Shape<D>& s, Stencil<D>& out) {
    out.size = 0;
    if (!reaches<D>(sp, s)) return;
    for (int corner = 0; corner < (1 << D); ++corner) {
        std::int64_t index = 0;
        double w = 1.0;
        bool inside = true;
        for (int k = 0; k < D; ++k) {
            const int bit = (corner >> k) & 1;
            const std::int64_t i = sp.base[k] + bit;
            if (i < 0 || i >= s.dims[k]) {
                inside = false;
                break;
            }
            index += i * s.strides[k];
            w *= bit ? sp.upper[k] : sp.lower[k];
        }
        if (!inside || w == 0.0) continue;
        out.index[out.size] = index;
        out.weight[out.size] = w;
        ++out.size;
    }
}

inline unsigned effective_threads(unsigned requested, std::int64_t work) {
    if (requested == 0) requested = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::clamp<std::int64_t>(work, 1, requested));
}

template <typename F> void run_workers(unsigned workers, F&& body) {
    if (workers <= 1) {
        body(0u);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back([&body, w] { body(w); });
    body(0u);
    for (auto& t : pool) t.join();
}

inline std::int64_t chunk_begin(std::int64_t total, unsigned workers, unsigned w) {
    return total * static_cast<std::int64_t>(w) / static_cast<std::int64_t>(workers);
}

template <int D, typename T>
void pull_kernel(const BasicVolume<T>& f, const GridSpec& target, BasicVolume<T>& out,
                 const Execution& exec) {
    const auto map = make_voxel_map<D>(f.grid(), target);
    const auto src = make_shape<D>(f.grid());
    const auto dst = make_shape<D>(target);
    const int channels = f.channels();
    const auto in = f.data();
    auto result = out.data();

    const unsigned workers = effective_threads(exec.threads, dst.count);
    run_workers(workers, [&](unsigned w) {
        const std::int64_t begin = chunk_begin(dst.count, workers, w);
        const std::int64_t end = chunk_begin(dst.count, workers, w + 1);
        std::int64_t idx[D];
        unravel<D>(begin, dst, idx);
        SamplePoint<D> p;
        std::int64_t corner_index[1 << D];
        bool corner_inside[1 << D];
        double vals[1 << D];
        for (std::int64_t m = begin; m < end; ++m, advance<D>(idx, dst)) {
            map_point<D>(map, idx, p);
            if (!reaches<D>(p, src)) {
                for (int c = 0; c < channels; ++c) {
                    result[static_cast<std::size_t>(c * dst.count + m)] = T{};
                }
                continue;
            }
            for (int corner = 0; corner < (1 << D); ++corner) {
                std::int64_t index = 0;
                bool inside = true;
                for (int k = 0; k < D; ++k) {
                    const std::int64_t i = p.base[k] + ((corner >> k) & 1);
                    inside = inside && i >= 0 && i < src.dims[k];
                    index += i * src.strides[k];
                }
                corner_index[corner] = index;
                corner_inside[corner] = inside;
            }
            for (int c = 0; c < channels; ++c) {
                const std::size_t in_off = static_cast<std::size_t>(c * src.count);
                for (int corner = 0; corner < (1 << D); ++corner) {
                    vals[corner] = corner_inside[corner]
                                       ? static_cast<double>(
                                             in[in_off + static_cast<std::size_t>(corner_index[corner])])
                                       : 0.0;
                }
                // Collapse one axis at a time: a + u (b - a).
                for (int k = 0, width = 1 << D; k < D; ++k, width /= 2) {
                    const double u = p.upper[k];
                    for (int j = 0; j < width / 2; ++j) {
                        vals[j] = vals[2 * j] + u * (vals[2 * j + 1] - vals[2 * j]);
                    }
                }
                result[static_cast<std::size_t>(c * dst.count + m)] = static_cast<T>(vals[0]);
            }
        }
    });
}

// Scatters f into `acc` (channels x dst voxels) and `count`. Only target
// voxels with linear index in [lo, hi) are written.
template <int D, typename T>
void push_range(const BasicVolume<T>& f, const VoxelMap<D>& map, const Shape<D>& src,
                const Shape<D>& dst, std::int64_t lo, std::int64_t hi, std::vector<double>& acc,
                std::vector<double>& count) {
    const int channels = f.channels();
    const auto in = f.data();
    std::int64_t idx[D] = {};
    SamplePoint<D> p;
    Stencil<D> st;
    const bool full = lo == 0 && hi == dst.count;
    for (std::int64_t n = 0; n < src.count; ++n, advance<D>(idx, src)) {
        map_point<D>(map, idx, p);
        make_stencil<D>(p, dst, st);
        for (int s = 0; s < st.size; ++s) {
            const std::int64_t m = st.index[s];
            if (!full && (m < lo || m >= hi)) continue;
            const double w = st.weight[s];
            for (int c = 0; c < channels; ++c) {
                acc[static_cast<std::size_t>(c * dst.count + m)] +=
                    w * static_cast<double>(in[static_cast<std::size_t>(c * src.count + n)]);
            }
            count[static_cast<std::size_t>(m)] += w;
        }
    }
}

template <int D, typename T>
void push_atomic(const BasicVolume<T>& f, const VoxelMap<D>& map, const Shape<D>& src,
                 const Shape<D>& dst, unsigned workers, std::vector<double>& acc,
                 std::vector<double>& count) {
    const int channels = f.channels();
    const auto in = f.data();
    run_workers(workers, [&](unsigned w) {
        const std::int64_t begin = chunk_begin(src.count, workers, w);
        const std::int64_t end = chunk_begin(src.count, workers, w + 1);
        std::int64_t idx[D];
        unravel<D>(begin, src, idx);
        SamplePoint<D> p;
        Stencil<D> st;
        for (std::int64_t n = begin; n < end; ++n, advance<D>(idx, src)) {
            map_point<D>(map, idx, p);
            make_stencil<D>(p, dst, st);
            for (int s = 0; s < st.size; ++s) {
                const std::int64_t m = st.index[s];
                const double wt = st.weight[s];
                for (int c = 0; c < channels; ++c) {
                    std::atomic_ref<double>(acc[static_cast<std::size_t>(c * dst.count + m)])
                        .fetch_add(wt * static_cast<double>(
                                            in[static_cast<std::size_t>(c * src.count + n)]));
                }
                std::atomic_ref<double>(count[static_cast<std::size_t>(m)]).fetch_add(wt);
            }
        }
    });
}

template <int D, typename T>
void push_kernel(const BasicVolume<T>& f, const GridSpec& target, std::vector<double>& acc,
                 std::vector<double>& count, const Execution& exec) {
    const auto map = make_voxel_map<D>(target, f.grid());
    const auto src = make_shape<D>(f.grid());
    const auto dst = make_shape<D>(target);

    if (!exec.reproducible) {
        push_atomic<D, T>(f, map, src, dst, effective_threads(exec.threads, src.count), acc, count);
        return;
    }
    // Each worker owns a slab of the slowest target axis and visits every
    // source voxel in linear order, so each target voxel accumulates its
    // contributions in exactly the sequential order.
    const std::int64_t slabs = dst.dims[D - 1];
    const std::int64_t slab_size = dst.strides[D - 1];
    const unsigned workers = effective_threads(exec.threads, slabs);
    run_workers(workers, [&](unsigned w) {
        const std::int64_t lo = chunk_begin(slabs, workers, w) * slab_size;
        const std::int64_t hi = chunk_begin(slabs, workers, w + 1) * slab_size;
        push_range<D, T>(f, map, src, dst, lo, hi, acc, count);
    });
}

template <typename T> void require_continuous(const BasicVolume<T>& f, const char* what) {
    if (f.is_labels()) {
        throw GeometryError(std::string(what) +
                            ": label volumes cannot be interpolated; resample one-hot maps");
    }
}

} // namespace detail

inline DeformationField affine_grid(const GridSpec& src, const GridSpec& dst) {
    const AffineMap mapping = voxel_mapping(src, dst);
    DeformationField field{dst, mapping, {}};
    const int d = dst.dim();
    field.coords.resize(static_cast<std::size_t>(dst.voxel_count() * d));
    auto fill = [&]<int D>() {
        const auto map = detail::make_voxel_map<D>(src, dst);
        const auto shape = detail::make_shape<D>(dst);
        std::int64_t idx[D] = {};
        detail::SamplePoint<D> p;
        for (std::int64_t m = 0; m < shape.count; ++m, detail::advance<D>(idx, shape)) {
            detail::map_point<D>(map, idx, p);
            for (int k = 0; k < D; ++k) field.coords[static_cast<std::size_t>(m * D + k)] = p.p[k];
        }
    };
    switch (d) {
    case 1: fill.template operator()<1>(); break;
    case 2: fill.template operator()<2>(); break;
    default: fill.template operator()<3>(); break;
    }
    return field;
}

/// Resamples `f` onto `target` (multilinear, zero outside).
template <typename T>
BasicVolume<T> pull(const BasicVolume<T>& f, const GridSpec& target, const Execution& exec = {}) {
    detail::require_continuous(f, "pull");
    if (f.grid().dim() != target.dim()) {
        throw GeometryError(detail::dim_message("pull", f.grid().dim(), target.dim()));
    }
    BasicVolume<T> out(target, f.channels());
    switch (target.dim()) {
    case 1: detail::pull_kernel<1, T>(f, target, out, exec); break;
    case 2: detail::pull_kernel<2, T>(f, target, out, exec); break;
    default: detail::pull_kernel<3, T>(f, target, out, exec); break;
    }
    return out;
}

template <typename T> struct BasicPushResult {
    BasicVolume<T> pushed;
    BasicVolume<T> count;  // push of an all-ones volume with the same geometry
};
using PushResult = BasicPushResult<double>;

/// Splats `f` onto `target`: the adjoint of pulling from `target` onto f's grid.
template <typename T>
BasicPushResult<T> push(const BasicVolume<T>& f, const GridSpec& target,
                        const Execution& exec = {}) {
    detail::require_continuous(f, "push");
    if (f.grid().dim() != target.dim()) {
        throw GeometryError(detail::dim_message("push", f.grid().dim(), target.dim()));
    }
    const auto n = static_cast<std::size_t>(target.voxel_count());
    std::vector<double> acc(n * static_cast<std::size_t>(f.channels()), 0.0);
    std::vector<double> count(n, 0.0);
    switch (target.dim()) {
    case 1: detail::push_kernel<1, T>(f, target, acc, count, exec); break;
    case 2: detail::push_kernel<2, T>(f, target, acc, count, exec); break;
    default: detail::push_kernel<3, T>(f, target, acc, count, exec); break;
    }
    if constexpr (std::is_same_v<T, double>) {
        return {BasicVolume<T>(target, f.channels(), std::move(acc)),
                BasicVolume<T>(target, 1, std::move(count))};
    } else {
        std::vector<T> a(acc.begin(), acc.end());
        std::vector<T> k(count.begin(), count.end());
        return {BasicVolume<T>(target, f.channels(), std::move(a)), BasicVolume<T>(target, 1, std::move(k))};
    }
}

/// Sensitivity of pull(., g.grid()) evaluated on `src`, i.e. the
/// back-propagated gradient of <pull(f), g> with respect to f.
template <typename T>
BasicVolume<T> pull_gradient(const BasicVolume<T>& g, const GridSpec& src,
                             const Execution& exec = {}) {
    return push(g, src, exec).pushed;
}

} // namespace splat
