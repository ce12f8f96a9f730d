#pragma once

// Explicit sparse-matrix form of pull and push. Meant for small grids, where
// it serves as a reference for the streaming kernels in gridops.hpp.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "splat/errors.hpp"
#include "splat/gridops.hpp"

namespace splat {

enum class OperatorMode { pull, push };

struct SparseEntry {
    std::int64_t row;
    std::int64_t col;
    double weight;

    friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

/// Rows index voxels of `row_grid`, columns voxels of `col_grid`. Entries are
/// sorted by (row, col) with no duplicates.
struct SparseOperator {
    GridSpec row_grid;
    GridSpec col_grid;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<SparseEntry> entries;

    SparseOperator transpose() const {
        SparseOperator t{col_grid, row_grid, cols, rows, {}};
        t.entries.reserve(entries.size());
        for (const auto& e : entries) t.entries.push_back({e.col, e.row, e.weight});
        t.assemble();
        return t;
    }

    /// Sorts entries and sums duplicate (row, col) pairs.
    void assemble() {
        std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
            return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
        std::vector<SparseEntry> merged;
        merged.reserve(entries.size());
        for (const auto& e : entries) {
            if (!merged.empty() && merged.back().row == e.row && merged.back().col == e.col) {
                merged.back().weight += e.weight;
            } else {
                merged.push_back(e);
            }
        }
        entries = std::move(merged);
    }

    std::vector<double> row_sums() const {
        std::vector<double> s(static_cast<std::size_t>(rows), 0.0);
        for (const auto& e : entries) s[static_cast<std::size_t>(e.row)] += e.weight;
        return s;
    }

    Matrix to_dense() const {
        Matrix m = Matrix::Zero(rows, cols);
        for (const auto& e : entries) m(e.row, e.col) = e.weight;
        return m;
    }
};

inline constexpr std::int64_t kMaxOperatorVoxels = 100000;

namespace detail {

template <int D>
void collect_entries(const GridSpec& sampled, const GridSpec& sampling, bool transpose,
                     std::vector<SparseEntry>& out) {
    const auto map = make_voxel_map<D>(sampled, sampling);
    const auto from = make_shape<D>(sampling);
    const auto to = make_shape<D>(sampled);
    std::int64_t idx[D] = {};
    SamplePoint<D> p;
    Stencil<D> st;
    for (std::int64_t n = 0; n < from.count; ++n, advance<D>(idx, from)) {
        map_point<D>(map, idx, p);
        make_stencil<D>(p, to, st);
        for (int s = 0; s < st.size; ++s) {
            if (transpose) {
                out.push_back({st.index[s], n, st.weight[s]});
            } else {
                out.push_back({n, st.index[s], st.weight[s]});
            }
        }
    }
}

} // namespace detail

/// Matrix of pull(src -> dst) or push(src -> dst); either way it maps a
/// volume on `src` to a volume on `dst`.
inline SparseOperator as_matrix(const GridSpec& src, const GridSpec& dst, OperatorMode mode) {
    if (src.dim() != dst.dim()) {
        throw GeometryError(detail::dim_message("as_matrix", src.dim(), dst.dim()));
    }
    if (src.voxel_count() > kMaxOperatorVoxels || dst.voxel_count() > kMaxOperatorVoxels) {
        throw GeometryError("as_matrix: grids too large for an explicit operator (limit " +
                            std::to_string(kMaxOperatorVoxels) + " voxels)");
    }
    SparseOperator op{dst, src, dst.voxel_count(), src.voxel_count(), {}};
    // Pull visits dst voxels and samples src; push visits src voxels and
    // scatters into dst, recording the transposed entry.
    const bool is_push = mode == OperatorMode::push;
    const GridSpec& sampled = is_push ? dst : src;
    const GridSpec& sampling = is_push ? src : dst;
    switch (src.dim()) {
    case 1: detail::collect_entries<1>(sampled, sampling, is_push, op.entries); break;
    case 2: detail::collect_entries<2>(sampled, sampling, is_push, op.entries); break;
    default: detail::collect_entries<3>(sampled, sampling, is_push, op.entries); break;
    }
    op.assemble();
    return op;
}

/// Per-channel sparse matrix-vector product.
template <typename T>
BasicVolume<T> apply_matrix(const SparseOperator& op, const BasicVolume<T>& f) {
    if (op.cols != f.voxel_count()) {
        throw GeometryError("apply_matrix: operator has " + std::to_string(op.cols) +
                            " columns but volume has " + std::to_string(f.voxel_count()) +
                            " voxels");
    }
    BasicVolume<T> out(op.row_grid, f.channels());
    std::vector<double> acc(static_cast<std::size_t>(op.rows));
    for (int c = 0; c < f.channels(); ++c) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const auto in = f.channel(c);
        for (const auto& e : op.entries) {
            acc[static_cast<std::size_t>(e.row)] +=
                e.weight * static_cast<double>(in[static_cast<std::size_t>(e.col)]);
        }
        auto dst = out.channel(c);
        std::copy(acc.begin(), acc.end(), dst.begin());
    }
    return out;
}

} // namespace splat
