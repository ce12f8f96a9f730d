#pragma once

// Voxel-to-world affine algebra and mean-space construction.
//
// A grid's affine maps zero-based integer voxel coordinates to world
// millimetres. Linear parts of a cohort of grids are averaged on GL(D)
// (Karcher iteration in the matrix-log tangent space), projected onto
// rotation x anisotropic scaling, and the resulting orientation is given
// a field of view that covers every input grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "splat/errors.hpp"

namespace splat {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

inline constexpr double kSingularDet = 1e-12;

inline std::string dim_message(const char* what, Eigen::Index a, Eigen::Index b) {
    return std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
           std::to_string(b) + ")";
}

inline void require_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols() || m.rows() == 0) {
        throw GeometryError(std::string(what) + ": matrix must be square and non-empty");
    }
}

} // namespace detail

/// Homogeneous (D+1)x(D+1) voxel-to-world matrix with D in {1,2,3}.
class AffineMap {
public:
    AffineMap() : AffineMap(Matrix::Identity(4, 4)) {}

    explicit AffineMap(Matrix matrix) : m_(std::move(matrix)) {
        detail::require_square(m_, "AffineMap");
        const auto n = m_.rows();
        if (n < 2 || n > 4) {
            throw GeometryError("AffineMap: dimensionality must be 1, 2 or 3");
        }
        for (Eigen::Index j = 0; j + 1 < n; ++j) {
            if (m_(n - 1, j) != 0.0) {
                throw GeometryError("AffineMap: last row must be [0,...,0,1]");
            }
        }
        if (m_(n - 1, n - 1) != 1.0) {
            throw GeometryError("AffineMap: last row must be [0,...,0,1]");
        }
        if (!m_.allFinite()) {
            throw GeometryError("AffineMap: non-finite entries");
        }
        if (std::abs(linear().determinant()) <= detail::kSingularDet) {
            throw GeometryError("AffineMap: singular linear part");
        }
    }

    static AffineMap identity(int dim) { return AffineMap(Matrix::Identity(dim + 1, dim + 1)); }

    static AffineMap from_parts(const Matrix& linear, const Vector& translation) {
        const auto d = linear.rows();
        if (linear.cols() != d || translation.size() != d) {
            throw GeometryError("AffineMap::from_parts: inconsistent sizes");
        }
        Matrix m = Matrix::Identity(d + 1, d + 1);
        m.topLeftCorner(d, d) = linear;
        m.topRightCorner(d, 1) = translation;
        return AffineMap(std::move(m));
    }

    int dim() const noexcept { return static_cast<int>(m_.rows()) - 1; }
    const Matrix& matrix() const noexcept { return m_; }
    Matrix linear() const { return m_.topLeftCorner(dim(), dim()); }
    Vector translation() const { return m_.topRightCorner(dim(), 1); }

    /// Maps a point given in voxel coordinates to world coordinates.
    Vector apply(const Vector& x) const { return linear() * x + translation(); }

    bool is_identity() const { return m_ == Matrix::Identity(m_.rows(), m_.cols()); }

    friend bool operator==(const AffineMap& a, const AffineMap& b) {
        return a.m_.rows() == b.m_.rows() && a.m_ == b.m_;
    }

private:
    Matrix m_;
};

/// Voxel counts plus orientation. Identifies a native space or a mean space.
class GridSpec {
public:
    GridSpec() : GridSpec({1, 1, 1}, AffineMap::identity(3)) {}

    GridSpec(std::vector<std::int64_t> dims, AffineMap affine)
        : dims_(std::move(dims)), affine_(std::move(affine)) {
        if (static_cast<int>(dims_.size()) != affine_.dim()) {
            throw GeometryError("GridSpec: dims rank does not match affine dimensionality");
        }
        for (auto n : dims_) {
            if (n < 1) throw GeometryError("GridSpec: every dimension must be >= 1");
        }
    }

    int dim() const noexcept { return affine_.dim(); }
    const std::vector<std::int64_t>& dims() const noexcept { return dims_; }
    std::int64_t dims(int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
    const AffineMap& affine() const noexcept { return affine_; }

    std::int64_t voxel_count() const {
        return std::accumulate(dims_.begin(), dims_.end(), std::int64_t{1},
                               std::multiplies<>());
    }

    friend bool operator==(const GridSpec& a, const GridSpec& b) {
        return a.dims_ == b.dims_ && a.affine_ == b.affine_;
    }

private:
    std::vector<std::int64_t> dims_;
    AffineMap affine_;
};

inline AffineMap compose(const AffineMap& a, const AffineMap& b) {
    if (a.dim() != b.dim()) throw GeometryError(detail::dim_message("compose", a.dim(), b.dim()));
    return AffineMap(a.matrix() * b.matrix());
}

inline AffineMap invert(const AffineMap& a) {
    const Matrix lin = a.linear();
    const Matrix inv = lin.inverse();
    return AffineMap::from_parts(inv, -(inv * a.translation()));
}

// ---------------------------------------------------------------------------
// Matrix functions

/// Matrix exponential by scaling and squaring with a [6/6] Pade approximant.
inline Matrix matrix_exp(const Matrix& m) {
    detail::require_square(m, "matrix_exp");
    const auto n = m.rows();
    const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
    const Matrix a = m / std::ldexp(1.0, squarings);

    static constexpr double c[7] = {1.0,          0.5,           5.0 / 44.0,      1.0 / 66.0,
                                    1.0 / 792.0,  1.0 / 15840.0, 1.0 / 665280.0};
    Matrix power = Matrix::Identity(n, n);
    Matrix num = Matrix::Identity(n, n);
    Matrix den = Matrix::Identity(n, n);
    for (int k = 1; k <= 6; ++k) {
        power = power * a;
        num += c[k] * power;
        den += ((k % 2) ? -c[k] : c[k]) * power;
    }
    Matrix e = den.partialPivLu().solve(num);
    for (int i = 0; i < squarings; ++i) e = e * e;
    return e;
}

namespace detail {

// Denman-Beavers iteration for the principal square root.
inline Matrix sqrtm(const Matrix& a) {
    const auto n = a.rows();
    Matrix y = a;
    Matrix z = Matrix::Identity(n, n);
    for (int it = 0; it < 100; ++it) {
        const Matrix y_inv = y.inverse();
        const Matrix z_inv = z.inverse();
        Matrix y_next = 0.5 * (y + z_inv);
        z = 0.5 * (z + y_inv);
        const double change = (y_next - y).norm();
        y = std::move(y_next);
        if (change <= 4.0 * std::numeric_limits<double>::epsilon() * y.norm()) break;
    }
    return y;
}

} // namespace detail

/// Principal real matrix logarithm.
///
/// Inverse scaling and squaring: repeated principal square roots bring the
/// argument within 0.25 of the identity, where the Gregory series
/// log(A) = 2 sum Z^(2k+1)/(2k+1), Z = (A-I)(A+I)^-1, converges quickly.
/// Throws NumericalError when det(m) <= 0 or when m has an eigenvalue on the
/// closed negative real axis.
inline Matrix real_log(const Matrix& m) {
    detail::require_square(m, "real_log");
    const auto n = m.rows();
    const double det = m.determinant();
    if (!(det > 0.0)) throw NumericalError("real_log: determinant must be positive");

    const Eigen::EigenSolver<Matrix> eig(m, false);
    const double scale = m.norm();
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto lambda = eig.eigenvalues()(i);
        if (std::abs(lambda.imag()) <= 1e-12 * scale && lambda.real() <= 1e-14 * scale) {
            throw NumericalError("real_log: eigenvalue on the closed negative real axis");
        }
    }

    const Matrix eye = Matrix::Identity(n, n);
    Matrix a = m;
    int roots = 0;
    while ((a - eye).norm() > 0.25 && roots < 64) {
        a = detail::sqrtm(a);
        ++roots;
    }

    const Matrix z = (a - eye) * (a + eye).inverse();
    const Matrix z2 = z * z;
    Matrix term = z;
    Matrix sum = z;
    for (int k = 1; k < 200; ++k) {
        term = term * z2;
        const Matrix add = term / static_cast<double>(2 * k + 1);
        sum += add;
        if (add.norm() <= 1e-18 * std::max(1.0, sum.norm())) break;
    }
    return std::ldexp(2.0, roots) * sum;
}

/// Closest orthogonal matrix in the Frobenius sense (polar factor).
inline Matrix polar_factor(const Matrix& m) {
    const Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

/// Per-axis reflection signs that make m's determinant positive.
///
/// If the polar factor U is a reflection, a single axis is flipped: the one
/// whose flip brings U closest to the identity (smallest diagonal entry,
/// lowest index on ties).
inline Vector reflection_signs(const Matrix& m) {
    detail::require_square(m, "reflection_signs");
    Vector signs = Vector::Ones(m.rows());
    if (m.determinant() < 0.0) {
        const Matrix u = polar_factor(m);
        Eigen::Index axis = 0;
        for (Eigen::Index j = 1; j < u.rows(); ++j) {
            if (u(j, j) < u(axis, axis)) axis = j;
        }
        signs(axis) = -1.0;
    }
    return signs;
}

// ---------------------------------------------------------------------------
// Karcher mean

struct KarcherResult {
    Matrix mean;
    int iterations = 0;
    double tangent_norm = 0.0;
};

/// Barycentre of invertible, positive-determinant matrices on GL(D).
///
/// Repeats B <- B exp(mean_i log(B^-1 M_i)) until the mean tangent vector's
/// Frobenius norm is at most `tolerance`. Inputs are visited in lexicographic
/// order of their entries, so the result does not depend on list order.
inline KarcherResult karcher_mean_detailed(std::span<const Matrix> linears,
                                           double tolerance = 1e-10,
                                           int max_iterations = 64) {
    if (linears.empty()) throw GeometryError("karcher_mean: empty input");
    const auto n = linears.front().rows();
    std::vector<const Matrix*> order;
    order.reserve(linears.size());
    for (const auto& m : linears) {
        detail::require_square(m, "karcher_mean");
        if (m.rows() != n) throw GeometryError(detail::dim_message("karcher_mean", m.rows(), n));
        if (!m.allFinite() || !(m.determinant() > detail::kSingularDet)) {
            throw GeometryError("karcher_mean: matrices must be finite with positive determinant");
        }
        order.push_back(&m);
    }
    std::stable_sort(order.begin(), order.end(), [](const Matrix* a, const Matrix* b) {
        return std::lexicographical_compare(a->data(), a->data() + a->size(), b->data(),
                                            b->data() + b->size());
    });

    const double count = static_cast<double>(order.size());
    Matrix barycentre = *order.front();
    for (int it = 0; it <= max_iterations; ++it) {
        const Matrix inv = barycentre.inverse();
        Matrix tangent = Matrix::Zero(n, n);
        for (const Matrix* m : order) tangent += real_log(inv * *m);
        tangent /= count;
        const double norm = tangent.norm();
        if (norm <= tolerance) return {barycentre, it, norm};
        if (it == max_iterations) break;
        barycentre = barycentre * matrix_exp(tangent);
    }
    throw ConvergenceError("karcher_mean: no convergence after " +
                               std::to_string(max_iterations) + " iterations",
                           max_iterations);
}

inline Matrix karcher_mean(std::span<const Matrix> linears) {
    return karcher_mean_detailed(linears).mean;
}

// ---------------------------------------------------------------------------
// Rotation x scaling projection

struct RotScale {
    Matrix rotation;  // det +1
    Vector scales;    // > 0
    Vector flips;     // +-1 per axis
    double residual = 0.0;
    int iterations = 0;

    Matrix recompose() const { return rotation * (flips.cwiseProduct(scales)).asDiagonal(); }
};

/// Least-squares fit m ~ R diag(flips * scales) by alternating minimisation.
///
/// With the scales fixed, R is the polar factor of m' diag(s) (orthogonal
/// Procrustes); with R fixed, s_j = (R^T m')_jj. m' = m diag(flips).
inline RotScale closest_rot_scale(const Matrix& m, double tolerance = 1e-12,
                                  int max_iterations = 128) {
    detail::require_square(m, "closest_rot_scale");
    if (!m.allFinite() || std::abs(m.determinant()) <= detail::kSingularDet) {
        throw GeometryError("closest_rot_scale: singular input");
    }
    RotScale out;
    out.flips = reflection_signs(m);
    const Matrix target = m * out.flips.asDiagonal();
    const double floor = 1e-12 * target.norm();

    auto fit_scales = [&](const Matrix& r) {
        Vector s = (r.transpose() * target).diagonal();
        for (Eigen::Index j = 0; j < s.size(); ++j) s(j) = std::max(s(j), floor);
        return s;
    };
    auto residual = [&](const Matrix& r, const Vector& s) {
        return (target - r * s.asDiagonal()).norm();
    };

    out.rotation = polar_factor(target);
    out.scales = fit_scales(out.rotation);
    out.residual = residual(out.rotation, out.scales);
    for (int it = 1; it <= max_iterations; ++it) {
        out.rotation = polar_factor(target * out.scales.asDiagonal());
        out.scales = fit_scales(out.rotation);
        const double next = residual(out.rotation, out.scales);
        const double change = std::abs(out.residual - next);
        out.residual = next;
        out.iterations = it;
        if (change <= tolerance) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mean space

/// Smallest integer >= n of the form 2^a or 2^a * 3.
inline std::int64_t round_dimension(std::int64_t n) {
    if (n <= 1) return 1;
    std::int64_t pow2 = 1;
    while (pow2 < n) pow2 *= 2;
    std::int64_t best = pow2;
    std::int64_t three = 3;
    while (three < n) three *= 2;
    return std::min(best, three);
}

inline bool is_valid_dimension(std::int64_t n) {
    if (n < 1) return false;
    while (n % 2 == 0) n /= 2;
    return n == 1 || n == 3;
}

struct MeanSpaceResult {
    GridSpec space;
    Matrix mean_linear;  // Karcher barycentre of the flip-corrected linear parts
    Matrix rotation;
    Vector scales;       // voxel sizes of the projected barycentre
    Vector flips;
    int iterations = 0;
};

/// World-space corners (voxel centres) of a grid, as mean-space voxel
/// coordinates under the linear map `to_voxel`.
inline void accumulate_bounds(const GridSpec& grid, const Matrix& to_voxel, Vector& lo,
                              Vector& hi) {
    const int d = grid.dim();
    const Matrix lin = grid.affine().linear();
    const Vector t = grid.affine().translation();
    for (int corner = 0; corner < (1 << d); ++corner) {
        Vector x(d);
        for (int k = 0; k < d; ++k) {
            x(k) = (corner >> k) & 1 ? static_cast<double>(grid.dims(k) - 1) : 0.0;
        }
        const Vector u = to_voxel * (lin * x + t);
        lo = lo.cwiseMin(u);
        hi = hi.cwiseMax(u);
    }
}

/// Common grid for a cohort: Karcher-mean orientation, fixed voxel size,
/// field of view covering every input voxel centre, dimensions rounded up to
/// 2^a or 2^a * 3 and the union bounding box centred in the grid.
inline MeanSpaceResult mean_space(std::span<const GridSpec> grids, Vector voxel_size = Vector()) {
    if (grids.empty()) throw GeometryError("mean_space: empty input");
    const int d = grids.front().dim();
    for (const auto& g : grids) {
        if (g.dim() != d) throw GeometryError(detail::dim_message("mean_space", g.dim(), d));
    }
    if (voxel_size.size() == 0) voxel_size = Vector::Ones(d);
    if (voxel_size.size() != d || (voxel_size.array() <= 0.0).any()) {
        throw GeometryError("mean_space: voxel size must have one positive entry per axis");
    }

    std::vector<Matrix> linears;
    linears.reserve(grids.size());
    Vector flip_votes = Vector::Zero(d);
    for (const auto& g : grids) {
        const Matrix lin = g.affine().linear();
        const Vector signs = reflection_signs(lin);
        flip_votes += signs;
        linears.push_back(lin * signs.asDiagonal());
    }

    const KarcherResult karcher = karcher_mean_detailed(linears);
    const RotScale projected = closest_rot_scale(karcher.mean);

    Vector flips(d);
    for (int k = 0; k < d; ++k) flips(k) = flip_votes(k) < 0.0 ? -1.0 : 1.0;
    const Matrix linear = projected.rotation * flips.cwiseProduct(voxel_size).asDiagonal();
    const Matrix to_voxel = linear.inverse();

    Vector lo = Vector::Constant(d, std::numeric_limits<double>::infinity());
    Vector hi = Vector::Constant(d, -std::numeric_limits<double>::infinity());
    for (const auto& g : grids) accumulate_bounds(g, to_voxel, lo, hi);

    std::vector<std::int64_t> dims(static_cast<std::size_t>(d));
    Vector shift(d);
    for (int k = 0; k < d; ++k) {
        const double extent = hi(k) - lo(k);
        const auto needed = static_cast<std::int64_t>(std::floor(extent + 1e-9)) + 1;
        dims[static_cast<std::size_t>(k)] = round_dimension(needed);
        shift(k) = 0.5 * (lo(k) + hi(k)) -
                   0.5 * static_cast<double>(dims[static_cast<std::size_t>(k)] - 1);
    }

    MeanSpaceResult out{
        GridSpec(std::move(dims), AffineMap::from_parts(linear, linear * shift)),
        karcher.mean,
        projected.rotation,
        projected.scales,
        flips,
        karcher.iterations,
    };
    return out;
}

} // namespace splat
