#pragma once

// Randomised check of <push(f), g> == <f, pull(g)>.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "splat/geometry.hpp"
#include "splat/gridops.hpp"

namespace splat {

/// Random well-conditioned affine whose grid is centred near the world origin.
inline AffineMap random_centred_affine(const std::vector<std::int64_t>& dims, std::mt19937_64& rng) {
    const int d = static_cast<int>(dims.size());
    std::uniform_real_distribution<double> angle(-0.6, 0.6);
    std::uniform_real_distribution<double> scale(0.6, 1.6);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    Matrix skew = Matrix::Zero(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) {
            skew(i, j) = angle(rng);
            skew(j, i) = -skew(i, j);
        }
    }
    Vector s(d);
    for (int k = 0; k < d; ++k) s(k) = scale(rng);
    const Matrix lin = matrix_exp(skew) * s.asDiagonal();
    Vector centre(d);
    Vector shift(d);
    for (int k = 0; k < d; ++k) {
        centre(k) = 0.5 * static_cast<double>(dims[static_cast<std::size_t>(k)] - 1);
        shift(k) = jitter(rng);
    }
    return AffineMap::from_parts(lin, shift - lin * centre);
}

struct AdjointReport {
    int trials = 0;
    double max_relative_error = 0.0;
};

/// Runs `trials` random inner-product identity checks. With `corrupt` set the
/// pull side uses a translated copy of the target affine (negative control).
inline AdjointReport adjoint_trials(const std::vector<std::int64_t>& src_dims,
                                    const std::vector<std::int64_t>& dst_dims, int trials,
                                    std::uint64_t seed, bool corrupt = false,
                                    const Execution& exec = {}) {
    if (src_dims.size() != dst_dims.size() || src_dims.empty() || src_dims.size() > 3) {
        throw GeometryError("adjoint test: source and target dims must share rank 1..3");
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> value(-1.0, 1.0);
    AdjointReport report;
    for (int t = 0; t < trials; ++t) {
        const GridSpec src(src_dims, random_centred_affine(src_dims, rng));
        const GridSpec dst(dst_dims, random_centred_affine(dst_dims, rng));
        Volume f(src, 1);
        Volume g(dst, 1);
        for (auto& v : f.data()) v = value(rng);
        for (auto& v : g.data()) v = value(rng);

        const Volume pushed = push(f, dst, exec).pushed;
        GridSpec pull_from = dst;
        if (corrupt) {
            Matrix m = dst.affine().matrix();
            m.topRightCorner(dst.dim(), 1).array() += 0.37;
            pull_from = GridSpec(dst_dims, AffineMap(m));
            g = Volume(pull_from, 1, std::vector<double>(g.data().begin(), g.data().end()));
        }
        const Volume pulled = pull(g, src, exec);

        double lhs = 0.0, rhs = 0.0, nf = 0.0, ng = 0.0;
        for (std::size_t i = 0; i < pushed.data().size(); ++i) lhs += pushed.data()[i] * g.data()[i];
        for (std::size_t i = 0; i < f.data().size(); ++i) rhs += f.data()[i] * pulled.data()[i];
        for (double v : f.data()) nf += v * v;
        for (double v : g.data()) ng += v * v;
        const double err = std::abs(lhs - rhs) / (std::sqrt(nf) * std::sqrt(ng));
        report.max_relative_error = std::max(report.max_relative_error, err);
        ++report.trials;
    }
    return report;
}

} // namespace splat
