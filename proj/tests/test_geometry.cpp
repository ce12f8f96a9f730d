#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "splat/geometry.hpp"

using splat::AffineMap;
using splat::GridSpec;
using splat::Matrix;
using splat::Vector;

namespace {

Matrix diag(std::initializer_list<double> v) {
    Vector d(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) d(i++) = x;
    return d.asDiagonal();
}

double rel_fro(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

} // namespace

TEST(AffineMap, RejectsMalformedMatrices) {
    Matrix bad_row = Matrix::Identity(3, 3);
    bad_row(2, 0) = 0.5;
    EXPECT_THROW(AffineMap{bad_row}, splat::GeometryError);
    EXPECT_THROW(AffineMap{diag({1.0, 0.0, 1.0})}, splat::GeometryError);
    EXPECT_THROW(AffineMap{Matrix::Identity(5, 5)}, splat::GeometryError);
    EXPECT_THROW(AffineMap{Matrix::Identity(2, 3)}, splat::GeometryError);
    EXPECT_THROW((GridSpec{{4, 0}, AffineMap::identity(2)}), splat::GeometryError);
    EXPECT_THROW((GridSpec{{4}, AffineMap::identity(2)}), splat::GeometryError);
}

TEST(Compose, IdentityAndToyMappings) {
    const AffineMap eye = AffineMap::identity(1);
    EXPECT_TRUE(splat::compose(eye, eye).is_identity());

    const AffineMap native(diag({2.5, 1.0}));
    const AffineMap mean = AffineMap::identity(1);
    EXPECT_EQ(splat::compose(splat::invert(native), mean).matrix(), diag({0.4, 1.0}));
    EXPECT_EQ(splat::compose(splat::invert(mean), native).matrix(), diag({2.5, 1.0}));

    EXPECT_THROW(splat::compose(AffineMap::identity(2), AffineMap::identity(3)), splat::GeometryError);
}

TEST(Invert, Examples) {
    EXPECT_TRUE(splat::invert(AffineMap::identity(3)).is_identity());
    EXPECT_EQ(splat::invert(AffineMap(diag({2.5, 1.0}))).matrix(), diag({0.4, 1.0}));

    Vector t(3);
    t << 1.5, -2.0, 7.25;
    const AffineMap shift = AffineMap::from_parts(Matrix::Identity(3, 3), t);
    EXPECT_EQ(splat::invert(shift).translation(), -t);
}

TEST(Invert, RandomRoundTrip) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        const int d = 1 + trial % 3;
        const AffineMap a = oracle::random_affine(d, rng);
        const Matrix eye = Matrix::Identity(d + 1, d + 1);
        EXPECT_LE((splat::compose(splat::invert(a), a).matrix() - eye).norm(), 1e-10);
        EXPECT_LE((splat::compose(a, splat::invert(a)).matrix() - eye).norm(), 1e-10);
    }
}

TEST(MatrixExp, Examples) {
    EXPECT_LE((splat::matrix_exp(Matrix::Zero(3, 3)) - Matrix::Identity(3, 3)).norm(), 0.0);
    EXPECT_LE(rel_fro(splat::matrix_exp(diag({std::log(2.0), std::log(3.0)})), diag({2.0, 3.0})), 1e-14);

    Matrix gen(2, 2);
    gen << 0.0, -std::numbers::pi / 2, std::numbers::pi / 2, 0.0;
    const Matrix e = splat::matrix_exp(gen);
    EXPECT_LE(rel_fro(e, oracle::taylor_exp(gen)), 1e-13);
    EXPECT_LE(rel_fro(e, oracle::rotation2(std::numbers::pi / 2)), 1e-13);
}

TEST(MatrixExp, AgreesWithTaylorSeriesOnRandomMatrices) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 0.7);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 1 + trial % 3;
        Matrix m(d, d);
        for (auto& x : m.reshaped()) x = n(rng);
        EXPECT_LE(rel_fro(splat::matrix_exp(m), oracle::taylor_exp(m, 60)), 1e-12) << m;
    }
}

TEST(RealLog, Examples) {
    EXPECT_LE(splat::real_log(Matrix::Identity(3, 3)).norm(), 1e-15);
    const double e = std::numbers::e;
    EXPECT_LE((splat::real_log(diag({e, e})) - Matrix::Identity(2, 2)).norm(), 1e-13);

    const double theta = std::numbers::pi / 6;
    const Matrix log_r = splat::real_log(oracle::rotation2(theta));
    Matrix expected(2, 2);
    expected << 0.0, -theta, theta, 0.0;
    EXPECT_LE((log_r - expected).norm(), 1e-13);
    EXPECT_LE(rel_fro(oracle::taylor_exp(log_r), oracle::rotation2(theta)), 1e-13);
}

TEST(RealLog, Errors) {
    EXPECT_THROW(splat::real_log(diag({-1.0, 1.0})), splat::NumericalError);
    // det > 0 but both eigenvalues negative: no real principal logarithm.
    EXPECT_THROW(splat::real_log(diag({-1.0, -2.0})), splat::NumericalError);
    EXPECT_THROW(splat::real_log(oracle::rotation2(std::numbers::pi)), splat::NumericalError);
}

TEST(RealLog, DefectiveMatrix) {
    Matrix jordan(2, 2);
    jordan << 2.0, 1.0, 0.0, 2.0;
    const Matrix l = splat::real_log(jordan);
    Matrix expected(2, 2);
    expected << std::log(2.0), 0.5, 0.0, std::log(2.0);
    EXPECT_LE((l - expected).norm(), 1e-13);
}

TEST(RealLog, ExpLogRoundTripOnRandomMatrices) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    int checked = 0;
    while (checked < 300) {
        const int d = 1 + checked % 3;
        Matrix m(d, d);
        for (auto& x : m.reshaped()) x = n(rng);
        const Eigen::JacobiSVD<Matrix> svd(m);
        const double cond = svd.singularValues()(0) / svd.singularValues()(d - 1);
        if (m.determinant() <= 0.0 || cond >= 100.0) continue;
        const Eigen::EigenSolver<Matrix> eig(m, false);
        bool negative_real = false;
        for (Eigen::Index i = 0; i < d; ++i) {
            const auto l = eig.eigenvalues()(i);
            negative_real |= std::abs(l.imag()) < 1e-9 && l.real() < 0.0;
        }
        if (negative_real) continue;
        EXPECT_LE(rel_fro(splat::matrix_exp(splat::real_log(m)), m), 1e-9) << m;
        ++checked;
    }
}

TEST(KarcherMean, Examples) {
    std::mt19937_64 rng(3);
    const Matrix m = oracle::random_affine(3, rng).linear();
    const std::vector<Matrix> single{m};
    EXPECT_LE((splat::karcher_mean(single) - m).norm(), 1e-10);

    const std::vector<Matrix> pair{diag({2.0}), diag({0.5})};
    EXPECT_NEAR(splat::karcher_mean(pair)(0, 0), 1.0, 1e-12);

    const double t = std::numbers::pi / 6;
    const std::vector<Matrix> rotations{oracle::rotation2(t), oracle::rotation2(-t)};
    // Log-average oracle: the two tangent vectors cancel.
    const Matrix one_step = oracle::taylor_exp(0.5 * (splat::real_log(rotations[0]) + splat::real_log(rotations[1])));
    EXPECT_LE((splat::karcher_mean(rotations) - one_step).norm(), 1e-12);
    EXPECT_LE((splat::karcher_mean(rotations) - Matrix::Identity(2, 2)).norm(), 1e-12);
}

TEST(KarcherMean, RepeatedInputIsFixedPoint) {
    std::mt19937_64 rng(9);
    for (int n : {1, 2, 5, 16}) {
        const Matrix m = oracle::random_affine(3, rng).linear();
        const std::vector<Matrix> copies(static_cast<std::size_t>(n), m);
        EXPECT_LE((splat::karcher_mean(copies) - m).norm(), 1e-10);
    }
}

TEST(KarcherMean, PermutationInvariantBitwise) {
    std::mt19937_64 rng(21);
    std::vector<Matrix> cohort;
    const Matrix base = oracle::random_affine(3, rng).linear();
    std::normal_distribution<double> n(0.0, 0.2);
    for (int i = 0; i < 9; ++i) {
        Matrix x(3, 3);
        for (auto& v : x.reshaped()) v = n(rng);
        cohort.push_back(base * splat::matrix_exp(x));
    }
    const Matrix reference = splat::karcher_mean(cohort);
    for (int p = 0; p < 10; ++p) {
        std::shuffle(cohort.begin(), cohort.end(), rng);
        EXPECT_EQ(splat::karcher_mean(cohort), reference);
    }
}

TEST(KarcherMean, MeanTangentVanishes) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 0.3);
    std::vector<Matrix> cohort;
    for (int i = 0; i < 6; ++i) {
        Matrix x(2, 2);
        for (auto& v : x.reshaped()) v = n(rng);
        cohort.push_back(splat::matrix_exp(x));
    }
    const auto r = splat::karcher_mean_detailed(cohort);
    Matrix tangent = Matrix::Zero(2, 2);
    for (const auto& m : cohort) tangent += splat::real_log(r.mean.inverse() * m);
    EXPECT_LE((tangent / 6.0).norm(), 1e-10);
    EXPECT_LE(r.iterations, 64);
}

TEST(KarcherMean, Errors) {
    EXPECT_THROW(splat::karcher_mean(std::vector<Matrix>{}), splat::GeometryError);
    EXPECT_THROW(splat::karcher_mean(std::vector<Matrix>{diag({-1.0, 1.0})}), splat::GeometryError);
    EXPECT_THROW(splat::karcher_mean(std::vector<Matrix>{diag({1.0, 1.0}), diag({1.0})}),
                 splat::GeometryError);
    const std::vector<Matrix> spread{diag({1.0, 1.0}), diag({20.0, 0.1})};
    EXPECT_THROW(splat::karcher_mean_detailed(spread, 1e-10, 0), splat::ConvergenceError);
}

TEST(ClosestRotScale, ExactlyFactorable) {
    const Matrix r = oracle::rotation2(20.0 * std::numbers::pi / 180.0);
    const auto fit = splat::closest_rot_scale(r * diag({1.0, 2.0}));
    EXPECT_LE((fit.rotation - r).norm(), 1e-12);
    EXPECT_NEAR(fit.scales(0), 1.0, 1e-12);
    EXPECT_NEAR(fit.scales(1), 2.0, 1e-12);
    EXPECT_EQ(fit.flips, Vector::Ones(2));
    EXPECT_LE(fit.residual, 1e-10);
}

TEST(ClosestRotScale, PureFlip) {
    const auto fit = splat::closest_rot_scale(diag({-1.0, 1.0}));
    EXPECT_LE((fit.rotation - Matrix::Identity(2, 2)).norm(), 1e-14);
    EXPECT_LE((fit.scales - Vector::Ones(2)).norm(), 1e-14);
    EXPECT_EQ(fit.flips(0), -1.0);
    EXPECT_EQ(fit.flips(1), 1.0);
}

TEST(ClosestRotScale, ShearMatchesGridSearch) {
    Matrix shear(2, 2);
    shear << 1.0, 0.3, 0.0, 1.0;
    const auto fit = splat::closest_rot_scale(shear);
    EXPECT_NEAR(fit.residual, oracle::grid_search_rot_scale_2d(shear), 1e-6);
    EXPECT_NEAR((shear - fit.recompose()).norm(), fit.residual, 1e-12);
}

TEST(ClosestRotScale, RandomFactorableRecomposes) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> s(0.3, 3.0);
    std::uniform_int_distribution<int> coin(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 1 + trial % 3;
        Vector signed_scales(d);
        for (int k = 0; k < d; ++k) signed_scales(k) = s(rng);
        if (coin(rng)) signed_scales(0) = -signed_scales(0);
        const Matrix m = oracle::random_rotation(d, rng) * signed_scales.asDiagonal();
        const auto fit = splat::closest_rot_scale(m);
        EXPECT_LE(fit.residual, 1e-10);
        EXPECT_LE((fit.recompose() - m).norm(), 1e-10);
        EXPECT_LE((fit.rotation.transpose() * fit.rotation - Matrix::Identity(d, d)).norm(), 1e-10);
        EXPECT_GT(fit.rotation.determinant(), 0.0);
    }
}

TEST(ClosestRotScale, ResidualNonIncreasingWithIterations) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix m(3, 3);
        for (auto& v : m.reshaped()) v = n(rng);
        if (std::abs(m.determinant()) < 0.1) continue;
        double prev = std::numeric_limits<double>::infinity();
        for (int it = 0; it <= 20; ++it) {
            const double r = splat::closest_rot_scale(m, 0.0, it).residual;
            EXPECT_LE(r, prev + 1e-12);
            prev = r;
        }
    }
    EXPECT_THROW(splat::closest_rot_scale(Matrix::Zero(2, 2)), splat::GeometryError);
}

TEST(DimensionRounding, SmallestAdmissibleValue) {
    const std::vector<std::pair<std::int64_t, std::int64_t>> table{
        {1, 1}, {2, 2}, {3, 3}, {4, 4}, {5, 6}, {7, 8}, {9, 12}, {13, 16}, {17, 24}, {100, 128}, {190, 192}};
    for (auto [n, expected] : table) EXPECT_EQ(splat::round_dimension(n), expected) << n;
    for (std::int64_t n = 1; n < 2000; ++n) {
        const auto r = splat::round_dimension(n);
        ASSERT_GE(r, n);
        ASSERT_TRUE(splat::is_valid_dimension(r));
        for (std::int64_t m = n; m < r; ++m) ASSERT_FALSE(splat::is_valid_dimension(m));
    }
}

TEST(MeanSpace, SingleCompliantGrid) {
    const std::vector<GridSpec> grids{GridSpec({4, 4, 4}, AffineMap::identity(3))};
    const auto r = splat::mean_space(grids);
    EXPECT_EQ(r.space.dims(), (std::vector<std::int64_t>{4, 4, 4}));
    EXPECT_LE((r.space.affine().linear() - Matrix::Identity(3, 3)).norm(), 1e-12);
    EXPECT_LE(r.space.affine().translation().norm(), 1e-12);
}

TEST(MeanSpace, ToyVectorGivesEightVoxels) {
    const std::vector<GridSpec> grids{GridSpec({4}, AffineMap(diag({2.5, 1.0})))};
    const auto r = splat::mean_space(grids, Vector::Ones(1));
    EXPECT_EQ(r.space.dims(), std::vector<std::int64_t>{8});
    EXPECT_DOUBLE_EQ(r.space.affine().linear()(0, 0), 1.0);
    EXPECT_NEAR(r.mean_linear(0, 0), 2.5, 1e-12);
    EXPECT_NEAR(r.scales(0), 2.5, 1e-12);
}

TEST(MeanSpace, SymmetricRotationPairCoversUnionBox) {
    const double t = 15.0 * std::numbers::pi / 180.0;
    const std::vector<std::int64_t> dims{20, 12};
    Vector centre(2);
    centre << 9.5, 5.5;
    std::vector<GridSpec> grids;
    for (double sign : {1.0, -1.0}) {
        const Matrix r = oracle::rotation2(sign * t);
        grids.emplace_back(dims, AffineMap::from_parts(r, -(r * centre)));
    }
    const auto result = splat::mean_space(grids);
    EXPECT_LE((result.rotation - Matrix::Identity(2, 2)).norm(), 1e-8);

    // Oracle: enumerate every voxel centre of both grids in world space.
    Vector lo = Vector::Constant(2, 1e300), hi = Vector::Constant(2, -1e300);
    for (const auto& g : grids) {
        for (std::int64_t i = 0; i < g.voxel_count(); ++i) {
            const auto x = oracle::unravel(i, g.dims());
            Vector v(2);
            v << static_cast<double>(x[0]), static_cast<double>(x[1]);
            const Vector w = g.affine().apply(v);
            lo = lo.cwiseMin(w);
            hi = hi.cwiseMax(w);
        }
    }
    for (int k = 0; k < 2; ++k) {
        const auto needed = static_cast<std::int64_t>(std::floor(hi(k) - lo(k) + 1e-9)) + 1;
        EXPECT_EQ(result.space.dims(k), splat::round_dimension(needed));
    }
}

TEST(MeanSpace, CoversEveryInputVoxelCentre) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        const int d = 1 + trial % 3;
        std::vector<GridSpec> grids;
        const int n = 1 + trial % 5;
        for (int i = 0; i < n; ++i) grids.emplace_back(oracle::random_dims(d, rng, 1, 9), oracle::random_affine(d, rng));
        const auto r = splat::mean_space(grids);
        const Matrix to_voxel = r.space.affine().matrix().inverse();
        for (int k = 0; k < d; ++k) EXPECT_TRUE(splat::is_valid_dimension(r.space.dims(k)));
        EXPECT_LE((r.rotation.transpose() * r.rotation - Matrix::Identity(d, d)).norm(), 1e-10);
        for (const auto& g : grids) {
            for (std::int64_t i = 0; i < g.voxel_count(); ++i) {
                const auto x = oracle::unravel(i, g.dims());
                Vector h = Vector::Ones(d + 1);
                for (int k = 0; k < d; ++k) h(k) = static_cast<double>(x[static_cast<std::size_t>(k)]);
                const Vector u = to_voxel * g.affine().matrix() * h;
                for (int k = 0; k < d; ++k) {
                    EXPECT_GE(u(k), -0.5 - 1e-9);
                    EXPECT_LE(u(k), static_cast<double>(r.space.dims(k)) - 0.5 + 1e-9);
                }
            }
        }
    }
}

TEST(MeanSpace, KeepsCohortReflection) {
    std::vector<GridSpec> grids;
    grids.emplace_back(std::vector<std::int64_t>{8, 8, 8}, AffineMap(diag({-1.0, 1.0, 1.0, 1.0})));
    grids.emplace_back(std::vector<std::int64_t>{8, 8, 8}, AffineMap(diag({-2.0, 1.0, 1.5, 1.0})));
    const auto r = splat::mean_space(grids);
    EXPECT_EQ(r.flips(0), -1.0);
    EXPECT_NEAR(r.space.affine().linear()(0, 0), -1.0, 1e-12);
    EXPECT_NEAR(r.space.affine().linear()(1, 1), 1.0, 1e-12);
    EXPECT_NEAR(r.scales(0), std::sqrt(2.0), 1e-10);
}

TEST(MeanSpace, CustomVoxelSizeAndErrors) {
    const std::vector<GridSpec> grids{GridSpec({10, 10}, AffineMap::identity(2))};
    Vector vs(2);
    vs << 2.0, 0.5;
    const auto r = splat::mean_space(grids, vs);
    EXPECT_EQ(r.space.dims(), (std::vector<std::int64_t>{6, 24}));
    EXPECT_THROW(splat::mean_space(std::vector<GridSpec>{}), splat::GeometryError);
    const std::vector<GridSpec> mixed{GridSpec({4}, AffineMap::identity(1)), GridSpec({4, 4}, AffineMap::identity(2))};
    EXPECT_THROW(splat::mean_space(mixed), splat::GeometryError);
    EXPECT_THROW(splat::mean_space(grids, Vector::Zero(2)), splat::GeometryError);
}
