#include <gtest/gtest.h>

#include "gpode/field.hpp"
#include "gpode/rng.hpp"
#include "testutil.hpp"

using gpode::GridSpec;
using gpode::InducingSet;
using gpode::KernelParams;
using gpode::Matrix;
using gpode::Vector;

namespace {

GridSpec spec_1d(double lo, double hi, int n) {
    GridSpec s;
    s.lower = Vector::Constant(1, lo);
    s.upper = Vector::Constant(1, hi);
    s.counts = {n};
    return s;
}

InducingSet random_set(std::uint64_t seed, Eigen::Index dim, Eigen::Index m, double u_scale = 1.0) {
    gpode::Rng rng(seed);
    const Matrix Z = testutil::grid_for(dim, m);
    KernelParams kernel(1.0, Vector::Constant(dim, 1.2));
    return InducingSet(Z, kernel, u_scale * rng.normal_matrix(m, dim));
}

}  // namespace

TEST(MakeGrid, OneDimensional) {
    const Matrix Z = gpode::make_grid(spec_1d(0.0, 1.0, 3));
    ASSERT_EQ(Z.rows(), 3);
    EXPECT_DOUBLE_EQ(Z(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(Z(1, 0), 0.5);
    EXPECT_DOUBLE_EQ(Z(2, 0), 1.0);
}

TEST(MakeGrid, TwoDimensionalFiveByFive) {
    GridSpec s;
    s.lower = Vector::Constant(2, -3.0);
    s.upper = Vector::Constant(2, 3.0);
    s.counts = {5, 5};
    const Matrix Z = gpode::make_grid(s);
    ASSERT_EQ(Z.rows(), 25);
    // last dimension varies fastest
    EXPECT_DOUBLE_EQ(Z(0, 0), -3.0);
    EXPECT_DOUBLE_EQ(Z(0, 1), -3.0);
    EXPECT_DOUBLE_EQ(Z(1, 0), -3.0);
    EXPECT_DOUBLE_EQ(Z(1, 1), -1.5);
    EXPECT_DOUBLE_EQ(Z(24, 0), 3.0);
    EXPECT_DOUBLE_EQ(Z(24, 1), 3.0);
}

TEST(MakeGrid, ThreeDimensionalCount) {
    GridSpec s;
    s.lower = Vector::Constant(3, -1.0);
    s.upper = Vector::Constant(3, 1.0);
    s.counts = {5, 5, 5};
    EXPECT_EQ(gpode::make_grid(s).rows(), 125);
}

TEST(MakeGrid, RejectsBadSpecs) {
    EXPECT_THROW(gpode::make_grid(spec_1d(0.0, 1.0, 1)), std::invalid_argument);
    EXPECT_THROW(gpode::make_grid(spec_1d(1.0, 0.0, 3)), std::invalid_argument);
}

TEST(InducingSetField, InterpolatesInducingVectors) {
    const InducingSet set = random_set(5, 2, 9);
    ASSERT_EQ(set.jitter(), 0.0);
    for (Eigen::Index m = 0; m < set.num_points(); ++m) {
        const Vector f = set.eval(set.locations().row(m).transpose());
        const Vector u = set.vectors().row(m).transpose();
        EXPECT_LT((f - u).norm() / std::max(1e-12, u.norm()), 1e-8) << "inducing point " << m;
    }
}

TEST(InducingSetField, ZeroVectorsGiveZeroField) {
    const Matrix Z = testutil::grid_for(2, 9);
    const InducingSet set(Z, KernelParams(1.0, Vector::Constant(2, 1.0)), Matrix::Zero(9, 2));
    gpode::Rng rng(2);
    for (int i = 0; i < 10; ++i) {
        EXPECT_EQ(set.eval(rng.normal_vector(2)).norm(), 0.0);
        EXPECT_EQ(set.state_jacobian(rng.normal_vector(2)).norm(), 0.0);
    }
}

TEST(InducingSetField, FarFieldDecays) {
    const InducingSet set = random_set(9, 2, 9);
    Vector far(2);
    far << 30.0, -30.0;  // >= 10 lengthscales from every grid point
    EXPECT_LT(set.eval(far).norm(), 1e-8 * set.vectors().norm());
}

TEST(StateJacobian, MatchesFiniteDifferences) {
    const InducingSet set = random_set(13, 2, 9);
    gpode::Rng rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector x = rng.normal_vector(2);
        const Matrix J = set.state_jacobian(x);
        for (Eigen::Index d = 0; d < 2; ++d) {
            const Vector fd = testutil::numerical_gradient(
                [&](const Vector& q) { return set.eval(q)[d]; }, x, 1e-6);
            for (Eigen::Index e = 0; e < 2; ++e)
                EXPECT_LT(std::abs(J(d, e) - fd[e]) / std::max(1e-6, std::abs(fd[e])), 1e-5);
        }
    }
}

TEST(StateJacobian, RespectsMirrorSymmetry) {
    // reflect through the x1 axis: u'(z1,-z2) = (u1(z), -u2(z)) implies
    // J'(x1,-x2) = S J(x) S with S = diag(1,-1): off-diagonals flip sign
    const Matrix Z = testutil::grid_for(2, 9);
    gpode::Rng rng(21);
    const Matrix U = rng.normal_matrix(9, 2);
    Matrix U_reflected(9, 2);
    for (Eigen::Index m = 0; m < 9; ++m) {
        Vector zr(2);
        zr << Z(m, 0), -Z(m, 1);
        Eigen::Index mr = -1;
        for (Eigen::Index k = 0; k < 9; ++k)
            if ((Z.row(k).transpose() - zr).norm() < 1e-12) mr = k;
        ASSERT_GE(mr, 0);
        U_reflected(mr, 0) = U(m, 0);
        U_reflected(mr, 1) = -U(m, 1);
    }
    KernelParams kernel(1.0, Vector::Constant(2, 1.1));
    const InducingSet set = InducingSet::from_unwhitened(Z, kernel, U);
    const InducingSet set_reflected = InducingSet::from_unwhitened(Z, kernel, U_reflected);

    Vector x(2);
    x << 0.37, 0.81;
    Vector xr(2);
    xr << x[0], -x[1];
    const Matrix J = set.state_jacobian(x);
    const Matrix Jr = set_reflected.state_jacobian(xr);
    EXPECT_NEAR(Jr(0, 0), J(0, 0), 1e-10);
    EXPECT_NEAR(Jr(1, 1), J(1, 1), 1e-10);
    EXPECT_NEAR(Jr(0, 1), -J(0, 1), 1e-10);
    EXPECT_NEAR(Jr(1, 0), -J(1, 0), 1e-10);
}

TEST(ParamWeights, BasisVectorAtInducingPoint) {
    const InducingSet set = random_set(17, 2, 9);
    for (Eigen::Index m = 0; m < 9; ++m) {
        const Vector w = set.param_weights(set.locations().row(m).transpose());
        for (Eigen::Index k = 0; k < 9; ++k) EXPECT_NEAR(w[k], k == m ? 1.0 : 0.0, 1e-9);
    }
}

TEST(ParamWeights, FieldIsLinearInU) {
    const InducingSet set = random_set(23, 2, 9);
    gpode::Rng rng(24);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector x = rng.normal_vector(2);
        const Vector w = set.param_weights(x);
        const Vector f = set.eval(x);
        const Vector via_weights = set.vectors().transpose() * w;
        EXPECT_LT((f - via_weights).norm(), 1e-10 * std::max(1.0, f.norm()));
    }
}

TEST(ParamWeights, MatchesFiniteDifferencesOverU) {
    const Matrix Z = testutil::grid_for(2, 9);
    KernelParams kernel(1.0, Vector::Constant(2, 1.0));
    gpode::Rng rng(31);
    const Matrix U = rng.normal_matrix(9, 2);
    const InducingSet set = InducingSet::from_unwhitened(Z, kernel, U);
    const Vector x = rng.normal_vector(2);
    const Vector w = set.param_weights(x);

    const double h = 1e-6;
    for (Eigen::Index m = 0; m < 9; ++m)
        for (Eigen::Index d = 0; d < 2; ++d) {
            Matrix Up = U, Um = U;
            Up(m, d) += h;
            Um(m, d) -= h;
            const Vector fp = InducingSet::from_unwhitened(Z, kernel, Up).eval(x);
            const Vector fm = InducingSet::from_unwhitened(Z, kernel, Um).eval(x);
            for (Eigen::Index e = 0; e < 2; ++e) {
                const double fd = (fp[e] - fm[e]) / (2 * h);
                const double expected = (e == d) ? w[m] : 0.0;
                EXPECT_LT(std::abs(fd - expected), 1e-6) << "m=" << m << " d=" << d << " e=" << e;
            }
        }
}

TEST(Whitening, IdentityFactorIsNoop) {
    gpode::Rng rng(41);
    const Matrix U = rng.normal_matrix(5, 2);
    const Matrix I = Matrix::Identity(5, 5);
    EXPECT_EQ((gpode::whiten(U, I) - U).norm(), 0.0);
    EXPECT_EQ((gpode::unwhiten(U, I) - U).norm(), 0.0);
}

TEST(Whitening, RoundTrip) {
    const InducingSet set = random_set(43, 2, 9);
    gpode::Rng rng(44);
    const Matrix U = rng.normal_matrix(9, 2);
    const Matrix round = gpode::unwhiten(gpode::whiten(U, set.cholesky_factor()), set.cholesky_factor());
    EXPECT_LT((round - U).norm() / U.norm(), 1e-10);
}

TEST(Whitening, SampleCovarianceApproachesKernelMatrix) {
    const Matrix Z = testutil::grid_for(1, 4);
    KernelParams kernel(1.0, Vector::Constant(1, 1.0));
    const Matrix K = gpode::kernel_matrix(Z, Z, kernel);
    const Matrix L = gpode::robust_cholesky(K).L;

    gpode::Rng rng(47);
    const int draws = 10000;
    Matrix cov = Matrix::Zero(4, 4);
    for (int i = 0; i < draws; ++i) {
        const Vector u = gpode::unwhiten(rng.normal_matrix(4, 1), L).col(0);
        cov += u * u.transpose();
    }
    cov /= static_cast<double>(draws);
    EXPECT_LT((cov - K).lpNorm<Eigen::Infinity>() / K.lpNorm<Eigen::Infinity>(), 0.05);
}

TEST(InducingSetField, DimensionDecoupling) {
    // perturbing one column of U moves only that output component
    const Matrix Z = testutil::grid_for(2, 9);
    KernelParams kernel(1.0, Vector::Constant(2, 1.0));
    gpode::Rng rng(53);
    const Matrix U = rng.normal_matrix(9, 2);
    Matrix U2 = U;
    U2.col(0) += rng.normal_vector(9);
    const InducingSet a = InducingSet::from_unwhitened(Z, kernel, U);
    const InducingSet b = InducingSet::from_unwhitened(Z, kernel, U2);
    for (int i = 0; i < 10; ++i) {
        const Vector x = rng.normal_vector(2);
        EXPECT_EQ(a.eval(x)[1], b.eval(x)[1]);
        EXPECT_NE(a.eval(x)[0], b.eval(x)[0]);
    }
}

TEST(Whitening, GradientIdentityByFiniteDifferences) {
    // for g(U) = sum sin(U .* W), grad_Utilde g = L^T grad_U g
    const InducingSet set = random_set(59, 1, 4);
    const Matrix& L = set.cholesky_factor();
    gpode::Rng rng(60);
    const Matrix W = rng.normal_matrix(4, 1);
    auto g_of_u = [&](const Matrix& U) { return (U.array() * W.array()).sin().sum(); };
    auto g_of_ut = [&](const Matrix& Ut) { return g_of_u(gpode::unwhiten(Ut, L)); };

    const Matrix U0 = rng.normal_matrix(4, 1);
    const Matrix Ut0 = gpode::whiten(U0, L);
    auto fd = [](auto&& f, const Matrix& at) {
        Matrix g(at.rows(), at.cols());
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < at.rows(); ++i)
            for (Eigen::Index j = 0; j < at.cols(); ++j) {
                Matrix p = at, m = at;
                p(i, j) += h;
                m(i, j) -= h;
                g(i, j) = (f(p) - f(m)) / (2 * h);
            }
        return g;
    };
    const Matrix grad_u = fd(g_of_u, U0);
    const Matrix grad_ut = fd(g_of_ut, Ut0);
    const Matrix projected = L.transpose() * grad_u;
    EXPECT_LT((grad_ut - projected).norm() / projected.norm(), 1e-5);
}

TEST(StateJacobian, FiniteDifferenceSweepAcrossDimensions) {
    // 50 random instances over D in {1,2,3}, M in {4,9,27}
    int instance = 0;
    for (std::uint64_t rep = 0; rep < 50; ++rep) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rep % 3);
        const Eigen::Index m = (d == 1) ? 4 : (d == 2 ? 9 : 27);
        gpode::Rng rng(700 + rep);
        const Matrix Z = testutil::grid_for(d, m);
        const InducingSet set(Z, KernelParams(1.0, Vector::Constant(d, 1.2)),
                              rng.normal_matrix(m, d));
        const Vector x = rng.normal_vector(d);
        const Matrix J = set.state_jacobian(x);
        for (Eigen::Index out = 0; out < d; ++out) {
            const Vector fd = testutil::numerical_gradient(
                [&](const Vector& q) { return set.eval(q)[out]; }, x, 1e-6);
            for (Eigen::Index e = 0; e < d; ++e)
                EXPECT_LT(std::abs(J(out, e) - fd[e]) / std::max(1e-5, std::abs(fd[e])), 1e-5)
                    << "rep " << rep;
        }
        ++instance;
    }
    EXPECT_EQ(instance, 50);
}
