#include <gtest/gtest.h>

#include "gpode/kernel.hpp"
#include "gpode/rng.hpp"
#include "testutil.hpp"

using gpode::KernelParams;
using gpode::Matrix;
using gpode::Vector;

namespace {

KernelParams iso(double sigma_f, double ell, Eigen::Index d) {
    return KernelParams::isotropic(sigma_f, ell, d);
}

}  // namespace

TEST(KernelParams, LogRoundTripExact) {
    KernelParams p = iso(1.7, 0.8, 2);
    const double linear = p.sigma_f();
    KernelParams q(linear, p.lengthscales);
    EXPECT_DOUBLE_EQ(q.log_sigma_f, std::log(linear));
    EXPECT_NEAR(q.sigma_f(), 1.7, 1e-15);
}

TEST(EvalKernel, SelfValueIsSigmaSq) {
    Vector z(3);
    z << 0.3, -1.0, 2.0;
    EXPECT_DOUBLE_EQ(gpode::eval_kernel(z, z, iso(1.2, 0.5, 3)), 1.44);
}

TEST(EvalKernel, UnitDistanceExample) {
    Vector z(2), zp(2);
    z << 1, 0;
    zp << 0, 0;
    EXPECT_NEAR(gpode::eval_kernel(z, zp, iso(1.0, 1.0, 2)), std::exp(-0.5), 1e-12);
    EXPECT_NEAR(gpode::eval_kernel(z, zp, iso(1.0, 1.0, 2)), 0.606531, 1e-6);
}

TEST(EvalKernel, DecaysToZero) {
    Vector z(2), zp(2);
    z << 100, 0;
    zp << 0, 0;
    EXPECT_LT(gpode::eval_kernel(z, zp, iso(1.0, 1.0, 2)), 1e-300);
}

TEST(EvalKernel, SymmetryAndStationarity) {
    gpode::Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        // quantise inputs so integer shifts stay exactly representable
        Vector z = (rng.normal_vector(3) * std::exp2(20)).array().round() / std::exp2(20);
        Vector zp = (rng.normal_vector(3) * std::exp2(20)).array().round() / std::exp2(20);
        Vector shift(3);
        for (Eigen::Index j = 0; j < 3; ++j)
            shift[j] = static_cast<double>(1 + rng.next_u64() % 8) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        KernelParams p(0.5 + rng.uniform(), (rng.normal_vector(3).array().abs() + 0.2).matrix());
        EXPECT_DOUBLE_EQ(gpode::eval_kernel(z, zp, p), gpode::eval_kernel(zp, z, p));
        EXPECT_DOUBLE_EQ(gpode::eval_kernel(z, zp, p),
                         gpode::eval_kernel((z + shift).eval(), (zp + shift).eval(), p));
        // arbitrary real shifts agree up to rounding of the inputs
        const Vector real_shift = rng.normal_vector(3);
        EXPECT_NEAR(gpode::eval_kernel((z + real_shift).eval(), (zp + real_shift).eval(), p),
                    gpode::eval_kernel(z, zp, p), 1e-12 * p.sigma_f_sq());
    }
}

TEST(EvalKernel, DimensionMismatchThrows) {
    Vector z(2), zp(3);
    z.setZero();
    zp.setZero();
    EXPECT_THROW(gpode::eval_kernel(z, zp, iso(1, 1, 2)), std::invalid_argument);
    Vector z3(3);
    z3.setZero();
    EXPECT_THROW(gpode::eval_kernel(z3, zp, iso(1, 1, 2)), std::invalid_argument);
}

TEST(EvalKernelGrad, ZeroAtCoincidentPoints) {
    Vector z(2);
    z << 0.4, -0.7;
    EXPECT_EQ(gpode::eval_kernel_grad(z, z, iso(2.0, 0.7, 2)).norm(), 0.0);
}

TEST(EvalKernelGrad, UnitDistanceExample) {
    Vector z(2), zp(2);
    z << 1, 0;
    zp << 0, 0;
    const Vector g = gpode::eval_kernel_grad(z, zp, iso(1.0, 1.0, 2));
    EXPECT_NEAR(g[0], -std::exp(-0.5), 1e-12);
    EXPECT_DOUBLE_EQ(g[1], 0.0);
}

TEST(EvalKernelGrad, MatchesFiniteDifferences) {
    gpode::Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.next_u64() % 3);
        Vector z = rng.normal_vector(d), zp = rng.normal_vector(d);
        KernelParams p(0.5 + rng.uniform(), (rng.normal_vector(d).array().abs() + 0.3).matrix());
        const Vector analytic = gpode::eval_kernel_grad(z, zp, p);
        const Vector fd = testutil::numerical_gradient(
            [&](const Vector& x) { return gpode::eval_kernel(x, zp, p); }, z, 1e-6);
        for (Eigen::Index j = 0; j < d; ++j)
            EXPECT_LT(std::abs(analytic[j] - fd[j]) / std::max(1e-8, std::abs(fd[j])), 1e-6)
                << "trial " << trial << " dim " << j;
    }
}

TEST(KernelMatrix, SinglePoint) {
    Matrix A(1, 2);
    A << 0.5, -0.5;
    const Matrix K = gpode::kernel_matrix(A, A, iso(1.3, 1.0, 2));
    ASSERT_EQ(K.rows(), 1);
    EXPECT_DOUBLE_EQ(K(0, 0), 1.69);
}

TEST(KernelMatrix, SymmetricWithBoundedEntries) {
    gpode::Rng rng(3);
    Matrix A = rng.normal_matrix(6, 2);
    const double sf = 1.5;
    const Matrix K = gpode::kernel_matrix(A, A, iso(sf, 0.8, 2));
    EXPECT_LT((K - K.transpose()).lpNorm<Eigen::Infinity>(), 1e-15);
    for (Eigen::Index i = 0; i < K.rows(); ++i)
        for (Eigen::Index j = 0; j < K.cols(); ++j) {
            EXPECT_GT(K(i, j), 0.0);
            EXPECT_LE(K(i, j), sf * sf + 1e-15);
        }
}

TEST(KernelMatrix, CollinearEquispacedMatchesScalarEvals) {
    // three collinear points spaced by the lengthscale
    const double ell = 0.7;
    Matrix A(3, 1);
    A << 0.0, ell, 2 * ell;
    const Matrix K = gpode::kernel_matrix(A, A, iso(1.0, ell, 1));
    EXPECT_NEAR(K(0, 1), std::exp(-0.5), 1e-15);
    EXPECT_NEAR(K(1, 2), std::exp(-0.5), 1e-15);
    EXPECT_NEAR(K(0, 2), std::exp(-2.0), 1e-15);
    for (Eigen::Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(K(i, i), 1.0);
}

TEST(RobustCholesky, IdentityNeedsNoJitter) {
    const auto res = gpode::robust_cholesky(Matrix::Identity(4, 4));
    EXPECT_EQ(res.jitter, 0.0);
    EXPECT_LT((res.L - Matrix::Identity(4, 4)).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(RobustCholesky, WellSeparatedGridReconstructs) {
    Matrix Z(5, 1);
    Z << 0, 1, 2, 3, 4;
    const Matrix K = gpode::kernel_matrix(Z, Z, iso(1.0, 0.5, 1));
    const auto res = gpode::robust_cholesky(K);
    EXPECT_EQ(res.jitter, 0.0);
    const Matrix recon = res.L * res.L.transpose();
    EXPECT_LT((recon - K).lpNorm<Eigen::Infinity>() / K.lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(RobustCholesky, DuplicateRowsEscalatesJitter) {
    Matrix Z(4, 1);
    Z << 0.0, 0.0, 1.0, 2.0;  // duplicated inducing point
    const Matrix K = gpode::kernel_matrix(Z, Z, iso(1.0, 1.0, 1));
    try {
        const auto res = gpode::robust_cholesky(K);
        EXPECT_GT(res.jitter, 0.0);
        const Matrix target = K + res.jitter * Matrix::Identity(4, 4);
        EXPECT_LT((res.L * res.L.transpose() - target).lpNorm<Eigen::Infinity>(),
                  1e-10 * K.lpNorm<Eigen::Infinity>());
    } catch (const gpode::FactorizationError& e) {
        EXPECT_NE(std::string(e.what()).find("not positive definite"), std::string::npos);
    }
}

TEST(RobustCholesky, ReconstructionInvariant) {
    gpode::Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix Z = 2.0 * rng.normal_matrix(8, 2);
        const Matrix K = gpode::kernel_matrix(Z, Z, iso(1.0 + rng.uniform(), 0.9, 2));
        const auto res = gpode::robust_cholesky(K);
        const Matrix target = K + res.jitter * Matrix::Identity(8, 8);
        EXPECT_LT((res.L * res.L.transpose() - target).lpNorm<Eigen::Infinity>(),
                  1e-10 * K.lpNorm<Eigen::Infinity>());
    }
}

TEST(RobustCholesky, IndefiniteMatrixFails) {
    Matrix K(2, 2);
    K << 1.0, 2.0, 2.0, 1.0;  // eigenvalues 3, -1
    EXPECT_THROW(gpode::robust_cholesky(K), gpode::FactorizationError);
}
