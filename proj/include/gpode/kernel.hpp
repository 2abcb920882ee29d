#pragma once

#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "gpode/types.hpp"

namespace gpode {

/// Hyperparameters of the scalar squared-exponential kernel
///   k(z, z') = sigma_f^2 * exp(-1/2 sum_j (z_j - z'_j)^2 / l_j^2).
/// sigma_f is held as log(sigma_f) so gradient steps cannot leave the
/// positive domain; lengthscales are per state dimension.
struct KernelParams {
    double log_sigma_f = 0.0;
    Vector lengthscales;  // l_1..l_D, all > 0

    KernelParams() = default;
    KernelParams(double sigma_f, Vector ls) : log_sigma_f(std::log(sigma_f)), lengthscales(std::move(ls)) {
        if (!(sigma_f > 0)) throw std::invalid_argument("KernelParams: sigma_f must be > 0");
        for (Eigen::Index j = 0; j < lengthscales.size(); ++j)
            if (!(lengthscales[j] > 0)) throw std::invalid_argument("KernelParams: lengthscales must be > 0");
    }

    static KernelParams isotropic(double sigma_f, double ell, Eigen::Index dim) {
        return KernelParams(sigma_f, Vector::Constant(dim, ell));
    }

    double sigma_f() const { return std::exp(log_sigma_f); }
    double sigma_f_sq() const { return std::exp(2.0 * log_sigma_f); }
    Eigen::Index dim() const { return lengthscales.size(); }
};

namespace detail {
inline void check_dim(const KernelParams& params, Eigen::Index d, const char* where) {
    if (params.dim() != d)
        throw std::invalid_argument(std::string(where) + ": state dimension " + std::to_string(d) +
                                    " does not match lengthscales of dimension " +
                                    std::to_string(params.dim()));
}
}  // namespace detail

template <typename DerivedA, typename DerivedB>
double eval_kernel(const Eigen::MatrixBase<DerivedA>& z, const Eigen::MatrixBase<DerivedB>& z_prime,
                   const KernelParams& params) {
    if (z.size() != z_prime.size()) throw std::invalid_argument("eval_kernel: argument dimensions differ");
    detail::check_dim(params, z.size(), "eval_kernel");
    double q = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
        const double d = (z[j] - z_prime[j]) / params.lengthscales[j];
        q += d * d;
    }
    return params.sigma_f_sq() * std::exp(-0.5 * q);
}

/// Gradient of eval_kernel with respect to its first argument.
template <typename DerivedA, typename DerivedB>
Vector eval_kernel_grad(const Eigen::MatrixBase<DerivedA>& z, const Eigen::MatrixBase<DerivedB>& z_prime,
                        const KernelParams& params) {
    const double k = eval_kernel(z, z_prime, params);
    Vector g(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j)
        g[j] = -k * (z[j] - z_prime[j]) / (params.lengthscales[j] * params.lengthscales[j]);
    return g;
}

/// Cross kernel matrix between row-stacked point sets A (Ma x D) and B (Mb x D).
inline Matrix kernel_matrix(const Matrix& A, const Matrix& B, const KernelParams& params) {
    if (A.cols() != B.cols()) throw std::invalid_argument("kernel_matrix: point dimensions differ");
    detail::check_dim(params, A.cols(), "kernel_matrix");
    Matrix K(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < B.rows(); ++j) K(i, j) = eval_kernel(A.row(i), B.row(j), params);
    return K;
}

/// Kernel vector k(x, Z) against row-stacked points Z.
inline Vector kernel_vector(const Vector& x, const Matrix& Z, const KernelParams& params) {
    Vector k(Z.rows());
    for (Eigen::Index m = 0; m < Z.rows(); ++m) k[m] = eval_kernel(x.transpose(), Z.row(m), params);
    return k;
}

struct CholeskyResult {
    Matrix L;            // lower triangular, L L^T = K + jitter * I
    double jitter = 0.0;
};

/// Cholesky factorization with escalating diagonal jitter. Attempts run
/// from jitter 0 through 1e-6 * max(diag), a decade per retry.
inline CholeskyResult robust_cholesky(const Matrix& K) {
    if (K.rows() != K.cols()) throw std::invalid_argument("robust_cholesky: matrix not square");
    double scale = K.diagonal().maxCoeff();
    if (!(scale > 0)) scale = 1.0;
    double jitter = 0.0;
    for (int attempt = 0; attempt < 6; ++attempt) {
        Matrix Kj = K;
        if (jitter > 0) Kj.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(Kj);
        if (llt.info() == Eigen::Success) return {Matrix(llt.matrixL()), jitter};
        jitter = (jitter == 0.0) ? 1e-10 * scale : 10.0 * jitter;
    }
    throw FactorizationError("robust_cholesky: matrix of size " + std::to_string(K.rows()) +
                             " not positive definite after max jitter " + std::to_string(jitter / 10.0));
}

}  // namespace gpode
