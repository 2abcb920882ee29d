#pragma once

#include <utility>

#include "gpode/kernel.hpp"
#include "gpode/types.hpp"

namespace gpode {

/// Equidistant Cartesian product grid, M x D row-stacked. Row-major
/// ordering by dimension index: the last dimension varies fastest.
inline Matrix make_grid(const GridSpec& spec) {
    spec.validate();
    const Eigen::Index d = spec.dim();
    const Eigen::Index m = spec.total();
    Matrix Z(m, d);
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::Index rem = i;
        for (Eigen::Index j = d - 1; j >= 0; --j) {
            const Eigen::Index idx = rem % spec.counts[j];
            rem /= spec.counts[j];
            Z(i, j) = spec.lower[j] + (spec.upper[j] - spec.lower[j]) * static_cast<double>(idx) /
                                          static_cast<double>(spec.counts[j] - 1);
        }
    }
    return Z;
}

/// Column-wise unwhitening U = L * Utilde of the noncentral parameterisation.
inline Matrix unwhiten(const Matrix& u_tilde, const Matrix& L) {
    return L.triangularView<Eigen::Lower>() * u_tilde;
}

/// Column-wise whitening Utilde = L^{-1} U.
inline Matrix whiten(const Matrix& U, const Matrix& L) {
    return L.triangularView<Eigen::Lower>().solve(U);
}

/// GP vector field f(x) = K(x,Z) K(Z,Z)^{-1} vec(U) supported on fixed
/// inducing locations Z. The decomposable kernel k(z,z') I_D means every
/// solve reduces to the scalar M x M system applied per state dimension,
/// so only scalar factors are ever stored. Immutable after construction;
/// parameter updates build a new instance.
class InducingSet {
  public:
    /// From whitened inducing vectors (the optimised parameterisation).
    InducingSet(Matrix locations, KernelParams kernel, const Matrix& u_tilde)
        : z_(std::move(locations)), kernel_(std::move(kernel)) {
        if (u_tilde.rows() != z_.rows()) throw std::invalid_argument("InducingSet: U rows != M");
        if (u_tilde.cols() != z_.cols()) throw std::invalid_argument("InducingSet: U cols != D");
        detail::check_dim(kernel_, z_.cols(), "InducingSet");
        auto chol = robust_cholesky(kernel_matrix(z_, z_, kernel_));
        L_ = std::move(chol.L);
        jitter_ = chol.jitter;
        u_tilde_ = u_tilde;
        u_ = unwhiten(u_tilde_, L_);
        alpha_ = solve_kzz(u_);
    }

    static InducingSet from_unwhitened(Matrix locations, KernelParams kernel, const Matrix& U) {
        InducingSet set(std::move(locations), std::move(kernel), Matrix::Zero(U.rows(), U.cols()));
        set.u_ = U;
        set.u_tilde_ = whiten(U, set.L_);
        set.alpha_ = set.solve_kzz(U);
        return set;
    }

    Eigen::Index num_points() const { return z_.rows(); }
    Eigen::Index dim() const { return z_.cols(); }
    const Matrix& locations() const { return z_; }
    const Matrix& vectors() const { return u_; }
    const Matrix& whitened_vectors() const { return u_tilde_; }
    const KernelParams& kernel() const { return kernel_; }
    const Matrix& cholesky_factor() const { return L_; }
    double jitter() const { return jitter_; }
    /// alpha = k(Z,Z)^{-1} U, cached at construction.
    const Matrix& alpha() const { return alpha_; }

    /// log |k(Z,Z) + jitter I| via the cached factor.
    double log_det_scalar() const { return 2.0 * L_.diagonal().array().log().sum(); }

    /// Field value f(x), one scalar solve reused across dimensions.
    Vector eval(const Vector& x) const {
        return alpha_.transpose() * kernel_vector(x, z_, kernel_);
    }

    /// State Jacobian J(x) with J_{d,e} = sum_m alpha_{m,d} d k(x,z_m)/dx_e.
    Matrix state_jacobian(const Vector& x) const {
        const Eigen::Index d = dim();
        Matrix G(num_points(), d);  // row m = grad_x k(x, z_m)
        for (Eigen::Index m = 0; m < num_points(); ++m)
            G.row(m) = eval_kernel_grad(x, z_.row(m).transpose(), kernel_).transpose();
        return alpha_.transpose() * G;
    }

    /// The M-vector w(x) = k(x,Z) k(Z,Z)^{-1}; canonical representation of
    /// the parameter Jacobian, whose full form is df_d/du_{m,d'} = delta_{dd'} w_m.
    Vector param_weights(const Vector& x) const {
        return solve_kzz(kernel_vector(x, z_, kernel_));
    }

    /// Solve k(Z,Z) X = B through the cached Cholesky factor.
    Matrix solve_kzz(const Matrix& B) const {
        return L_.transpose().triangularView<Eigen::Upper>().solve(
            L_.triangularView<Eigen::Lower>().solve(B));
    }

    InducingSet with_vectors(const Matrix& u_tilde) const {
        InducingSet copy = *this;
        copy.u_tilde_ = u_tilde;
        copy.u_ = unwhiten(u_tilde, copy.L_);
        copy.alpha_ = copy.solve_kzz(copy.u_);
        return copy;
    }

  private:
    Matrix z_;
    KernelParams kernel_;
    Matrix L_;
    double jitter_ = 0.0;
    Matrix u_tilde_;  // M x D, whitened
    Matrix u_;        // M x D
    Matrix alpha_;    // M x D
};

}  // namespace gpode
