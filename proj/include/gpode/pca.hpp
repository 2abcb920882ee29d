#pragma once

#include <Eigen/Eigenvalues>

#include "gpode/types.hpp"

namespace gpode {

/// Principal component projection from P original dimensions to a
/// d-dimensional latent space. Data are centred; no whitening.
struct PcaProjection {
    Vector mean;         // P
    Matrix components;   // P x d, orthonormal columns
    Vector explained;    // d explained-variance ratios, non-increasing

    Eigen::Index original_dim() const { return mean.size(); }
    Eigen::Index latent_dim() const { return components.cols(); }

    Matrix project(const Matrix& X) const { return (X.rowwise() - mean.transpose()) * components; }
    Matrix reconstruct(const Matrix& L) const {
        return (L * components.transpose()).rowwise() + mean.transpose();
    }
    Vector project(const Vector& x) const { return components.transpose() * (x - mean); }
    Vector reconstruct(const Vector& l) const { return mean + components * l; }
};

/// Covariance eigendecomposition PCA keeping the top `d` directions.
/// Component signs are fixed so the largest-magnitude loading is positive.
inline PcaProjection pca_fit(const Matrix& data, Eigen::Index d) {
    const Eigen::Index n = data.rows();
    const Eigen::Index p = data.cols();
    if (d < 1 || d > std::min(n, p))
        throw std::invalid_argument("pca_fit: latent dimension must satisfy 1 <= d <= min(N, P)");

    PcaProjection out;
    out.mean = data.colwise().mean().transpose();
    const Matrix centered = data.rowwise() - out.mean.transpose();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigendecomposition failed");

    // eigenvalues ascend; take the top d in descending order
    const double total = eig.eigenvalues().cwiseMax(0.0).sum();
    out.components.resize(p, d);
    out.explained.resize(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        Vector v = eig.eigenvectors().col(p - 1 - i);
        Eigen::Index argmax;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v[argmax] < 0) v = -v;
        out.components.col(i) = v;
        out.explained[i] = total > 0 ? std::max(0.0, eig.eigenvalues()[p - 1 - i]) / total : 0.0;
    }
    return out;
}

}  // namespace gpode
