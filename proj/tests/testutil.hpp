#pragma once

#include <functional>

#include "gpode/field.hpp"
#include "gpode/model.hpp"
#include "gpode/rng.hpp"
#include "gpode/types.hpp"

namespace testutil {

using gpode::Matrix;
using gpode::Vector;

/// Central finite difference of a scalar-valued function of a flat vector.
inline Vector numerical_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                                 double h = 1e-5) {
    Vector g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vector xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(xp) - f(xm)) / (2.0 * h);
    }
    return g;
}

inline double rel_error(double got, double want) {
    return std::abs(got - want) / std::max(1e-12, std::abs(want));
}

inline double max_rel_error(const Vector& got, const Vector& want, double floor_scale = 0.0) {
    const double floor = std::max(floor_scale, 1e-8 * want.cwiseAbs().maxCoeff());
    double worst = 0.0;
    for (Eigen::Index i = 0; i < got.size(); ++i) {
        const double denom = std::max(std::abs(want[i]), floor);
        worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(denom, 1e-300));
    }
    return worst;
}

/// A small random model instance on a grid. M must be 4 (D=1), 9 (D=2)
/// or 27 (D=3) style products; counts are derived from (dim, m).
struct ModelInstance {
    Matrix Z;
    gpode::ModelParams params;
    gpode::Dataset data;
    gpode::SolverConfig solver;
};

inline Matrix grid_for(Eigen::Index dim, Eigen::Index m, double lo = -2.0, double hi = 2.0) {
    int per_dim = 2;
    while (true) {
        Eigen::Index total = 1;
        for (Eigen::Index j = 0; j < dim; ++j) total *= per_dim;
        if (total == m) break;
        if (total > m) throw std::invalid_argument("grid_for: M is not a per-dimension power");
        ++per_dim;
    }
    gpode::GridSpec spec;
    spec.lower = Vector::Constant(dim, lo);
    spec.upper = Vector::Constant(dim, hi);
    spec.counts.assign(static_cast<size_t>(dim), per_dim);
    return gpode::make_grid(spec);
}

/// Random instance with a mild field so short integrations stay tame.
/// Observations are the simulated trajectory plus seeded noise, so
/// residuals are realistic but small.
inline ModelInstance make_instance(std::uint64_t seed, Eigen::Index dim, Eigen::Index m,
                                   Eigen::Index n_obs = 5, double t_end = 1.0) {
    gpode::Rng rng(seed);
    ModelInstance inst;
    inst.Z = grid_for(dim, m);
    inst.solver.rtol = 1e-10;
    inst.solver.atol = 1e-12;

    inst.params.lengthscales = Vector::Constant(dim, 1.2);
    inst.params.log_sigma_f = std::log(0.9 + 0.2 * rng.uniform());
    inst.params.log_omega = Vector::Constant(dim, std::log(0.3));
    inst.params.u_tilde = 0.4 * rng.normal_matrix(m, dim);
    inst.params.x0_list.push_back(0.5 * rng.normal_vector(dim));

    Vector times(n_obs);
    for (Eigen::Index i = 0; i < n_obs; ++i)
        times[i] = t_end * static_cast<double>(i + 1) / static_cast<double>(n_obs);

    const gpode::InducingSet field(inst.Z, inst.params.kernel(), inst.params.u_tilde);
    gpode::Trajectory traj = gpode::integrate(field, inst.params.x0_list[0], times, inst.solver);
    traj.states += 0.1 * rng.normal_matrix(n_obs, dim);
    inst.data.series.push_back(gpode::Trajectory(times, traj.states));
    return inst;
}

}  // namespace testutil
