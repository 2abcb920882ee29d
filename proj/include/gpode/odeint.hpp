#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <utility>
#include <vector>

#include "gpode/field.hpp"
#include "gpode/types.hpp"

namespace gpode {

struct SolverConfig {
    double rtol = 1e-6;
    double atol = 1e-8;
    double initial_step = 0.0;  // 0 = choose automatically
    long max_steps = 100000;
    double max_step = 0.0;      // 0 = unlimited

    void validate() const {
        if (!(rtol > 0) || !(atol > 0)) throw std::invalid_argument("SolverConfig: tolerances must be > 0");
        if (max_steps <= 0) throw std::invalid_argument("SolverConfig: max_steps must be > 0");
    }
};

/// Sensitivities of the state with respect to the inducing vectors and the
/// initial state. Column k = d'*M + m of s_u holds dx/du_{m,d'}, matching
/// the column-major vectorisation of the M x D matrix U.
struct SensitivityState {
    Matrix s_u;   // D x (M*D)
    Matrix s_x0;  // D x D
};

namespace detail {

// Dormand-Prince 5(4) tableau.
constexpr double dp_c2 = 1.0 / 5, dp_c3 = 3.0 / 10, dp_c4 = 4.0 / 5, dp_c5 = 8.0 / 9;
constexpr double dp_a21 = 1.0 / 5;
constexpr double dp_a31 = 3.0 / 40, dp_a32 = 9.0 / 40;
constexpr double dp_a41 = 44.0 / 45, dp_a42 = -56.0 / 15, dp_a43 = 32.0 / 9;
constexpr double dp_a51 = 19372.0 / 6561, dp_a52 = -25360.0 / 2187, dp_a53 = 64448.0 / 6561,
                 dp_a54 = -212.0 / 729;
constexpr double dp_a61 = 9017.0 / 3168, dp_a62 = -355.0 / 33, dp_a63 = 46732.0 / 5247,
                 dp_a64 = 49.0 / 176, dp_a65 = -5103.0 / 18656;
constexpr double dp_b1 = 35.0 / 384, dp_b3 = 500.0 / 1113, dp_b4 = 125.0 / 192,
                 dp_b5 = -2187.0 / 6784, dp_b6 = 11.0 / 84;
constexpr double dp_e1 = 71.0 / 57600, dp_e3 = -71.0 / 16695, dp_e4 = 71.0 / 1920,
                 dp_e5 = -17253.0 / 339200, dp_e6 = 22.0 / 525, dp_e7 = -1.0 / 40;
// Coefficients of the quartic dense-output interpolant.
constexpr double dp_d1 = -12715105075.0 / 11282082432.0, dp_d3 = 87487479700.0 / 32700410799.0,
                 dp_d4 = -10690763975.0 / 1880347072.0, dp_d5 = 701980252875.0 / 199316789632.0,
                 dp_d6 = -1453857185.0 / 822651844.0, dp_d7 = 69997945.0 / 29380423.0;

inline double scaled_rms(const Vector& v, const Vector& scale) {
    const double n = static_cast<double>(v.size());
    return std::sqrt((v.array() / scale.array()).square().sum() / n);
}

/// Hairer-style estimate of a usable first step size.
template <typename Rhs>
double initial_step(Rhs&& rhs, const Vector& y0, const Vector& f0, double t_end,
                    const SolverConfig& cfg) {
    const Vector scale = (cfg.atol + cfg.rtol * y0.array().abs()).matrix();
    const double d0 = scaled_rms(y0, scale);
    const double d1 = scaled_rms(f0, scale);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t_end);
    Vector y1 = y0 + h0 * f0;
    Vector f1(y0.size());
    rhs(y1, f1);
    double d2 = 0.0;
    if (f1.allFinite()) d2 = scaled_rms(f1 - f0, scale) / h0;
    double h1;
    if (std::max(d1, d2) <= 1e-15)
        h1 = std::max(1e-6, h0 * 1e-3);
    else
        h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
    return std::min({100.0 * h0, h1, t_end});
}

/// Adaptive DOPRI5 from y0 at t = 0, states sampled at the requested times
/// through the dense-output interpolant. `times` must be strictly
/// increasing with times[0] >= 0.
template <typename Rhs>
Matrix dopri5(Rhs&& rhs, const Vector& y0, const Vector& times, const SolverConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = y0.size();
    const Eigen::Index num_out = times.size();
    if (num_out == 0) throw std::invalid_argument("dopri5: no output times");
    if (!(times[0] >= 0)) throw std::invalid_argument("dopri5: times must start at >= 0");
    for (Eigen::Index i = 1; i < num_out; ++i)
        if (!(times[i] > times[i - 1])) throw std::invalid_argument("dopri5: times must be increasing");
    const double t_end = times[num_out - 1];

    Matrix out(num_out, n);
    Eigen::Index next_out = 0;
    while (next_out < num_out && times[next_out] == 0.0) out.row(next_out++) = y0.transpose();
    if (next_out == num_out) return out;

    double t = 0.0;
    Vector y = y0;
    Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), y_new(n), y_stage(n), err_vec(n);
    rhs(y, k1);
    if (!k1.allFinite()) throw OdeError(OdeError::Kind::divergence, 0.0, "dopri5: field not finite at x0");

    double h = cfg.initial_step > 0 ? std::min(cfg.initial_step, t_end) : initial_step(rhs, y, k1, t_end, cfg);
    if (cfg.max_step > 0) h = std::min(h, cfg.max_step);

    for (long step = 0; step < cfg.max_steps;) {
        if (h < 1e-14 * std::max(1.0, std::abs(t)))
            throw OdeError(OdeError::Kind::divergence, t, "dopri5: step size underflow at t = " + std::to_string(t));
        if (t + h > t_end) h = t_end - t;

        y_stage = y + h * (dp_a21 * k1);
        rhs(y_stage, k2);
        y_stage = y + h * (dp_a31 * k1 + dp_a32 * k2);
        rhs(y_stage, k3);
        y_stage = y + h * (dp_a41 * k1 + dp_a42 * k2 + dp_a43 * k3);
        rhs(y_stage, k4);
        y_stage = y + h * (dp_a51 * k1 + dp_a52 * k2 + dp_a53 * k3 + dp_a54 * k4);
        rhs(y_stage, k5);
        y_stage = y + h * (dp_a61 * k1 + dp_a62 * k2 + dp_a63 * k3 + dp_a64 * k4 + dp_a65 * k5);
        rhs(y_stage, k6);
        y_new = y + h * (dp_b1 * k1 + dp_b3 * k3 + dp_b4 * k4 + dp_b5 * k5 + dp_b6 * k6);
        rhs(y_new, k7);  // FSAL
        ++step;

        err_vec = h * (dp_e1 * k1 + dp_e3 * k3 + dp_e4 * k4 + dp_e5 * k5 + dp_e6 * k6 + dp_e7 * k7);
        double err = std::numeric_limits<double>::infinity();
        if (y_new.allFinite() && k7.allFinite()) {
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y[i]), std::abs(y_new[i]));
                const double q = err_vec[i] / sc;
                acc += q * q;
            }
            err = std::sqrt(acc / static_cast<double>(n));
        }

        if (err <= 1.0) {
            const double t_new = t + h;
            if (next_out < num_out && times[next_out] <= t_new) {
                // dense output over (t, t_new]
                const Vector ydiff = y_new - y;
                const Vector bspl = h * k1 - ydiff;
                const Vector r4 = ydiff - h * k7 - bspl;
                const Vector r5 = h * (dp_d1 * k1 + dp_d3 * k3 + dp_d4 * k4 + dp_d5 * k5 +
                                       dp_d6 * k6 + dp_d7 * k7);
                while (next_out < num_out && times[next_out] <= t_new + 1e-14 * std::max(1.0, t_new)) {
                    const double theta = (times[next_out] - t) / h;
                    const double theta1 = 1.0 - theta;
                    out.row(next_out++) =
                        (y + theta * (ydiff + theta1 * (bspl + theta * (r4 + theta1 * r5)))).transpose();
                }
            }
            t = t_new;
            y.swap(y_new);
            k1.swap(k7);
            if (y.lpNorm<Eigen::Infinity>() > 1e9)
                throw OdeError(OdeError::Kind::divergence, t, "dopri5: state norm exceeded 1e9 at t = " + std::to_string(t));
            if (next_out >= num_out) return out;
            double fac = 0.9 * std::pow(err > 0 ? err : 1e-10, -0.2);
            h *= std::clamp(fac, 0.2, 10.0);
            if (cfg.max_step > 0) h = std::min(h, cfg.max_step);
        } else {
            double fac = std::isfinite(err) ? 0.9 * std::pow(err, -0.2) : 0.1;
            h *= std::clamp(fac, 0.1, 1.0);
        }
    }
    throw OdeError(OdeError::Kind::budget, t,
                   "dopri5: step budget exhausted at t = " + std::to_string(t));
}

}  // namespace detail

/// Integrate a generic autonomous vector field rhs(y, dydt) from x0 at t = 0.
template <typename Rhs>
    requires std::invocable<Rhs&, const Vector&, Vector&>
Trajectory integrate(Rhs&& rhs, const Vector& x0, const Vector& times, const SolverConfig& cfg = {}) {
    Matrix states = detail::dopri5(rhs, x0, times, cfg);
    return Trajectory(times, std::move(states));
}

/// Integrate the learned field.
inline Trajectory integrate(const InducingSet& field, const Vector& x0, const Vector& times,
                            const SolverConfig& cfg = {}) {
    if (x0.size() != field.dim()) throw std::invalid_argument("integrate: x0 dimension mismatch");
    return integrate([&field](const Vector& y, Vector& dydt) { dydt = field.eval(y); }, x0, times, cfg);
}

/// Jointly integrate the state with its sensitivity system
///   dS_u/dt = J S_u + R,  dS_x0/dt = J S_x0,  S_u(0) = 0,  S_x0(0) = I.
/// Note S_u is dense even though R is block structured: J couples state
/// dimensions as soon as the trajectory bends, so all D x M*D entries are
/// carried. Error control applies the configured tolerances to state and
/// sensitivity components alike.
inline std::pair<Trajectory, std::vector<SensitivityState>> integrate_with_sensitivities(
    const InducingSet& field, const Vector& x0, const Vector& times, const SolverConfig& cfg = {}) {
    const Eigen::Index d = field.dim();
    const Eigen::Index m = field.num_points();
    if (x0.size() != d) throw std::invalid_argument("integrate_with_sensitivities: x0 dimension mismatch");
    const Eigen::Index n_u = d * m * d;  // entries of S_u
    const Eigen::Index n_aug = d + n_u + d * d;

    Vector y0 = Vector::Zero(n_aug);
    y0.head(d) = x0;
    Eigen::Map<Matrix>(y0.data() + d + n_u, d, d).setIdentity();

    const Vector inv_ell_sq =
        field.kernel().lengthscales.array().square().inverse().matrix();

    auto rhs = [&, inv_ell_sq](const Vector& y, Vector& dydt) {
        const Vector x = y.head(d);
        dydt.resize(n_aug);
        const Vector kx = kernel_vector(x, field.locations(), field.kernel());
        dydt.head(d) = field.alpha().transpose() * kx;

        // grad_x k(x, z_i) = -k(x, z_i) * (x - z_i) / ell^2, reusing kx
        Matrix G(m, d);
        for (Eigen::Index i = 0; i < m; ++i)
            G.row(i) = -kx[i] * (x - field.locations().row(i).transpose())
                                    .cwiseProduct(inv_ell_sq)
                                    .transpose();
        const Matrix J = field.alpha().transpose() * G;
        const Vector w = field.solve_kzz(kx);

        Eigen::Map<const Matrix> s_u(y.data() + d, d, m * d);
        Eigen::Map<const Matrix> s_x0(y.data() + d + n_u, d, d);
        Eigen::Map<Matrix> ds_u(dydt.data() + d, d, m * d);
        Eigen::Map<Matrix> ds_x0(dydt.data() + d + n_u, d, d);
        ds_u.noalias() = J * s_u;
        for (Eigen::Index dp = 0; dp < d; ++dp) ds_u.block(dp, dp * m, 1, m) += w.transpose();
        ds_x0.noalias() = J * s_x0;
    };

    Matrix aug = detail::dopri5(rhs, y0, times, cfg);
    Matrix states = aug.leftCols(d);
    std::vector<SensitivityState> sens(static_cast<size_t>(times.size()));
    for (Eigen::Index i = 0; i < times.size(); ++i) {
        const Vector row = aug.row(i).transpose();
        sens[static_cast<size_t>(i)].s_u = Eigen::Map<const Matrix>(row.data() + d, d, m * d);
        sens[static_cast<size_t>(i)].s_x0 = Eigen::Map<const Matrix>(row.data() + d + n_u, d, d);
    }
    return {Trajectory(times, std::move(states)), std::move(sens)};
}

}  // namespace gpode
