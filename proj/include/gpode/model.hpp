#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>
#include <utility>
#include <vector>

#include "gpode/field.hpp"
#include "gpode/kernel.hpp"
#include "gpode/odeint.hpp"
#include "gpode/optim.hpp"
#include "gpode/rng.hpp"
#include "gpode/types.hpp"

namespace gpode {

/// Full optimisable state of the model. Lengthscales are carried here but
/// stay fixed during gradient optimisation; they are selected by
/// cross-validation. Noise scales and the signal deviation live in the log
/// domain so positivity survives unconstrained steps.
struct ModelParams {
    std::vector<Vector> x0_list;  // one initial state per series
    Matrix u_tilde;               // M x D whitened inducing vectors
    double log_sigma_f = 0.0;
    Vector lengthscales;
    Vector log_omega;             // per-dimension log noise std

    Eigen::Index dim() const { return lengthscales.size(); }
    Eigen::Index num_inducing() const { return u_tilde.rows(); }
    Eigen::Index num_series() const { return static_cast<Eigen::Index>(x0_list.size()); }
    Vector omega() const { return log_omega.array().exp(); }

    KernelParams kernel() const {
        KernelParams k;
        k.log_sigma_f = log_sigma_f;
        k.lengthscales = lengthscales;
        return k;
    }

    Eigen::Index flat_size() const {
        return num_series() * dim() + num_inducing() * dim() + 1 + dim();
    }

    /// Layout: [x0 per series | vec(u_tilde) column-major | log_sigma_f | log_omega].
    Vector flatten() const {
        Vector v(flat_size());
        Eigen::Index at = 0;
        for (const auto& x0 : x0_list) {
            v.segment(at, x0.size()) = x0;
            at += x0.size();
        }
        v.segment(at, u_tilde.size()) = Eigen::Map<const Vector>(u_tilde.data(), u_tilde.size());
        at += u_tilde.size();
        v[at++] = log_sigma_f;
        v.segment(at, log_omega.size()) = log_omega;
        return v;
    }

    /// Inverse of flatten, using this instance for the shape.
    ModelParams unflatten(const Vector& v) const {
        if (v.size() != flat_size()) throw std::invalid_argument("ModelParams: flat size mismatch");
        ModelParams p = *this;
        Eigen::Index at = 0;
        const Eigen::Index d = dim();
        for (auto& x0 : p.x0_list) {
            x0 = v.segment(at, d);
            at += d;
        }
        p.u_tilde = Eigen::Map<const Matrix>(v.data() + at, num_inducing(), d);
        at += u_tilde.size();
        p.log_sigma_f = v[at++];
        p.log_omega = v.segment(at, d);
        return p;
    }
};

namespace detail {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

// Whitened prior: vec(Utilde) ~ N(0, I). The kernel log determinant does
// not appear; the Jacobian of U = L Utilde cancels it exactly, which is
// what keeps the MAP proper (a determinant term would reward sigma_f -> 0
// without bound).
inline double prior_term(const ModelParams& params) {
    return -0.5 * params.u_tilde.squaredNorm();
}

}  // namespace detail

/// Log posterior up to additive constants: the whitened prior term
/// -1/2 ||Utilde||^2 plus the Gaussian data term from forward-simulated
/// responses. The -(ND/2) log 2pi constant is dropped everywhere. A
/// diverging integration yields -inf.
inline double log_posterior(const ModelParams& params, const Dataset& data, const Matrix& Z,
                            const SolverConfig& cfg) {
    try {
        const InducingSet ind(Z, params.kernel(), params.u_tilde);
        double value = detail::prior_term(params);
        const Vector omega_sq = (2.0 * params.log_omega).array().exp();
        const double sum_log_omega = params.log_omega.sum();
        for (Eigen::Index s = 0; s < params.num_series(); ++s) {
            const Trajectory& obs = data.series[static_cast<size_t>(s)];
            const Trajectory sim = integrate(ind, params.x0_list[static_cast<size_t>(s)], obs.times, cfg);
            const Matrix resid = obs.states - sim.states;
            for (Eigen::Index j = 0; j < params.dim(); ++j)
                value -= 0.5 * resid.col(j).squaredNorm() / omega_sq[j];
            value -= static_cast<double>(obs.size()) * sum_log_omega;
        }
        return value;
    } catch (const OdeError&) {
        return detail::neg_inf;
    } catch (const FactorizationError&) {
        return detail::neg_inf;  // degenerate kernel at an optimizer trial point
    }
}

/// Value and flat gradient in one pass. Sensitivities supply the data-term
/// derivatives with respect to U and x0; the U gradient is projected to the
/// whitened domain as L^T grad_U, where the prior contributes -Utilde
/// directly. The log sigma_f component uses a forward finite difference
/// with delta = 1e-4 on sigma_f, chained into the log domain. Noise
/// gradients are analytic. Returns (-inf, zeros) if integration diverges.
inline std::pair<double, Vector> log_posterior_with_gradient(const ModelParams& params,
                                                             const Dataset& data, const Matrix& Z,
                                                             const SolverConfig& cfg) {
    const Eigen::Index d = params.dim();
    const Eigen::Index m = params.num_inducing();
    Vector grad = Vector::Zero(params.flat_size());
    try {
        const InducingSet ind(Z, params.kernel(), params.u_tilde);
        double value = detail::prior_term(params);

        const Vector omega_sq = (2.0 * params.log_omega).array().exp();
        const double sum_log_omega = params.log_omega.sum();

        Vector grad_u_flat = Vector::Zero(m * d);  // data term, w.r.t. vec(U)
        Vector sum_sq_resid = Vector::Zero(d);
        double n_total = 0.0;
        Eigen::Index at_x0 = 0;

        for (Eigen::Index s = 0; s < params.num_series(); ++s) {
            const Trajectory& obs = data.series[static_cast<size_t>(s)];
            auto [sim, sens] =
                integrate_with_sensitivities(ind, params.x0_list[static_cast<size_t>(s)], obs.times, cfg);
            const Matrix resid = obs.states - sim.states;

            Vector grad_x0 = Vector::Zero(d);
            for (Eigen::Index i = 0; i < obs.size(); ++i) {
                const Vector weighted = (resid.row(i).transpose().array() / omega_sq.array()).matrix();
                grad_u_flat.noalias() += sens[static_cast<size_t>(i)].s_u.transpose() * weighted;
                grad_x0.noalias() += sens[static_cast<size_t>(i)].s_x0.transpose() * weighted;
            }
            grad.segment(at_x0, d) = grad_x0;
            at_x0 += d;

            for (Eigen::Index j = 0; j < d; ++j) {
                const double ssq = resid.col(j).squaredNorm();
                sum_sq_resid[j] += ssq;
                value -= 0.5 * ssq / omega_sq[j];
            }
            value -= static_cast<double>(obs.size()) * sum_log_omega;
            n_total += static_cast<double>(obs.size());
        }

        // grad w.r.t. U: data term minus K(Z,Z)^{-1} u, then whitened
        Matrix grad_u = Eigen::Map<Matrix>(grad_u_flat.data(), m, d);
        grad_u -= ind.alpha();
        const Matrix grad_u_tilde = ind.cholesky_factor().transpose() * grad_u;
        Eigen::Index at = params.num_series() * d;
        grad.segment(at, m * d) = Eigen::Map<const Vector>(grad_u_tilde.data(), m * d);
        at += m * d;

        // log sigma_f by forward difference on sigma_f
        const double delta = 1e-4;
        const double sigma_f = std::exp(params.log_sigma_f);
        ModelParams bumped = params;
        bumped.log_sigma_f = std::log(sigma_f + delta);
        const double value_bumped = log_posterior(bumped, data, Z, cfg);
        grad[at++] = std::isfinite(value_bumped) ? (value_bumped - value) / delta * sigma_f : 0.0;

        // log omega: (sum r^2 / omega^3 - N / omega) * omega
        for (Eigen::Index j = 0; j < d; ++j) grad[at + j] = sum_sq_resid[j] / omega_sq[j] - n_total;

        return {value, std::move(grad)};
    } catch (const OdeError&) {
        return {detail::neg_inf, Vector::Zero(params.flat_size())};
    } catch (const FactorizationError&) {
        return {detail::neg_inf, Vector::Zero(params.flat_size())};
    }
}

/// Inducing-vector initialisation from empirical one-step differences
/// dy_i = y_i - y_{i-1}, conditioned onto the grid as
/// U0 = K(Z,P) K(P,P)^{-1} c dy with the anchor points P at the earlier
/// sample of each difference. The scale c is picked from a fixed candidate
/// set by posterior value.
inline Matrix init_inducing(const Dataset& data, const Matrix& Z, const ModelParams& base,
                            const SolverConfig& cfg) {
    const Eigen::Index d = data.dim();
    Eigen::Index q = 0;
    for (const auto& s : data.series) {
        if (s.size() < 2) throw std::invalid_argument("init_inducing: series needs >= 2 points");
        q += s.size() - 1;
    }
    Matrix anchors(q, d), diffs(q, d);
    Eigen::Index at = 0;
    for (const auto& s : data.series) {
        for (Eigen::Index i = 1; i < s.size(); ++i) {
            anchors.row(at) = s.states.row(i - 1);
            diffs.row(at) = s.states.row(i) - s.states.row(i - 1);
            ++at;
        }
    }

    const KernelParams kernel = base.kernel();
    const Matrix k_zp = kernel_matrix(Z, anchors, kernel);
    const auto chol_pp = robust_cholesky(kernel_matrix(anchors, anchors, kernel));
    const Matrix solved = chol_pp.L.transpose().triangularView<Eigen::Upper>().solve(
        chol_pp.L.triangularView<Eigen::Lower>().solve(diffs));
    const Matrix u0 = k_zp * solved;  // M x D, unit scale

    const auto chol_zz = robust_cholesky(kernel_matrix(Z, Z, kernel));
    const Matrix u0_tilde = whiten(u0, chol_zz.L);

    static constexpr double scale_candidates[] = {0.25, 0.5, 1.0, 2.0, 4.0};
    double best_value = detail::neg_inf;
    double best_scale = 1.0;
    for (double c : scale_candidates) {
        ModelParams candidate = base;
        candidate.u_tilde = c * u0_tilde;
        const double v = log_posterior(candidate, data, Z, cfg);
        if (v > best_value) {
            best_value = v;
            best_scale = c;
        }
    }
    return best_scale * u0_tilde;
}

struct FitConfig {
    int restarts = 100;
    double perturbation = 0.1;     // std of whitened perturbations
    std::uint64_t seed = 0;
    double sigma_f_init = 1.0;
    double omega_init_fraction = 0.2;  // omega0 = fraction * per-dimension data std
    int threads = 0;                   // 0 = hardware concurrency
    OptimConfig optim;
    SolverConfig solver;
};

struct RestartRecord {
    double initial_value;
    double final_value;
    OptimStatus status;
    int iterations;
    bool failed;  // diverged everywhere / non-finite start
};

struct FitDiagnostics {
    std::vector<RestartRecord> restarts;
    int failures = 0;
    int best_index = -1;
    double best_value = detail::neg_inf;
};

/// A fitted model: everything needed to evaluate the posterior and predict.
struct Model {
    Matrix Z;
    ModelParams params;
    SolverConfig solver;
    double log_posterior_value = detail::neg_inf;
};

struct FitResult {
    Model model;
    FitDiagnostics diagnostics;
};

namespace detail {

inline ModelParams initial_params(const Dataset& data, const Matrix& Z, const Vector& lengthscales,
                                  const FitConfig& cfg) {
    const Eigen::Index d = data.dim();
    ModelParams p;
    p.lengthscales = lengthscales;
    p.log_sigma_f = std::log(cfg.sigma_f_init);
    p.u_tilde = Matrix::Zero(Z.rows(), d);
    for (const auto& s : data.series) p.x0_list.push_back(s.states.row(0).transpose());

    // pooled per-dimension standard deviation sets the noise starting point
    Vector mean = Vector::Zero(d), sq = Vector::Zero(d);
    double n = 0;
    for (const auto& s : data.series) {
        mean += s.states.colwise().sum().transpose();
        sq += s.states.array().square().colwise().sum().matrix().transpose();
        n += static_cast<double>(s.size());
    }
    mean /= n;
    const Vector var = (sq / n - mean.cwiseProduct(mean)).cwiseMax(1e-12);
    p.log_omega = (cfg.omega_init_fraction * var.cwiseSqrt()).cwiseMax(1e-3).array().log();
    return p;
}

template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

/// MAP estimation: L-BFGS ascent on the log posterior from the initialised
/// inducing vectors, restarted from seeded random perturbations. Restart 0
/// runs unperturbed. Restarts are independent and run in parallel; the
/// reduction picks the highest final posterior (lowest index on ties), so
/// results are deterministic for a fixed seed regardless of scheduling.
inline FitResult fit(const Dataset& data, const Matrix& Z, const Vector& lengthscales,
                     const FitConfig& cfg) {
    data.validate();
    if (cfg.restarts < 1) throw std::invalid_argument("fit: restarts must be >= 1");

    const ModelParams base = detail::initial_params(data, Z, lengthscales, cfg);
    const Matrix u_tilde0 = init_inducing(data, Z, base, cfg.solver);
    const Rng root(cfg.seed);

    struct Slot {
        RestartRecord record{};
        Vector x;
    };
    std::vector<Slot> slots(static_cast<size_t>(cfg.restarts));

    detail::parallel_for(cfg.restarts, cfg.threads, [&](int r) {
        Slot& slot = slots[static_cast<size_t>(r)];
        ModelParams start = base;
        start.u_tilde = u_tilde0;
        if (r > 0) {
            Rng rng = root.fork(static_cast<std::uint64_t>(r));
            start.u_tilde += cfg.perturbation * rng.normal_matrix(u_tilde0.rows(), u_tilde0.cols());
        }
        const Vector flat0 = start.flatten();
        const double v0 = log_posterior(base.unflatten(flat0), data, Z, cfg.solver);
        slot.record.initial_value = v0;
        if (!std::isfinite(v0)) {
            slot.record.failed = true;
            slot.record.final_value = detail::neg_inf;
            slot.record.status = OptimStatus::line_search_failure;
            return;
        }
        auto objective = [&](const Vector& x, Vector& g) {
            auto [value, grad] = log_posterior_with_gradient(base.unflatten(x), data, Z, cfg.solver);
            g = std::move(grad);
            return value;
        };
        const MaximizeResult res = maximize(objective, flat0, cfg.optim);
        slot.record.final_value = res.value;
        slot.record.status = res.status;
        slot.record.iterations = static_cast<int>(res.trace.size());
        slot.record.failed = !std::isfinite(res.value);
        slot.x = res.x;
    });

    FitResult out;
    for (int r = 0; r < cfg.restarts; ++r) {
        const auto& slot = slots[static_cast<size_t>(r)];
        out.diagnostics.restarts.push_back(slot.record);
        if (slot.record.failed) {
            ++out.diagnostics.failures;
            continue;
        }
        if (slot.record.final_value > out.diagnostics.best_value) {
            out.diagnostics.best_value = slot.record.final_value;
            out.diagnostics.best_index = r;
        }
    }
    if (out.diagnostics.best_index < 0) throw FitError("fit: every restart failed to produce a finite posterior");

    const Slot& best = slots[static_cast<size_t>(out.diagnostics.best_index)];
    out.model.Z = Z;
    out.model.params = base.unflatten(best.x);
    out.model.solver = cfg.solver;
    out.model.log_posterior_value = best.record.final_value;
    return out;
}

inline FitResult fit(const Dataset& data, const GridSpec& grid, const Vector& lengthscales,
                     const FitConfig& cfg) {
    return fit(data, make_grid(grid), lengthscales, cfg);
}

/// Integrate the fitted field over the requested times, starting from the
/// fitted initial state of `series_index` unless `from_state` overrides it.
inline Trajectory predict(const Model& model, const Vector& times, const Vector* from_state = nullptr,
                          Eigen::Index series_index = 0) {
    const InducingSet ind(model.Z, model.params.kernel(), model.params.u_tilde);
    const Vector x0 = from_state ? *from_state : model.params.x0_list.at(static_cast<size_t>(series_index));
    return integrate(ind, x0, times, model.solver);
}

struct LengthscaleCandidate {
    double ell;
    double validation_rmse;
    bool failed;
};

struct LengthscaleSelection {
    double best_ell = 0.0;
    std::vector<LengthscaleCandidate> table;
};

/// Cross-validated lengthscale selection: fit on the first 80% of each
/// series' time range, score RMSE on the held-out tail, ties broken toward
/// the larger (smoother) lengthscale.
inline LengthscaleSelection select_lengthscale(const Dataset& data, const GridSpec& grid,
                                               std::vector<double> candidates, const FitConfig& cfg,
                                               double train_fraction = 0.8) {
    if (candidates.empty()) throw std::invalid_argument("select_lengthscale: no candidates");
    std::sort(candidates.begin(), candidates.end());
    const Eigen::Index d = data.dim();

    Dataset train;
    struct Holdout {
        size_t series;
        Vector times;
        Matrix states;
    };
    std::vector<Holdout> holdouts;
    for (size_t s = 0; s < data.series.size(); ++s) {
        const Trajectory& full = data.series[s];
        const double t_split =
            full.times[0] + train_fraction * (full.times[full.size() - 1] - full.times[0]);
        Eigen::Index n_train = 0;
        while (n_train < full.size() && full.times[n_train] <= t_split) ++n_train;
        n_train = std::max<Eigen::Index>(n_train, 2);
        if (n_train >= full.size())
            throw std::invalid_argument("select_lengthscale: series too short for a holdout split");
        train.series.emplace_back(full.times.head(n_train), full.states.topRows(n_train));
        holdouts.push_back({s, full.times.tail(full.size() - n_train),
                            full.states.bottomRows(full.size() - n_train)});
    }

    LengthscaleSelection sel;
    double best_rmse = std::numeric_limits<double>::infinity();
    for (double ell : candidates) {
        LengthscaleCandidate entry{ell, std::numeric_limits<double>::quiet_NaN(), true};
        try {
            const FitResult res = fit(train, grid, Vector::Constant(d, ell), cfg);
            double sq_sum = 0.0;
            double count = 0.0;
            for (const auto& h : holdouts) {
                const Trajectory pred =
                    predict(res.model, h.times, nullptr, static_cast<Eigen::Index>(h.series));
                sq_sum += (pred.states - h.states).squaredNorm();
                count += static_cast<double>(h.states.size());
            }
            entry.validation_rmse = std::sqrt(sq_sum / count);
            entry.failed = false;
        } catch (const FitError&) {
        } catch (const OdeError&) {
        }
        sel.table.push_back(entry);
        if (!entry.failed && entry.validation_rmse <= best_rmse) {  // <= prefers larger ell
            best_rmse = entry.validation_rmse;
            sel.best_ell = entry.ell;
        }
    }
    if (!(sel.best_ell > 0)) throw FitError("select_lengthscale: every candidate failed");
    return sel;
}

}  // namespace gpode
