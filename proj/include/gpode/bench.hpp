#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gpode/io.hpp"
#include "gpode/model.hpp"
#include "gpode/odeint.hpp"
#include "gpode/pca.hpp"
#include "gpode/rng.hpp"
#include "gpode/types.hpp"

namespace gpode {

enum class BenchSystem { vdp, fhn, lv };

inline const char* to_string(BenchSystem s) {
    switch (s) {
        case BenchSystem::vdp: return "vdp";
        case BenchSystem::fhn: return "fhn";
        case BenchSystem::lv: return "lv";
    }
    return "unknown";
}

inline BenchSystem parse_bench_system(const std::string& name) {
    if (name == "vdp") return BenchSystem::vdp;
    if (name == "fhn") return BenchSystem::fhn;
    if (name == "lv") return BenchSystem::lv;
    throw std::invalid_argument("unknown system '" + name + "' (valid: vdp, fhn, lv)");
}

inline Vector eval_true_field(BenchSystem sys, const Vector& x) {
    if (x.size() != 2) throw std::invalid_argument("eval_true_field: benchmark systems are 2-dimensional");
    Vector f(2);
    switch (sys) {
        case BenchSystem::vdp:
            f[0] = x[1];
            f[1] = (1.0 - x[0] * x[0]) * x[1] - x[0];
            break;
        case BenchSystem::fhn:
            f[0] = 3.0 * (x[0] - x[0] * x[0] * x[0] / 3.0 + x[1]);
            f[1] = (0.2 - 3.0 * x[0] - 0.2 * x[1]) / 3.0;
            break;
        case BenchSystem::lv:
            f[0] = 1.5 * x[0] - x[0] * x[1];
            f[1] = -3.0 * x[1] + x[0] * x[1];
            break;
    }
    return f;
}

/// Reference initial states used throughout the experiments.
inline Vector default_initial_state(BenchSystem sys) {
    Vector x0(2);
    switch (sys) {
        case BenchSystem::vdp: x0 << 2.0, 0.0; break;
        case BenchSystem::fhn: x0 << -1.0, 1.0; break;
        case BenchSystem::lv: x0 << 5.0, 1.0; break;
    }
    return x0;
}

inline Trajectory simulate_benchmark(BenchSystem sys, const Vector& x0, const Vector& times,
                                     const SolverConfig& cfg = {}) {
    return integrate([sys](const Vector& y, Vector& dydt) { dydt = eval_true_field(sys, y); }, x0, times,
                     cfg);
}

/// Cycle period by first return to an anchor on the attractor. VDP and FHN
/// settle for 30 time units before anchoring; LV orbits are closed so the
/// initial state itself is the anchor. The return time is refined by a
/// parabolic fit of the squared distance.
inline double find_period(BenchSystem sys, const Vector& x0) {
    SolverConfig cfg;
    cfg.rtol = 1e-9;
    cfg.atol = 1e-11;

    Vector anchor = x0;
    if (sys != BenchSystem::lv) {
        Vector settle(1);
        settle << 30.0;
        anchor = simulate_benchmark(sys, x0, settle, cfg).states.row(0).transpose();
    }

    const double dt = 2e-3;
    const double t_max = 60.0;
    const Eigen::Index n = static_cast<Eigen::Index>(t_max / dt);
    Vector times(n);
    for (Eigen::Index i = 0; i < n; ++i) times[i] = dt * static_cast<double>(i + 1);
    const Trajectory traj = simulate_benchmark(sys, anchor, times, cfg);

    const double scale = std::max(anchor.norm(), 1e-3);
    std::vector<double> dist_sq(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        dist_sq[static_cast<size_t>(i)] = (traj.states.row(i).transpose() - anchor).squaredNorm();

    bool departed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = std::sqrt(dist_sq[static_cast<size_t>(i)]);
        if (!departed) {
            if (d > 0.2 * scale) departed = true;
            continue;
        }
        if (d < 0.01 * scale) {
            Eigen::Index j = i;
            while (j + 1 < n && dist_sq[static_cast<size_t>(j + 1)] < dist_sq[static_cast<size_t>(j)]) ++j;
            if (j == 0 || j + 1 >= n) return times[j];
            // vertex of the parabola through the three squared distances
            const double dm = dist_sq[static_cast<size_t>(j - 1)];
            const double d0 = dist_sq[static_cast<size_t>(j)];
            const double dp = dist_sq[static_cast<size_t>(j + 1)];
            const double denom = dm - 2.0 * d0 + dp;
            const double shift = denom > 0 ? 0.5 * (dm - dp) / denom : 0.0;
            return times[j] + shift * dt;
        }
    }
    throw std::runtime_error(std::string("find_period: no return detected for ") + to_string(sys));
}

/// Equispaced sample times covering `cycles` periods with n points,
/// endpoints included.
inline Vector cycle_times(double period, double cycles, Eigen::Index n) {
    if (n < 2) throw std::invalid_argument("cycle_times: need n >= 2");
    Vector t(n);
    const double span = period * cycles;
    for (Eigen::Index i = 0; i < n; ++i)
        t[i] = span * static_cast<double>(i) / static_cast<double>(n - 1);
    return t;
}

/// Additive i.i.d. Gaussian observation noise, seeded and reproducible.
inline Trajectory add_noise(const Trajectory& traj, double sigma_n, std::uint64_t seed) {
    if (sigma_n < 0) throw std::invalid_argument("add_noise: sigma_n must be >= 0");
    if (sigma_n == 0) return traj;
    Rng rng(seed);
    Matrix noisy = traj.states + sigma_n * rng.normal_matrix(traj.states.rows(), traj.states.cols());
    return Trajectory(traj.times, std::move(noisy));
}

inline Trajectory downsample(const Trajectory& traj, Eigen::Index factor) {
    if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
    const Eigen::Index n = (traj.size() + factor - 1) / factor;
    Vector t(n);
    Matrix x(n, traj.dim());
    for (Eigen::Index i = 0; i < n; ++i) {
        t[i] = traj.times[i * factor];
        x.row(i) = traj.states.row(i * factor);
    }
    return Trajectory(std::move(t), std::move(x));
}

namespace detail {

inline Eigen::Index find_time_index(const Trajectory& traj, double t) {
    for (Eigen::Index i = 0; i < traj.size(); ++i)
        if (std::abs(traj.times[i] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return i;
    throw std::invalid_argument("rmse: time " + std::to_string(t) + " not present in trajectory");
}

}  // namespace detail

/// Root mean square error over all entries at the evaluation times; both
/// trajectories must be sampled there.
inline double rmse(const Trajectory& pred, const Trajectory& truth, const Vector& eval_times) {
    if (eval_times.size() == 0) throw std::invalid_argument("rmse: no evaluation times");
    if (pred.dim() != truth.dim()) throw std::invalid_argument("rmse: dimension mismatch");
    double sq = 0.0;
    for (Eigen::Index k = 0; k < eval_times.size(); ++k) {
        const Eigen::Index i = detail::find_time_index(pred, eval_times[k]);
        const Eigen::Index j = detail::find_time_index(truth, eval_times[k]);
        sq += (pred.states.row(i) - truth.states.row(j)).squaredNorm();
    }
    return std::sqrt(sq / static_cast<double>(eval_times.size() * pred.dim()));
}

struct ExperimentConfig {
    FitConfig fit;
    int grid_count = 5;
    double grid_margin = 0.1;
    double lengthscale = 1.0;   // isotropic, in the model (possibly latent) space
    int pca_dim = 0;            // 0 = model in the original space
    Eigen::Index downsample_factor = 1;
    double impute_fraction = 0.2;
};

struct ExperimentResult {
    Report report;
    Trajectory prediction;       // original space, all working frame times
    Model model;                 // in the model (possibly latent) space
    PcaProjection pca;           // valid when pca_dim > 0
    double rmse_value = 0.0;
};

namespace detail {

struct PreparedSeries {
    Trajectory working;          // after optional downsampling
    Trajectory train_model;      // model-space training series, times shifted to start at 0
    Matrix working_model_states; // all working frames in model space
    PcaProjection pca;
    bool use_pca;
    double t_shift;

    /// Model-space lengthscales. In a PCA latent space the coordinate scale
    /// is arbitrary (it inherits the lifting map), so the configured value
    /// multiplies the per-dimension training std there; in the original
    /// space it is used as given.
    Vector lengthscales(double factor) const {
        const Matrix& X = train_model.states;
        if (!use_pca) return Vector::Constant(X.cols(), factor);
        const Vector mean = X.colwise().mean().transpose();
        Vector sd(X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j)
            sd[j] = std::sqrt((X.col(j).array() - mean[j]).square().sum() /
                              static_cast<double>(X.rows()));
        return factor * sd.cwiseMax(1e-6);
    }
};

inline PreparedSeries prepare_series(const std::vector<Eigen::Index>& train_idx,
                                     const ExperimentConfig& cfg, const Trajectory& working) {
    PreparedSeries prep;
    prep.working = working;
    prep.use_pca = cfg.pca_dim > 0;
    const Eigen::Index n_train = static_cast<Eigen::Index>(train_idx.size());

    Matrix train_states(n_train, working.dim());
    Vector train_times(n_train);
    for (Eigen::Index i = 0; i < n_train; ++i) {
        train_times[i] = working.times[train_idx[static_cast<size_t>(i)]];
        train_states.row(i) = working.states.row(train_idx[static_cast<size_t>(i)]);
    }
    prep.t_shift = train_times[0];
    train_times.array() -= prep.t_shift;

    if (prep.use_pca) {
        prep.pca = pca_fit(train_states, cfg.pca_dim);
        prep.train_model = Trajectory(train_times, prep.pca.project(train_states));
        prep.working_model_states = prep.pca.project(working.states);
    } else {
        prep.train_model = Trajectory(train_times, train_states);
        prep.working_model_states = working.states;
    }
    return prep;
}

inline void add_fit_summary(Report& report, const FitResult& fit_result, const ExperimentConfig& cfg) {
    report.add("lengthscale", cfg.lengthscale);
    report.add("grid_count_per_dim", cfg.grid_count);
    report.add("inducing_points", fit_result.model.Z.rows());
    report.add("restarts", static_cast<int>(fit_result.diagnostics.restarts.size()));
    report.add("failed_restarts", fit_result.diagnostics.failures);
    report.add("best_restart", fit_result.diagnostics.best_index);
    report.add("log_posterior", fit_result.model.log_posterior_value);
    report.add("sigma_f", std::exp(fit_result.model.params.log_sigma_f));
    const Vector omega = fit_result.model.params.omega();
    for (Eigen::Index j = 0; j < omega.size(); ++j)
        report.add("omega_" + std::to_string(j + 1), omega[j]);
}

inline void add_rmse_breakdown(Report& report, const Matrix& pred, const Matrix& truth) {
    for (Eigen::Index j = 0; j < pred.cols(); ++j) {
        const double v = std::sqrt((pred.col(j) - truth.col(j)).squaredNorm() /
                                   static_cast<double>(pred.rows()));
        report.add("rmse_dim_" + std::to_string(j + 1), v);
    }
}

}  // namespace detail

/// Train on the first half of the frames, forecast the whole span from the
/// fitted initial state, and score RMSE on the held-out second half in the
/// original feature space.
inline ExperimentResult run_forecast_experiment(const Trajectory& series, const ExperimentConfig& cfg) {
    const Trajectory working =
        cfg.downsample_factor > 1 ? downsample(series, cfg.downsample_factor) : series;
    const Eigen::Index n = working.size();
    const Eigen::Index n_train = n / 2;
    if (n_train < 2 || n_train >= n)
        throw std::invalid_argument("run_forecast_experiment: too few frames to split");

    std::vector<Eigen::Index> train_idx;
    for (Eigen::Index i = 0; i < n_train; ++i) train_idx.push_back(i);
    const auto prep = detail::prepare_series(train_idx, cfg, working);

    const GridSpec grid = GridSpec::from_data(Dataset(prep.train_model), cfg.grid_count, cfg.grid_margin);
    const FitResult fit_result =
        fit(Dataset(prep.train_model), grid, prep.lengthscales(cfg.lengthscale), cfg.fit);

    Vector all_times = working.times;
    all_times.array() -= prep.t_shift;
    const Trajectory pred_model = predict(fit_result.model, all_times);
    const Matrix pred_original =
        prep.use_pca ? prep.pca.reconstruct(pred_model.states) : pred_model.states;

    const Eigen::Index n_test = n - n_train;
    const Matrix pred_test = pred_original.bottomRows(n_test);
    const Matrix truth_test = working.states.bottomRows(n_test);
    const double err = std::sqrt((pred_test - truth_test).squaredNorm() /
                                 static_cast<double>(pred_test.size()));

    ExperimentResult out;
    out.model = fit_result.model;
    out.pca = prep.pca;
    out.prediction = Trajectory(working.times, pred_original);
    out.rmse_value = err;
    out.report.add("experiment", "forecast");
    out.report.add("frames", n);
    out.report.add("train_frames", n_train);
    out.report.add("test_frames", n_test);
    out.report.add("pca_dim", cfg.pca_dim);
    if (prep.use_pca) out.report.add("pca_explained_variance", prep.pca.explained.sum());
    detail::add_fit_summary(out.report, fit_result, cfg);
    out.report.add("rmse", err);
    detail::add_rmse_breakdown(out.report, pred_test, truth_test);
    return out;
}

/// Remove a centred contiguous block of roughly `impute_fraction` of the
/// frames, train on the remainder, and score RMSE on the removed frames.
inline ExperimentResult run_imputation_experiment(const Trajectory& series, const ExperimentConfig& cfg) {
    const Trajectory working =
        cfg.downsample_factor > 1 ? downsample(series, cfg.downsample_factor) : series;
    const Eigen::Index n = working.size();
    const Eigen::Index n_remove = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::llround(cfg.impute_fraction * static_cast<double>(n))));
    const Eigen::Index start = (n - n_remove) / 2;
    if (start < 2 || start + n_remove >= n - 1)
        throw std::invalid_argument("run_imputation_experiment: too few frames around the gap");

    std::vector<Eigen::Index> train_idx;
    for (Eigen::Index i = 0; i < n; ++i)
        if (i < start || i >= start + n_remove) train_idx.push_back(i);
    const auto prep = detail::prepare_series(train_idx, cfg, working);

    const GridSpec grid = GridSpec::from_data(Dataset(prep.train_model), cfg.grid_count, cfg.grid_margin);
    const FitResult fit_result =
        fit(Dataset(prep.train_model), grid, prep.lengthscales(cfg.lengthscale), cfg.fit);

    Vector all_times = working.times;
    all_times.array() -= prep.t_shift;
    const Trajectory pred_model = predict(fit_result.model, all_times);
    const Matrix pred_original =
        prep.use_pca ? prep.pca.reconstruct(pred_model.states) : pred_model.states;

    Matrix pred_gap(n_remove, working.dim());
    Matrix truth_gap(n_remove, working.dim());
    for (Eigen::Index i = 0; i < n_remove; ++i) {
        pred_gap.row(i) = pred_original.row(start + i);
        truth_gap.row(i) = working.states.row(start + i);
    }
    const double err =
        std::sqrt((pred_gap - truth_gap).squaredNorm() / static_cast<double>(pred_gap.size()));

    ExperimentResult out;
    out.model = fit_result.model;
    out.pca = prep.pca;
    out.prediction = Trajectory(working.times, pred_original);
    out.rmse_value = err;
    out.report.add("experiment", "impute");
    out.report.add("frames", n);
    out.report.add("removed_frames", n_remove);
    out.report.add("removed_start_index", start);
    out.report.add("pca_dim", cfg.pca_dim);
    if (prep.use_pca) out.report.add("pca_explained_variance", prep.pca.explained.sum());
    detail::add_fit_summary(out.report, fit_result, cfg);
    out.report.add("rmse", err);
    detail::add_rmse_breakdown(out.report, pred_gap, truth_gap);
    return out;
}

/// Synthetic high-dimensional benchmark: a 3-D limit-cycle oscillator
/// (planar VDP plus a lagging follower coordinate) lifted to `original_dim`
/// dimensions by a seeded random affine map with additive noise.
struct SyntheticSeries {
    Trajectory latent_clean;  // N x 3
    Trajectory clean;         // N x P, lifted without noise
    Trajectory observed;      // N x P, lifted with noise
};

inline SyntheticSeries make_synthetic_highdim(std::uint64_t seed, Eigen::Index n_frames = 96,
                                              Eigen::Index original_dim = 50, double noise = 0.1,
                                              double cycles = 3.0) {
    auto field = [](const Vector& y, Vector& dydt) {
        dydt.resize(3);
        dydt[0] = y[1];
        dydt[1] = (1.0 - y[0] * y[0]) * y[1] - y[0];
        dydt[2] = 0.8 * (y[0] - y[2]);
    };
    Vector x0(3);
    x0 << 2.0, 0.0, 0.5;
    const double period = 6.663;  // planar VDP cycle; the follower entrains to it
    const Vector times = cycle_times(period, cycles, n_frames);
    SolverConfig cfg;
    cfg.rtol = 1e-9;
    cfg.atol = 1e-11;
    const Trajectory latent = integrate(field, x0, times, cfg);

    Rng rng(seed);
    const Matrix lift = rng.normal_matrix(3, original_dim) / std::sqrt(3.0);
    const Vector offset = rng.normal_vector(original_dim);
    Matrix lifted = latent.states * lift;
    lifted.rowwise() += offset.transpose();

    SyntheticSeries out;
    out.latent_clean = latent;
    out.clean = Trajectory(times, lifted);
    out.observed = add_noise(out.clean, noise, seed + 1);
    return out;
}

}  // namespace gpode
