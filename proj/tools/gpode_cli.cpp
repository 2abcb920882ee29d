// Command-line front end: simulation of the benchmark systems, model
// fitting, prediction, forecast/imputation experiments, and lengthscale
// grid search. All randomness flows from one --seed value.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "gpode/bench.hpp"
#include "gpode/io.hpp"
#include "gpode/model.hpp"

namespace {

gpode::Vector parse_vector(const std::string& text) {
    std::vector<double> vals;
    std::string tok;
    std::istringstream ss(text);
    while (std::getline(ss, tok, ',')) vals.push_back(gpode::detail::parse_double(tok, 0));
    if (vals.empty()) throw gpode::ParseError("expected comma-separated numbers, got '" + text + "'");
    gpode::Vector v(static_cast<Eigen::Index>(vals.size()));
    for (size_t i = 0; i < vals.size(); ++i) v[static_cast<Eigen::Index>(i)] = vals[i];
    return v;
}

/// Times are either `start:step:end` (end inclusive up to rounding) or a
/// file with one time per line.
gpode::Vector parse_times(const std::string& spec, const std::string& times_file) {
    if (!times_file.empty()) {
        std::ifstream in(times_file);
        if (!in) throw gpode::ParseError("cannot open times file '" + times_file + "'");
        std::vector<double> vals;
        std::string line;
        Eigen::Index line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty() || line == "\r") continue;
            vals.push_back(gpode::detail::parse_double(line, line_no));
        }
        if (vals.empty()) throw gpode::ParseError("times file '" + times_file + "' is empty");
        gpode::Vector t(static_cast<Eigen::Index>(vals.size()));
        for (size_t i = 0; i < vals.size(); ++i) t[static_cast<Eigen::Index>(i)] = vals[i];
        return t;
    }
    const auto first = spec.find(':');
    const auto second = spec.rfind(':');
    if (first == std::string::npos || second == first)
        throw gpode::ParseError("times spec must be start:step:end, got '" + spec + "'");
    const double start = gpode::detail::parse_double(spec.substr(0, first), 0);
    const double step = gpode::detail::parse_double(spec.substr(first + 1, second - first - 1), 0);
    const double end = gpode::detail::parse_double(spec.substr(second + 1), 0);
    if (!(step > 0) || !(end >= start)) throw gpode::ParseError("times spec must advance: '" + spec + "'");
    std::vector<double> vals;
    for (double t = start; t <= end + 1e-12 * std::max(1.0, std::abs(end)); t += step) vals.push_back(t);
    gpode::Vector t(static_cast<Eigen::Index>(vals.size()));
    for (size_t i = 0; i < vals.size(); ++i) t[static_cast<Eigen::Index>(i)] = vals[i];
    return t;
}

struct FitOptions {
    int restarts = 20;
    double perturbation = 0.1;
    std::uint64_t seed = 42;
    int grid_count = 5;
    double lengthscale = 1.0;
    double sigma_f_init = 1.0;
    double rtol = 1e-6;
    double atol = 1e-8;
    long max_steps = 20000;
    int max_iterations = 500;
    int threads = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--restarts", restarts, "optimisation restarts");
        cmd->add_option("--perturbation", perturbation, "whitened perturbation std for restarts");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_option("--grid-count", grid_count, "inducing grid points per dimension");
        cmd->add_option("--lengthscale", lengthscale,
                        "isotropic kernel lengthscale; under --pca it multiplies the "
                        "per-dimension latent std");
        cmd->add_option("--sigma-f", sigma_f_init, "initial signal std");
        cmd->add_option("--rtol", rtol, "solver relative tolerance");
        cmd->add_option("--atol", atol, "solver absolute tolerance");
        cmd->add_option("--max-steps", max_steps, "solver step budget per integration");
        cmd->add_option("--max-iterations", max_iterations, "L-BFGS iteration cap per restart");
        cmd->add_option("--threads", threads, "worker threads (0 = hardware)");
    }

    gpode::FitConfig to_fit_config() const {
        gpode::FitConfig cfg;
        cfg.restarts = restarts;
        cfg.perturbation = perturbation;
        cfg.seed = seed;
        cfg.sigma_f_init = sigma_f_init;
        cfg.threads = threads;
        cfg.solver.rtol = rtol;
        cfg.solver.atol = atol;
        cfg.solver.max_steps = max_steps;
        cfg.optim.max_iterations = max_iterations;
        return cfg;
    }
};

int cmd_simulate(const std::string& system, const std::string& x0_text, Eigen::Index n, double cycles,
                 double noise, std::uint64_t seed, const std::string& out_prefix) {
    const auto sys = gpode::parse_bench_system(system);
    const gpode::Vector x0 = x0_text.empty() ? gpode::default_initial_state(sys) : parse_vector(x0_text);
    const double period = gpode::find_period(sys, gpode::default_initial_state(sys));
    const gpode::Vector times = gpode::cycle_times(period, cycles, n);
    gpode::SolverConfig cfg;
    cfg.rtol = 1e-9;
    cfg.atol = 1e-11;
    const gpode::Trajectory clean = gpode::simulate_benchmark(sys, x0, times, cfg);
    const gpode::Trajectory noisy = gpode::add_noise(clean, noise, seed);
    gpode::write_series(out_prefix + "_clean.csv", clean);
    gpode::write_series(out_prefix + "_noisy.csv", noisy);
    std::cout << "wrote " << out_prefix << "_clean.csv and " << out_prefix << "_noisy.csv (period "
              << period << ")\n";
    return 0;
}

int cmd_fit(const std::vector<std::string>& data_paths, const FitOptions& opts,
            const std::string& model_path, const std::string& report_path) {
    gpode::Dataset data;
    for (const auto& p : data_paths) data.series.push_back(gpode::read_series(p));
    data.validate();

    const gpode::GridSpec grid = gpode::GridSpec::from_data(data, opts.grid_count);
    const gpode::Vector ell = gpode::Vector::Constant(data.dim(), opts.lengthscale);
    const gpode::FitResult result = gpode::fit(data, grid, ell, opts.to_fit_config());
    gpode::write_model(model_path, result.model);

    gpode::Report report;
    report.add("command", "fit");
    for (const auto& p : data_paths) report.add("data", p);
    report.add("model_file", model_path);
    report.add("series", static_cast<int>(data.series.size()));
    report.add("lengthscale", opts.lengthscale);
    report.add("inducing_points", result.model.Z.rows());
    report.add("restarts", static_cast<int>(result.diagnostics.restarts.size()));
    report.add("failed_restarts", result.diagnostics.failures);
    report.add("best_restart", result.diagnostics.best_index);
    report.add("log_posterior", result.model.log_posterior_value);
    report.add("sigma_f", std::exp(result.model.params.log_sigma_f));
    const gpode::Vector omega = result.model.params.omega();
    for (Eigen::Index j = 0; j < omega.size(); ++j)
        report.add("omega_" + std::to_string(j + 1), omega[j]);
    for (size_t r = 0; r < result.diagnostics.restarts.size(); ++r) {
        const auto& rec = result.diagnostics.restarts[r];
        report.add("restart_" + std::to_string(r) + "_final",
                   rec.failed ? std::string("failed") : gpode::detail::format_double(rec.final_value));
    }
    if (!report_path.empty()) gpode::write_report(report_path, report);
    std::cout << "wrote " << model_path << " (log posterior "
              << gpode::detail::format_double(result.model.log_posterior_value) << ")\n";
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& times_spec,
                const std::string& times_file, const std::string& from_text, const std::string& out_path) {
    const gpode::Model model = gpode::read_model(model_path);
    const gpode::Vector times = parse_times(times_spec, times_file);
    gpode::Trajectory traj;
    if (from_text.empty()) {
        traj = gpode::predict(model, times);
    } else {
        const gpode::Vector from = parse_vector(from_text);
        traj = gpode::predict(model, times, &from);
    }
    const gpode::Vector omega = model.params.omega();
    gpode::write_series(out_path, traj, &omega);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_experiment(const std::string& data_path, const std::string& type, const FitOptions& opts,
                   int pca_dim, Eigen::Index downsample_factor, double impute_fraction,
                   const std::string& out_dir) {
    const gpode::Trajectory series = gpode::read_series(data_path);
    gpode::ExperimentConfig cfg;
    cfg.fit = opts.to_fit_config();
    cfg.grid_count = opts.grid_count;
    cfg.lengthscale = opts.lengthscale;
    cfg.pca_dim = pca_dim;
    cfg.downsample_factor = downsample_factor;
    cfg.impute_fraction = impute_fraction;

    gpode::ExperimentResult result;
    if (type == "forecast")
        result = gpode::run_forecast_experiment(series, cfg);
    else if (type == "impute")
        result = gpode::run_imputation_experiment(series, cfg);
    else
        throw gpode::ParseError("experiment type must be forecast or impute, got '" + type + "'");

    std::filesystem::create_directories(out_dir);
    const std::string pred_path = out_dir + "/prediction.csv";
    const std::string report_path = out_dir + "/report.txt";
    gpode::write_series(pred_path, result.prediction);
    result.report.add("data_file", data_path);
    result.report.add("prediction_file", pred_path);
    gpode::write_report(report_path, result.report);
    std::cout << "wrote " << report_path << " (rmse " << gpode::detail::format_double(result.rmse_value)
              << ")\n";
    return 0;
}

int cmd_gridsearch(const std::string& data_path, const std::string& lengthscales_text,
                   const FitOptions& opts, const std::string& report_path) {
    const gpode::Trajectory series = gpode::read_series(data_path);
    const gpode::Vector ells = parse_vector(lengthscales_text);
    std::vector<double> candidates(ells.data(), ells.data() + ells.size());

    const gpode::Dataset data{series};
    const gpode::GridSpec grid = gpode::GridSpec::from_data(data, opts.grid_count);
    const gpode::LengthscaleSelection sel =
        gpode::select_lengthscale(data, grid, candidates, opts.to_fit_config());

    gpode::Report report;
    report.add("command", "gridsearch");
    report.add("data_file", data_path);
    for (const auto& entry : sel.table) {
        const std::string key = "rmse_ell_" + gpode::detail::format_double(entry.ell);
        report.add(key, entry.failed ? std::string("failed")
                                     : gpode::detail::format_double(entry.validation_rmse));
    }
    report.add("selected_lengthscale", sel.best_ell);
    if (!report_path.empty()) gpode::write_report(report_path, report);
    std::cout << "selected lengthscale " << gpode::detail::format_double(sel.best_ell) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Nonparametric ODE learning with Gaussian-process vector fields"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key-value config file; flags override");

    // simulate
    auto* sim = app.add_subcommand("simulate", "simulate a benchmark system to CSV");
    std::string sim_system = "vdp", sim_x0, sim_out = "sim";
    Eigen::Index sim_n = 25;
    double sim_cycles = 1.0, sim_noise = 0.1;
    std::uint64_t sim_seed = 42;
    sim->add_option("--system", sim_system, "vdp, fhn, or lv")->required();
    sim->add_option("--x0", sim_x0, "initial state, comma-separated (default: canonical)");
    sim->add_option("--n", sim_n, "number of samples");
    sim->add_option("--cycles", sim_cycles, "cycles of the detected period to cover");
    sim->add_option("--noise", sim_noise, "observation noise std");
    sim->add_option("--seed", sim_seed, "noise seed");
    sim->add_option("--out", sim_out, "output prefix (<out>_clean.csv, <out>_noisy.csv)");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "MAP-fit a model to one or more series");
    std::vector<std::string> fit_data;
    std::string fit_model = "model.json", fit_report;
    FitOptions fit_opts;
    fit_cmd->add_option("--data", fit_data, "input CSV (repeatable)")->required();
    fit_cmd->add_option("--out", fit_model, "output model file");
    fit_cmd->add_option("--report", fit_report, "optional fit report path");
    fit_opts.attach(fit_cmd);

    // predict
    auto* pred = app.add_subcommand("predict", "integrate a fitted model over requested times");
    std::string pred_model, pred_times, pred_times_file, pred_from, pred_out = "prediction.csv";
    pred->add_option("--model", pred_model, "model file")->required();
    pred->add_option("--times", pred_times, "start:step:end");
    pred->add_option("--times-file", pred_times_file, "file with one time per line");
    pred->add_option("--from", pred_from, "override start state, comma-separated");
    pred->add_option("--out", pred_out, "output CSV with per-dimension +-omega bands");

    // experiment
    auto* exp = app.add_subcommand("experiment", "forecast or imputation protocol on a series");
    std::string exp_data, exp_type = "forecast", exp_out = "experiment_out";
    int exp_pca = 0;
    Eigen::Index exp_down = 1;
    double exp_fraction = 0.2;
    FitOptions exp_opts;
    exp->add_option("--data", exp_data, "input CSV")->required();
    exp->add_option("--type", exp_type, "forecast or impute")->required();
    exp->add_option("--pca", exp_pca, "latent dimension (0 = off)");
    exp->add_option("--downsample", exp_down, "keep every k-th frame");
    exp->add_option("--impute-fraction", exp_fraction, "fraction of frames removed (impute)");
    exp->add_option("--out-dir", exp_out, "output directory");
    exp_opts.attach(exp);

    // gridsearch
    auto* gs = app.add_subcommand("gridsearch", "cross-validated lengthscale selection");
    std::string gs_data, gs_ells = "0.5,0.75,1,1.25,1.5", gs_report;
    FitOptions gs_opts;
    gs->add_option("--data", gs_data, "input CSV")->required();
    gs->add_option("--lengthscales", gs_ells, "comma-separated candidates");
    gs->add_option("--report", gs_report, "optional report path");
    gs_opts.attach(gs);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed())
            return cmd_simulate(sim_system, sim_x0, sim_n, sim_cycles, sim_noise, sim_seed, sim_out);
        if (fit_cmd->parsed()) return cmd_fit(fit_data, fit_opts, fit_model, fit_report);
        if (pred->parsed()) {
            if (pred_times.empty() && pred_times_file.empty())
                throw gpode::ParseError("predict: provide --times or --times-file");
            return cmd_predict(pred_model, pred_times, pred_times_file, pred_from, pred_out);
        }
        if (exp->parsed())
            return cmd_experiment(exp_data, exp_type, exp_opts, exp_pca, exp_down, exp_fraction, exp_out);
        if (gs->parsed()) return cmd_gridsearch(gs_data, gs_ells, gs_opts, gs_report);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
