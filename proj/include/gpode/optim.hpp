#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include "gpode/types.hpp"

namespace gpode {

struct OptimConfig {
    int memory = 10;
    int max_iterations = 500;
    double gradient_tolerance = 1e-5;
    double objective_tolerance = 1e-9;  // relative change
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
    int max_line_search = 40;

    void validate() const {
        if (!(0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1))
            throw std::invalid_argument("OptimConfig: require 0 < c1 < c2 < 1");
        if (memory <= 0 || max_iterations <= 0 || max_line_search <= 0)
            throw std::invalid_argument("OptimConfig: limits must be positive");
    }
};

enum class OptimStatus { converged_gradient, converged_objective, max_iterations, line_search_failure };

inline const char* to_string(OptimStatus s) {
    switch (s) {
        case OptimStatus::converged_gradient: return "converged-gradient";
        case OptimStatus::converged_objective: return "converged-objective";
        case OptimStatus::max_iterations: return "max-iterations";
        case OptimStatus::line_search_failure: return "line-search-failure";
    }
    return "unknown";
}

struct IterationRecord {
    double value;
    double gradient_norm;
};

struct MaximizeResult {
    Vector x;
    double value = -std::numeric_limits<double>::infinity();
    OptimStatus status = OptimStatus::max_iterations;
    std::vector<IterationRecord> trace;
    int evaluations = 0;
};

/// Objective callable: fills the gradient and returns the value. A return
/// of -inf marks an infeasible point; the line search backs away from it.
using Objective = std::function<double(const Vector&, Vector&)>;

/// L-BFGS ascent with two-loop recursion and a bisecting weak-Wolfe line
/// search. Maximisation is done by negating internally.
inline MaximizeResult maximize(const Objective& objective, const Vector& x0, const OptimConfig& cfg = {}) {
    cfg.validate();
    const Eigen::Index n = x0.size();
    MaximizeResult result;

    // minimise f = -objective
    auto eval = [&](const Vector& x, Vector& grad) {
        double v = objective(x, grad);
        ++result.evaluations;
        grad = -grad;
        return -v;
    };

    Vector x = x0, g(n);
    double f = eval(x, g);
    if (!std::isfinite(f)) throw std::invalid_argument("maximize: objective not finite at x0");

    std::deque<Vector> s_hist, y_hist;
    std::deque<double> rho_hist;
    Vector p(n), x_new(n), g_new(n);
    std::vector<double> two_loop_alpha;

    result.status = OptimStatus::max_iterations;
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        result.trace.push_back({-f, g.lpNorm<Eigen::Infinity>()});
        if (g.lpNorm<Eigen::Infinity>() < cfg.gradient_tolerance) {
            result.status = OptimStatus::converged_gradient;
            break;
        }

        // two-loop recursion for p = -H g
        p = -g;
        const size_t k = s_hist.size();
        two_loop_alpha.assign(k, 0.0);
        for (size_t i = k; i-- > 0;) {
            two_loop_alpha[i] = rho_hist[i] * s_hist[i].dot(p);
            p -= two_loop_alpha[i] * y_hist[i];
        }
        if (k > 0) p *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        for (size_t i = 0; i < k; ++i) {
            const double beta = rho_hist[i] * y_hist[i].dot(p);
            p += (two_loop_alpha[i] - beta) * s_hist[i];
        }

        double dphi0 = g.dot(p);
        if (!(dphi0 < 0)) {  // not a descent direction: reset to steepest
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            p = -g;
            dphi0 = g.dot(p);
        }

        // weak-Wolfe bisection; -inf objective values reject the step
        double f_new = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            if (attempt == 1) {
                if (s_hist.empty()) break;  // already searched along -g
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
                p = -g;
                dphi0 = g.dot(p);
            }
            double alpha = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
            double best_armijo_alpha = -1.0, best_armijo_f = std::numeric_limits<double>::infinity();
            Vector best_armijo_x, best_armijo_g;
            for (int ls = 0; ls < cfg.max_line_search; ++ls) {
                x_new = x + alpha * p;
                f_new = eval(x_new, g_new);
                const bool armijo = std::isfinite(f_new) && f_new <= f + cfg.wolfe_c1 * alpha * dphi0;
                if (!armijo) {
                    hi = alpha;
                    alpha = 0.5 * (lo + hi);
                    continue;
                }
                if (f_new < best_armijo_f) {
                    best_armijo_f = f_new;
                    best_armijo_alpha = alpha;
                    best_armijo_x = x_new;
                    best_armijo_g = g_new;
                }
                if (g_new.dot(p) < cfg.wolfe_c2 * dphi0) {  // slope still too steep: step further
                    lo = alpha;
                    alpha = std::isinf(hi) ? 2.0 * alpha : 0.5 * (lo + hi);
                    continue;
                }
                accepted = true;
                break;
            }
            if (!accepted && best_armijo_alpha > 0) {
                // Armijo held but curvature never did within the budget
                x_new = best_armijo_x;
                g_new = best_armijo_g;
                f_new = best_armijo_f;
                accepted = true;
            }
        }
        if (!accepted) {
            result.status = OptimStatus::line_search_failure;
            break;
        }

        const Vector s = x_new - x;
        const Vector yv = g_new - g;
        const double sy = s.dot(yv);
        if (sy > 1e-10 * s.norm() * yv.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(yv);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > cfg.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }

        const double rel_change = std::abs(f - f_new) / std::max(1.0, std::abs(f_new));
        x.swap(x_new);
        g.swap(g_new);
        f = f_new;
        if (rel_change < cfg.objective_tolerance) {
            result.trace.push_back({-f, g.lpNorm<Eigen::Infinity>()});
            result.status = OptimStatus::converged_objective;
            break;
        }
    }

    result.x = x;
    result.value = -f;
    return result;
}

}  // namespace gpode
