#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpode {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Thrown when a factorization fails even after jitter escalation.
struct FactorizationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Thrown when the integrator cannot complete the requested time span.
struct OdeError : std::runtime_error {
    enum class Kind { divergence, budget };

    OdeError(Kind k, double t, const std::string& what)
        : std::runtime_error(what), kind(k), last_valid_time(t) {}

    Kind kind;
    double last_valid_time;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FitError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Ordered (time, state) samples of a D-dimensional system.
struct Trajectory {
    Vector times;   // strictly increasing, length N
    Matrix states;  // N x D

    Trajectory() = default;
    Trajectory(Vector t, Matrix x) : times(std::move(t)), states(std::move(x)) { validate(); }

    Eigen::Index size() const { return times.size(); }
    Eigen::Index dim() const { return states.cols(); }

    void validate() const {
        if (times.size() != states.rows())
            throw std::invalid_argument("Trajectory: times/states length mismatch");
        for (Eigen::Index i = 1; i < times.size(); ++i)
            if (!(times[i] > times[i - 1]))
                throw std::invalid_argument("Trajectory: times must be strictly increasing at row " +
                                            std::to_string(i));
        if (!times.allFinite() || !states.allFinite())
            throw std::invalid_argument("Trajectory: non-finite entries");
    }
};

/// One or more observed series of consistent dimension.
struct Dataset {
    std::vector<Trajectory> series;

    Dataset() = default;
    explicit Dataset(Trajectory t) { series.push_back(std::move(t)); }
    explicit Dataset(std::vector<Trajectory> s) : series(std::move(s)) { validate(); }

    Eigen::Index dim() const { return series.empty() ? 0 : series.front().dim(); }
    Eigen::Index total_points() const {
        Eigen::Index n = 0;
        for (const auto& s : series) n += s.size();
        return n;
    }

    void validate() const {
        if (series.empty()) throw std::invalid_argument("Dataset: no series");
        const Eigen::Index d = series.front().dim();
        for (const auto& s : series) {
            if (s.dim() != d) throw std::invalid_argument("Dataset: inconsistent dimension");
            if (s.size() < 2) throw std::invalid_argument("Dataset: series needs >= 2 points");
        }
    }
};

/// Axis-aligned equidistant grid specification, one entry per dimension.
struct GridSpec {
    Vector lower;
    Vector upper;
    std::vector<int> counts;

    Eigen::Index dim() const { return lower.size(); }
    Eigen::Index total() const {
        Eigen::Index m = 1;
        for (int c : counts) m *= c;
        return m;
    }

    void validate() const {
        if (lower.size() != upper.size() || static_cast<size_t>(lower.size()) != counts.size())
            throw std::invalid_argument("GridSpec: inconsistent sizes");
        for (Eigen::Index j = 0; j < lower.size(); ++j) {
            if (counts[j] < 2) throw std::invalid_argument("GridSpec: counts must be >= 2");
            if (!std::isfinite(lower[j]) || !std::isfinite(upper[j]) || !(lower[j] < upper[j]))
                throw std::invalid_argument("GridSpec: bounds must be finite with lower < upper");
        }
    }

    /// Bounding box of the data expanded by `margin` per side, `count` points per dimension.
    static GridSpec from_data(const Dataset& data, int count = 5, double margin = 0.1) {
        const Eigen::Index d = data.dim();
        GridSpec spec;
        spec.lower = Vector::Constant(d, std::numeric_limits<double>::infinity());
        spec.upper = Vector::Constant(d, -std::numeric_limits<double>::infinity());
        for (const auto& s : data.series) {
            spec.lower = spec.lower.cwiseMin(s.states.colwise().minCoeff().transpose());
            spec.upper = spec.upper.cwiseMax(s.states.colwise().maxCoeff().transpose());
        }
        for (Eigen::Index j = 0; j < d; ++j) {
            double span = spec.upper[j] - spec.lower[j];
            if (span <= 0) span = 1.0;  // degenerate dimension
            spec.lower[j] -= margin * span;
            spec.upper[j] += margin * span;
        }
        spec.counts.assign(static_cast<size_t>(d), count);
        spec.validate();
        return spec;
    }
};

}  // namespace gpode
