#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpode/model.hpp"
#include "gpode/types.hpp"

namespace gpode {

namespace detail {

/// Locale-independent shortest round-trip formatting.
inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) return "nan";
    return std::string(buf, ptr);
}

inline double parse_double(const std::string& tok, Eigen::Index line) {
    double v = 0.0;
    const char* begin = tok.data();
    const char* end = begin + tok.size();
    while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
    while (end != begin && (*(end - 1) == ' ' || *(end - 1) == '\t' || *(end - 1) == '\r')) --end;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end)
        throw ParseError("line " + std::to_string(line) + ": cannot parse number '" + tok + "'");
    return v;
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace detail

/// Read one observed series from a CSV with header `t,x1,...,xP` and rows in
/// strictly increasing t. Parse failures report the offending line number.
inline Trajectory read_series(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("'" + path + "': empty file");
    const auto header = detail::split_csv_row(line);
    if (header.size() < 2 || header[0] != "t")
        throw ParseError("'" + path + "': header must be t,x1,...,xP");
    const Eigen::Index dim = static_cast<Eigen::Index>(header.size()) - 1;

    std::vector<double> times;
    std::vector<double> values;
    Eigen::Index line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto row = detail::split_csv_row(line);
        if (static_cast<Eigen::Index>(row.size()) != dim + 1)
            throw ParseError("'" + path + "' line " + std::to_string(line_no) + ": expected " +
                             std::to_string(dim + 1) + " fields, got " + std::to_string(row.size()));
        const double t = detail::parse_double(row[0], line_no);
        if (!times.empty() && !(t > times.back()))
            throw ParseError("'" + path + "' line " + std::to_string(line_no) +
                             ": times must be strictly increasing");
        if (!std::isfinite(t))
            throw ParseError("'" + path + "' line " + std::to_string(line_no) + ": non-finite time");
        times.push_back(t);
        for (Eigen::Index j = 0; j < dim; ++j) {
            const double v = detail::parse_double(row[static_cast<size_t>(j) + 1], line_no);
            if (!std::isfinite(v))
                throw ParseError("'" + path + "' line " + std::to_string(line_no) + ": non-finite value");
            values.push_back(v);
        }
    }
    if (times.empty()) throw ParseError("'" + path + "': no data rows");

    const Eigen::Index n = static_cast<Eigen::Index>(times.size());
    Vector t(n);
    Matrix x(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        t[i] = times[static_cast<size_t>(i)];
        for (Eigen::Index j = 0; j < dim; ++j) x(i, j) = values[static_cast<size_t>(i * dim + j)];
    }
    return Trajectory(std::move(t), std::move(x));
}

/// Write a series; `band` optionally appends per-dimension lo/hi columns at
/// +- one noise standard deviation around the states.
inline void write_series(const std::string& path, const Trajectory& traj, const Vector* band = nullptr) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    const Eigen::Index d = traj.dim();
    out << "t";
    for (Eigen::Index j = 0; j < d; ++j) out << ",x" << (j + 1);
    if (band) {
        for (Eigen::Index j = 0; j < d; ++j) out << ",x" << (j + 1) << "_lo";
        for (Eigen::Index j = 0; j < d; ++j) out << ",x" << (j + 1) << "_hi";
    }
    out << "\n";
    for (Eigen::Index i = 0; i < traj.size(); ++i) {
        out << detail::format_double(traj.times[i]);
        for (Eigen::Index j = 0; j < d; ++j) out << "," << detail::format_double(traj.states(i, j));
        if (band) {
            for (Eigen::Index j = 0; j < d; ++j)
                out << "," << detail::format_double(traj.states(i, j) - (*band)[j]);
            for (Eigen::Index j = 0; j < d; ++j)
                out << "," << detail::format_double(traj.states(i, j) + (*band)[j]);
        }
        out << "\n";
    }
    if (!out) throw ParseError("failed writing '" + path + "'");
}

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return Matrix(0, 0);
    const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    return m;
}

inline nlohmann::json vector_to_json(const Vector& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

inline Vector vector_from_json(const nlohmann::json& j) {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
    return v;
}

}  // namespace detail

inline constexpr int kModelFormatVersion = 1;

inline void write_model(const std::string& path, const Model& model) {
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["inducing_locations"] = detail::matrix_to_json(model.Z);
    j["u_tilde"] = detail::matrix_to_json(model.params.u_tilde);
    j["log_sigma_f"] = model.params.log_sigma_f;
    j["lengthscales"] = detail::vector_to_json(model.params.lengthscales);
    j["log_omega"] = detail::vector_to_json(model.params.log_omega);
    nlohmann::json x0s = nlohmann::json::array();
    for (const auto& x0 : model.params.x0_list) x0s.push_back(detail::vector_to_json(x0));
    j["x0"] = std::move(x0s);
    j["solver"] = {{"rtol", model.solver.rtol},
                   {"atol", model.solver.atol},
                   {"initial_step", model.solver.initial_step},
                   {"max_steps", model.solver.max_steps},
                   {"max_step", model.solver.max_step}};
    j["log_posterior"] = model.log_posterior_value;

    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
    if (!out) throw ParseError("failed writing '" + path + "'");
}

inline Model read_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
    if (!j.contains("format_version") || j["format_version"].get<int>() != kModelFormatVersion)
        throw ParseError("'" + path + "': unknown model format version");

    Model m;
    m.Z = detail::matrix_from_json(j.at("inducing_locations"));
    m.params.u_tilde = detail::matrix_from_json(j.at("u_tilde"));
    m.params.log_sigma_f = j.at("log_sigma_f").get<double>();
    m.params.lengthscales = detail::vector_from_json(j.at("lengthscales"));
    m.params.log_omega = detail::vector_from_json(j.at("log_omega"));
    for (const auto& x0 : j.at("x0")) m.params.x0_list.push_back(detail::vector_from_json(x0));
    const auto& s = j.at("solver");
    m.solver.rtol = s.at("rtol").get<double>();
    m.solver.atol = s.at("atol").get<double>();
    m.solver.initial_step = s.at("initial_step").get<double>();
    m.solver.max_steps = s.at("max_steps").get<long>();
    m.solver.max_step = s.at("max_step").get<double>();
    m.log_posterior_value = j.at("log_posterior").get<double>();
    return m;
}

/// Ordered key-value report; rendering is deterministic so reruns with the
/// same seed match byte for byte.
struct Report {
    std::vector<std::pair<std::string, std::string>> items;

    void add(const std::string& key, const std::string& value) { items.emplace_back(key, value); }
    void add(const std::string& key, double value) { items.emplace_back(key, detail::format_double(value)); }
    void add(const std::string& key, Eigen::Index value) { items.emplace_back(key, std::to_string(value)); }
    void add(const std::string& key, int value) { items.emplace_back(key, std::to_string(value)); }

    std::string to_string() const {
        std::string out;
        for (const auto& [k, v] : items) {
            out += k;
            out += " = ";
            out += v;
            out += "\n";
        }
        return out;
    }
};

inline void write_report(const std::string& path, const Report& report) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << report.to_string();
    if (!out) throw ParseError("failed writing '" + path + "'");
}

}  // namespace gpode
