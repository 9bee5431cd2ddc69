#pragma once

// Characteristic maps: steady probe readings over a (T_medium, T_ambient) grid.

#include "probemap/errors.hpp"
#include "probemap/geometry.hpp"
#include "probemap/thermal_core.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace probemap {

using Readings = std::array<double, kSensorCount>;  // K, indexed t1..t6

struct SweepSpec {
    std::vector<double> medium_axis;   ///< K, strictly increasing
    std::vector<double> ambient_axis;  ///< K, strictly increasing

    void validate() const {
        auto check = [](const std::vector<double>& axis, const char* name) {
            if (axis.empty()) throw InvalidParams(name, "must have at least one value");
            for (std::size_t i = 0; i < axis.size(); ++i) {
                if (!(axis[i] > 0.0)) throw InvalidParams(name, "values must be > 0 K");
                if (i > 0 && !(axis[i] > axis[i - 1]))
                    throw InvalidParams(name, "must be strictly increasing");
            }
        };
        check(medium_axis, "medium_axis");
        check(ambient_axis, "ambient_axis");
    }

    /// Axes made of the midpoints between neighbouring grid lines. An axis of
    /// length 1 is kept as is.
    [[nodiscard]] SweepSpec midpoints() const {
        auto mid = [](const std::vector<double>& a) {
            if (a.size() < 2) return a;
            std::vector<double> m;
            for (std::size_t i = 0; i + 1 < a.size(); ++i) m.push_back(0.5 * (a[i] + a[i + 1]));
            return m;
        };
        return {mid(medium_axis), mid(ambient_axis)};
    }

    [[nodiscard]] std::size_t size() const { return medium_axis.size() * ambient_axis.size(); }
};

/// Evenly spaced axis from `first` to `last` inclusive; the step must divide the span.
[[nodiscard]] inline std::vector<double> linear_axis(double first, double last, double step) {
    if (!(step > 0.0)) throw InvalidParams("axis step", "must be > 0");
    if (last < first) throw InvalidParams("axis range", "last must not be below first");
    const double n = (last - first) / step;
    const auto count = static_cast<std::size_t>(std::llround(n)) + 1;
    if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n))
        throw InvalidParams("axis step", "does not divide the range");
    std::vector<double> axis(count);
    for (std::size_t i = 0; i < count; ++i) axis[i] = first + static_cast<double>(i) * step;
    return axis;
}

/// Medium from -20 C to 150 C in 10 K steps, ambient from -40 C to 85 C in 12.5 K steps.
[[nodiscard]] inline SweepSpec default_sweep_spec() {
    return {linear_axis(celsius_to_kelvin(-20.0), celsius_to_kelvin(150.0), 10.0),
            linear_axis(celsius_to_kelvin(-40.0), celsius_to_kelvin(85.0), 12.5)};
}

struct MapRow {
    double T_medium = 0.0;
    double T_ambient = 0.0;
    Readings t{};
    bool converged = true;

    friend bool operator==(const MapRow&, const MapRow&) = default;
};

struct CharacteristicMap {
    SweepSpec spec;
    std::vector<MapRow> rows;  ///< medium-major: row = im * |ambient| + ia

    [[nodiscard]] std::size_t size() const { return rows.size(); }
};

struct SweepOptions {
    SolverOptions solver;
    unsigned threads = 1;  ///< 0 selects hardware_concurrency()
};

[[nodiscard]] inline CharacteristicMap run_sweep(const ThermalNetwork& net, const SensorLayout& layout,
                                                 const SweepSpec& spec, const SweepOptions& opt = {}) {
    spec.validate();
    const std::size_t na = spec.ambient_axis.size();
    const std::size_t total = spec.size();

    std::vector<MapRow> rows(total);
    std::vector<std::optional<std::string>> failures(total);
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t idx = next.fetch_add(1); idx < total; idx = next.fetch_add(1)) {
            Scenario s;
            s.T_medium = spec.medium_axis[idx / na];
            s.T_ambient = spec.ambient_axis[idx % na];
            rows[idx].T_medium = s.T_medium;
            rows[idx].T_ambient = s.T_ambient;
            try {
                const auto field = solve_steady(net, s, opt.solver);
                rows[idx].t = probe(layout, field);
                rows[idx].converged = true;
            } catch (const NumericalError& e) {
                rows[idx].converged = false;
                failures[idx] = e.what();
            }
        }
    };

    unsigned threads = opt.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opt.threads;
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, total));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    }

    std::vector<SweepFailed::Point> failed;
    for (std::size_t i = 0; i < total; ++i) {
        if (failures[i]) failed.push_back({i, rows[i].T_medium, rows[i].T_ambient, *failures[i]});
    }
    if (!failed.empty()) throw SweepFailed(std::move(failed));
    return {spec, std::move(rows)};
}

inline constexpr std::string_view kMapHeader = "T_medium,T_ambient,t1,t2,t3,t4,t5,t6";

/// Shortest text that reads back to the same double.
[[nodiscard]] inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::size_t export_map(const CharacteristicMap& map, std::ostream& os) {
    std::string out(kMapHeader);
    out += '\n';
    for (const auto& r : map.rows) {
        out += format_double(r.T_medium);
        out += ',';
        out += format_double(r.T_ambient);
        for (double t : r.t) {
            out += ',';
            out += format_double(t);
        }
        out += '\n';
    }
    os << out;
    if (!os) throw IoError("failed to write characteristic map");
    return out.size();
}

inline std::size_t export_map(const CharacteristicMap& map, const std::string& path) {
    if (path.empty()) throw IoError("empty destination path");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    return export_map(map, f);
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

inline double parse_cell(std::string_view cell, std::size_t line_no) {
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
        cell.remove_suffix(1);
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw SchemaError("line " + std::to_string(line_no) + ": non-numeric cell '" +
                          std::string(cell) + "'");
    return v;
}

}  // namespace detail

/// Reads the CSV written by export_map (or produced from measurements).
/// Rows may come in any order; they are returned medium-major.
[[nodiscard]] inline CharacteristicMap import_map(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw SchemaError("missing header line");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMapHeader)
        throw SchemaError("unexpected header '" + line + "', expected '" + std::string(kMapHeader) + "'");

    std::vector<MapRow> rows;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_commas(line);
        if (cells.size() != 2 + kSensorCount)
            throw SchemaError("line " + std::to_string(line_no) + ": expected " +
                              std::to_string(2 + kSensorCount) + " columns, found " +
                              std::to_string(cells.size()));
        MapRow r;
        r.T_medium = detail::parse_cell(cells[0], line_no);
        r.T_ambient = detail::parse_cell(cells[1], line_no);
        for (std::size_t s = 0; s < kSensorCount; ++s) r.t[s] = detail::parse_cell(cells[2 + s], line_no);
        rows.push_back(r);
    }
    if (rows.empty()) throw GridError("map has no data rows");

    SweepSpec spec;
    for (const auto& r : rows) {
        spec.medium_axis.push_back(r.T_medium);
        spec.ambient_axis.push_back(r.T_ambient);
    }
    for (auto* axis : {&spec.medium_axis, &spec.ambient_axis}) {
        std::sort(axis->begin(), axis->end());
        axis->erase(std::unique(axis->begin(), axis->end()), axis->end());
    }
    try {
        spec.validate();
    } catch (const InvalidParams& e) {
        throw GridError(e.what());
    }
    if (rows.size() != spec.size())
        throw GridError("map has " + std::to_string(rows.size()) + " rows but its axes span " +
                        std::to_string(spec.medium_axis.size()) + " x " +
                        std::to_string(spec.ambient_axis.size()) + " grid points");

    const std::size_t na = spec.ambient_axis.size();
    std::vector<MapRow> ordered(rows.size());
    std::vector<char> seen(rows.size(), 0);
    for (const auto& r : rows) {
        const auto im = static_cast<std::size_t>(
            std::lower_bound(spec.medium_axis.begin(), spec.medium_axis.end(), r.T_medium) -
            spec.medium_axis.begin());
        const auto ia = static_cast<std::size_t>(
            std::lower_bound(spec.ambient_axis.begin(), spec.ambient_axis.end(), r.T_ambient) -
            spec.ambient_axis.begin());
        const std::size_t idx = im * na + ia;
        if (seen[idx])
            throw GridError("duplicate grid point (" + format_double(r.T_medium) + ", " +
                            format_double(r.T_ambient) + ")");
        seen[idx] = 1;
        ordered[idx] = r;
    }
    return {std::move(spec), std::move(ordered)};
}

[[nodiscard]] inline CharacteristicMap import_map(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    return import_map(f);
}

}  // namespace probemap
