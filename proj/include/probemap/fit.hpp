#pragma once

// =============================================================================
// probemap - approach functions T_medium = f(t_a, t_b, ...)
// =============================================================================
// An approach function is a linear combination of monomials (total degree
// <= 2) over a subset of the six probe readings:
//
//     T = sum_k b_k * phi_k(t),   phi_k = prod_s t_s^{e_ks}
//
// Coefficients come from a column-equilibrated least-squares problem solved
// by Householder QR with column pivoting; the condition number is taken from
// the singular values of the equilibrated design matrix.
//
// Readings are converted to the function's unit convention (K or degC)
// before the basis is evaluated. Without an intercept the two conventions
// span different function spaces, so the convention is part of the model.
// =============================================================================

#include "probemap/errors.hpp"
#include "probemap/sweep.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace probemap {

inline constexpr double kConditionLimit = 1e10;

enum class UnitConvention { kelvin, celsius };

[[nodiscard]] inline const char* to_string(UnitConvention u) {
    return u == UnitConvention::kelvin ? "kelvin" : "celsius";
}

[[nodiscard]] inline UnitConvention parse_unit_convention(const std::string& s) {
    if (s == "kelvin") return UnitConvention::kelvin;
    if (s == "celsius") return UnitConvention::celsius;
    throw SchemaError("unknown unit convention '" + s + "'");
}

[[nodiscard]] constexpr double to_convention(double kelvin, UnitConvention u) {
    return u == UnitConvention::kelvin ? kelvin : kelvin_to_celsius(kelvin);
}
[[nodiscard]] constexpr double from_convention(double value, UnitConvention u) {
    return u == UnitConvention::kelvin ? value : celsius_to_kelvin(value);
}

/// Exponent per sensor t1..t6.
using Monomial = std::array<std::uint8_t, kSensorCount>;

[[nodiscard]] inline int degree(const Monomial& m) {
    int d = 0;
    for (auto e : m) d += e;
    return d;
}

[[nodiscard]] inline std::string to_string(const Monomial& m) {
    std::string s;
    for (std::size_t i = 0; i < kSensorCount; ++i) {
        for (int e = 0; e < m[i]; ++e) {
            if (!s.empty()) s += '*';
            s += sensor_name(i);
        }
    }
    return s.empty() ? "1" : s;
}

[[nodiscard]] inline Monomial monomial(std::initializer_list<Sensor> factors) {
    Monomial m{};
    for (auto f : factors) ++m[static_cast<std::size_t>(f)];
    return m;
}

struct BasisTemplate {
    std::vector<std::size_t> sensor_subset;  ///< sorted sensor indices
    std::vector<Monomial> terms;
    bool include_intercept = false;

    /// Columns of the design matrix: the constant first when an intercept is
    /// present, then every term in order.
    [[nodiscard]] std::vector<Monomial> columns() const {
        std::vector<Monomial> cols;
        if (include_intercept) cols.push_back(Monomial{});
        cols.insert(cols.end(), terms.begin(), terms.end());
        return cols;
    }
    [[nodiscard]] std::size_t column_count() const { return terms.size() + (include_intercept ? 1 : 0); }

    void validate() const {
        if (terms.empty()) throw PreconditionViolation("basis template has no terms");
        if (sensor_subset.empty()) throw PreconditionViolation("basis template has no sensors");
        for (std::size_t i = 0; i < sensor_subset.size(); ++i) {
            if (sensor_subset[i] >= kSensorCount)
                throw PreconditionViolation("sensor index out of range");
            if (i > 0 && sensor_subset[i] <= sensor_subset[i - 1])
                throw PreconditionViolation("sensor subset must be sorted and distinct");
        }
        for (std::size_t k = 0; k < terms.size(); ++k) {
            const int d = degree(terms[k]);
            if (d < 1 || d > 2)
                throw PreconditionViolation("term " + to_string(terms[k]) + " must have degree 1 or 2");
            for (std::size_t s = 0; s < kSensorCount; ++s) {
                if (terms[k][s] != 0 &&
                    !std::binary_search(sensor_subset.begin(), sensor_subset.end(), s))
                    throw PreconditionViolation("term " + to_string(terms[k]) + " uses " +
                                                sensor_name(s) + " outside the sensor subset");
            }
            for (std::size_t j = 0; j < k; ++j) {
                if (terms[j] == terms[k])
                    throw PreconditionViolation("duplicate term " + to_string(terms[k]));
            }
        }
    }

    friend bool operator==(const BasisTemplate&, const BasisTemplate&) = default;
};

/// T = b0 t1 + b1 t1^2 + b2 t5 + b3 t5^2 + b4 t1 t5, no constant term.
[[nodiscard]] inline BasisTemplate eq2_preset() {
    using enum Sensor;
    return {{0, 4},
            {monomial({t1}), monomial({t1, t1}), monomial({t5}), monomial({t5, t5}),
             monomial({t1, t5})},
            false};
}

/// Template family: every monomial of degree 1..max_degree over the subset,
/// ordered per sensor (s, s^2) followed by the cross products s*r, s < r.
struct FamilyRule {
    int max_degree = 2;
    bool include_intercept = false;
};

[[nodiscard]] inline BasisTemplate full_basis(std::vector<std::size_t> subset, const FamilyRule& rule = {}) {
    if (rule.max_degree < 1 || rule.max_degree > 2)
        throw PreconditionViolation("family degree must be 1 or 2");
    std::sort(subset.begin(), subset.end());
    BasisTemplate t;
    t.sensor_subset = subset;
    t.include_intercept = rule.include_intercept;
    for (auto s : subset) {
        Monomial m{};
        m[s] = 1;
        t.terms.push_back(m);
        if (rule.max_degree >= 2) {
            m[s] = 2;
            t.terms.push_back(m);
        }
    }
    if (rule.max_degree >= 2) {
        for (std::size_t a = 0; a < subset.size(); ++a) {
            for (std::size_t b = a + 1; b < subset.size(); ++b) {
                Monomial m{};
                m[subset[a]] = 1;
                m[subset[b]] = 1;
                t.terms.push_back(m);
            }
        }
    }
    return t;
}

struct FitDiagnostics {
    double max_abs_residual = 0.0;  ///< K
    double rms_residual = 0.0;      ///< K
    double condition_number = 0.0;
    double orthogonality = 0.0;     ///< max |a_k . r| / (|a_k| |y|)
};

struct ApproachFunction {
    BasisTemplate basis;
    UnitConvention unit = UnitConvention::celsius;
    std::vector<double> coefficients;  ///< one per column of basis.columns()
    FitDiagnostics diagnostics;
};

namespace detail {

[[nodiscard]] inline double eval_monomial(const Monomial& m, const Readings& x) {
    double v = 1.0;
    for (std::size_t s = 0; s < kSensorCount; ++s) {
        for (int e = 0; e < m[s]; ++e) v *= x[s];
    }
    return v;
}

[[nodiscard]] inline Readings convert(const Readings& kelvin, UnitConvention u) {
    Readings out{};
    for (std::size_t s = 0; s < kSensorCount; ++s) out[s] = to_convention(kelvin[s], u);
    return out;
}

[[nodiscard]] inline double polynomial(const ApproachFunction& af, const Readings& converted) {
    const auto cols = af.basis.columns();
    double acc = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) acc += af.coefficients[k] * eval_monomial(cols[k], converted);
    return acc;
}

inline void check_sensors(const ApproachFunction& af, const Readings& t) {
    for (auto s : af.basis.sensor_subset) {
        if (s >= kSensorCount || !std::isfinite(t[s]))
            throw MissingSensor("reading for " + sensor_name(s) + " is missing");
    }
}

}  // namespace detail

/// Estimate in K from readings in K. Readings outside the subset are ignored
/// and may be NaN.
[[nodiscard]] inline double evaluate(const ApproachFunction& af, const Readings& kelvin) {
    detail::check_sensors(af, kelvin);
    return from_convention(detail::polynomial(af, detail::convert(kelvin, af.unit)), af.unit);
}

/// Readings tagged with the unit they are expressed in.
struct ConventionReadings {
    UnitConvention unit;
    Readings values;
};

/// Estimate in the readings' own unit. Refuses readings in a convention
/// other than the one the function was fitted in.
[[nodiscard]] inline double evaluate_in(const ApproachFunction& af, const ConventionReadings& r) {
    if (r.unit != af.unit)
        throw ConventionMismatch(std::string("function was fitted in ") + to_string(af.unit) +
                                 " but readings are in " + to_string(r.unit));
    detail::check_sensors(af, r.values);
    return detail::polynomial(af, r.values);
}

struct ResidualStats {
    double max_abs = 0.0;  ///< K
    double rms = 0.0;      ///< K
    std::size_t worst_row = 0;
};

/// Statistics of T_medium - evaluate(af, row) over all rows.
[[nodiscard]] inline ResidualStats residual_stats(const ApproachFunction& af, const CharacteristicMap& map) {
    if (map.rows.empty()) throw PreconditionViolation("map has no rows");
    ResidualStats st;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < map.rows.size(); ++i) {
        const double r = map.rows[i].T_medium - evaluate(af, map.rows[i].t);
        sum_sq += r * r;
        if (std::abs(r) > st.max_abs) {
            st.max_abs = std::abs(r);
            st.worst_row = i;
        }
    }
    st.rms = std::sqrt(sum_sq / static_cast<double>(map.rows.size()));
    return st;
}

[[nodiscard]] inline ApproachFunction fit_least_squares(const CharacteristicMap& map, const BasisTemplate& basis,
                                                        UnitConvention unit = UnitConvention::celsius) {
    basis.validate();
    const auto cols = basis.columns();
    const auto m = static_cast<Eigen::Index>(map.rows.size());
    const auto n = static_cast<Eigen::Index>(cols.size());
    if (m < n)
        throw PreconditionViolation("map has " + std::to_string(m) + " rows, fewer than the " +
                                    std::to_string(n) + " basis columns");

    Eigen::MatrixXd A(m, n);
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& row = map.rows[static_cast<std::size_t>(i)];
        const Readings x = detail::convert(row.t, unit);
        for (Eigen::Index k = 0; k < n; ++k) A(i, k) = detail::eval_monomial(cols[static_cast<std::size_t>(k)], x);
        y[i] = to_convention(row.T_medium, unit);
    }

    const Eigen::VectorXd norms = A.colwise().norm();
    double condition = std::numeric_limits<double>::infinity();
    if ((norms.array() > 0.0).all()) {
        const Eigen::MatrixXd As = A * norms.cwiseInverse().asDiagonal();
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(As);
        const auto& sv = svd.singularValues();
        condition = sv[n - 1] > 0.0 ? sv[0] / sv[n - 1] : std::numeric_limits<double>::infinity();
    }
    if (!(condition <= kConditionLimit)) throw RankDeficient(condition);

    const Eigen::MatrixXd As = A * norms.cwiseInverse().asDiagonal();
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(As);
    Eigen::VectorXd bs = qr.solve(y);
    bs += qr.solve(y - As * bs);  // one step of iterative refinement
    const Eigen::VectorXd b = bs.cwiseQuotient(norms);

    ApproachFunction af;
    af.basis = basis;
    af.unit = unit;
    af.coefficients.assign(b.data(), b.data() + b.size());

    Eigen::VectorXd r(m);
    for (Eigen::Index i = 0; i < m; ++i) r[i] = map.rows[static_cast<std::size_t>(i)].T_medium - evaluate(af, map.rows[static_cast<std::size_t>(i)].t);
    const double ynorm = std::max(y.norm(), std::numeric_limits<double>::min());
    af.diagnostics.max_abs_residual = r.cwiseAbs().maxCoeff();
    af.diagnostics.rms_residual = std::sqrt(r.squaredNorm() / static_cast<double>(m));
    af.diagnostics.condition_number = condition;
    af.diagnostics.orthogonality = ((As.transpose() * r).cwiseAbs().maxCoeff()) / ynorm;
    return af;
}

// ---------------------------------------------------------------------------
// Subset selection
// ---------------------------------------------------------------------------

struct SelectionConstraints {
    std::size_t max_sensors = kSensorCount;
    std::size_t max_terms = 64;  ///< limit on basis columns per candidate
};

struct Candidate {
    ApproachFunction function;
    double fit_max_residual = 0.0;         ///< K on the fitting map
    double validation_max_residual = 0.0;  ///< K on the validation map
    std::size_t sensor_count = 0;
};

struct ExcludedCandidate {
    std::vector<std::size_t> subset;
    std::string reason;
    double condition_number = 0.0;
};

struct SelectionReport {
    std::vector<Candidate> ranked;  ///< ascending validation residual; ranked.front() is the winner
    std::vector<ExcludedCandidate> excluded;
    std::vector<std::string> tie_break_trace;

    [[nodiscard]] const Candidate& winner() const { return ranked.front(); }
    [[nodiscard]] std::size_t candidate_count() const { return ranked.size() + excluded.size(); }
};

[[nodiscard]] inline std::string subset_name(const std::vector<std::size_t>& subset) {
    std::string s = "{";
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (i) s += ',';
        s += sensor_name(subset[i]);
    }
    return s + "}";
}

/// Every subset of {t1..t6} with min_size..max_size members, in
/// lexicographic order within each size, smaller sizes first.
[[nodiscard]] inline std::vector<std::vector<std::size_t>> enumerate_subsets(std::size_t min_size, std::size_t max_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t k = min_size; k <= max_size; ++k) {
        std::vector<std::size_t> idx(k);
        for (std::size_t i = 0; i < k; ++i) idx[i] = i;
        while (true) {
            out.push_back(idx);
            std::size_t i = k;
            while (i > 0 && idx[i - 1] == kSensorCount - k + i - 1) --i;
            if (i == 0) break;
            ++idx[i - 1];
            for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
        }
    }
    return out;
}

[[nodiscard]] inline SelectionReport select_subset(const CharacteristicMap& fit_map, const CharacteristicMap& val_map,
                                                   const FamilyRule& rule = {},
                                                   const SelectionConstraints& constraints = {},
                                                   UnitConvention unit = UnitConvention::celsius) {
    if (constraints.max_sensors < 2 || constraints.max_sensors > kSensorCount)
        throw PreconditionViolation("max_sensors must lie in [2, 6]; subsets start at two sensors");
    if (constraints.max_terms < 1) throw PreconditionViolation("max_terms must be >= 1");

    SelectionReport report;
    for (const auto& subset : enumerate_subsets(2, constraints.max_sensors)) {
        const BasisTemplate basis = full_basis(subset, rule);
        if (basis.column_count() > constraints.max_terms) {
            report.excluded.push_back({subset, "exceeds max_terms", 0.0});
            continue;
        }
        try {
            Candidate c;
            c.function = fit_least_squares(fit_map, basis, unit);
            c.fit_max_residual = c.function.diagnostics.max_abs_residual;
            c.validation_max_residual = residual_stats(c.function, val_map).max_abs;
            c.sensor_count = subset.size();
            report.ranked.push_back(std::move(c));
        } catch (const RankDeficient& e) {
            report.excluded.push_back({subset, "rank deficient", e.condition_number()});
        }
    }
    if (report.ranked.empty())
        throw NoFeasibleCandidate("every candidate subset was excluded (rank deficient or too many terms)");

    auto key = [](const Candidate& c) {
        return std::tuple(c.validation_max_residual, c.sensor_count, c.function.basis.column_count());
    };
    std::stable_sort(report.ranked.begin(), report.ranked.end(), [&](const Candidate& a, const Candidate& b) {
        if (key(a) != key(b)) return key(a) < key(b);
        return a.function.basis.sensor_subset < b.function.basis.sensor_subset;
    });
    for (std::size_t i = 1; i < report.ranked.size(); ++i) {
        const auto& a = report.ranked[i - 1];
        const auto& b = report.ranked[i];
        if (a.validation_max_residual != b.validation_max_residual) continue;
        const char* by = a.sensor_count != b.sensor_count ? "fewer sensors"
                         : a.function.basis.column_count() != b.function.basis.column_count()
                             ? "fewer terms"
                             : "lexicographic subset order";
        report.tie_break_trace.push_back(subset_name(a.function.basis.sensor_subset) + " before " +
                                         subset_name(b.function.basis.sensor_subset) +
                                         ": equal validation residual, broken by " + by);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

[[nodiscard]] inline nlohmann::json to_json(const ApproachFunction& af) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& t : af.basis.terms) terms.push_back(std::vector<int>(t.begin(), t.end()));
    nlohmann::json names = nlohmann::json::array();
    for (const auto& c : af.basis.columns()) names.push_back(to_string(c));
    return {
        {"format", "probemap.approach_function"},
        {"version", 1},
        {"unit_convention", to_string(af.unit)},
        {"sensor_subset", af.basis.sensor_subset},
        {"terms", terms},
        {"include_intercept", af.basis.include_intercept},
        {"columns", names},
        {"coefficients", af.coefficients},
        {"diagnostics",
         {{"max_abs_residual_K", af.diagnostics.max_abs_residual},
          {"rms_residual_K", af.diagnostics.rms_residual},
          {"condition_number", af.diagnostics.condition_number},
          {"orthogonality", af.diagnostics.orthogonality}}},
    };
}

[[nodiscard]] inline ApproachFunction approach_function_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "probemap.approach_function")
            throw SchemaError("not an approach-function document");
        ApproachFunction af;
        af.unit = parse_unit_convention(j.at("unit_convention").get<std::string>());
        af.basis.sensor_subset = j.at("sensor_subset").get<std::vector<std::size_t>>();
        for (const auto& t : j.at("terms")) {
            const auto e = t.get<std::vector<int>>();
            if (e.size() != kSensorCount) throw SchemaError("term exponent list must have 6 entries");
            Monomial m{};
            for (std::size_t s = 0; s < kSensorCount; ++s) {
                if (e[s] < 0 || e[s] > 2) throw SchemaError("term exponent out of range");
                m[s] = static_cast<std::uint8_t>(e[s]);
            }
            af.basis.terms.push_back(m);
        }
        af.basis.include_intercept = j.at("include_intercept").get<bool>();
        af.coefficients = j.at("coefficients").get<std::vector<double>>();
        const auto& d = j.at("diagnostics");
        af.diagnostics.max_abs_residual = d.at("max_abs_residual_K").get<double>();
        af.diagnostics.rms_residual = d.at("rms_residual_K").get<double>();
        af.diagnostics.condition_number = d.at("condition_number").get<double>();
        af.diagnostics.orthogonality = d.at("orthogonality").get<double>();
        try {
            af.basis.validate();
        } catch (const PreconditionViolation& e) {
            throw SchemaError(e.what());
        }
        if (af.coefficients.size() != af.basis.column_count())
            throw SchemaError("coefficient count does not match the basis");
        return af;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("approach-function document: ") + e.what());
    }
}

inline void save_approach_function(const ApproachFunction& af, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << to_json(af).dump(2) << '\n';
    if (!f) throw IoError("failed to write '" + path + "'");
}

[[nodiscard]] inline ApproachFunction load_approach_function(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("cannot parse '") + path + "': " + e.what());
    }
    return approach_function_from_json(j);
}

}  // namespace probemap
