#pragma once

// =============================================================================
// probemap - lumped thermal network
// =============================================================================
// Nodes carry a heat capacity C_i and exchange heat through
//   - symmetric conductance links         G_ij (T_j - T_i)
//   - convective reservoir couplings      hA (T_res - T_i)
//   - radiative reservoir couplings       epsSigmaA (T_res^4 - T_i^4)
//
// Reservoirs are the medium (refrigerant) and the ambient air. All
// temperatures are absolute (K).
//
// Steady state solves F(T) = 0 with F_i the net heat flow into node i.
// Transient integration uses backward Euler on C dT/dt = F(T).
// =============================================================================

#include "probemap/errors.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace probemap {

inline constexpr double kStefanBoltzmann = 5.670374419e-8;  // W/(m^2 K^4), CODATA 2018
inline constexpr double kCelsiusOffset = 273.15;

[[nodiscard]] constexpr double celsius_to_kelvin(double c) { return c + kCelsiusOffset; }
[[nodiscard]] constexpr double kelvin_to_celsius(double k) { return k - kCelsiusOffset; }

struct Material {
    std::string name;
    double conductivity = 0.0;   ///< W/(m K)
    double density = 0.0;        ///< kg/m^3
    double specific_heat = 0.0;  ///< J/(kg K)
    double emissivity = 0.0;     ///< [0, 1]

    /// Throws InvalidParams naming the first violated field.
    void validate() const {
        if (!(conductivity > 0.0)) throw InvalidParams(name + ".conductivity", "must be > 0");
        if (!(density > 0.0)) throw InvalidParams(name + ".density", "must be > 0");
        if (!(specific_heat > 0.0))
            throw InvalidParams(name + ".specific_heat", "must be > 0");
        if (!(emissivity >= 0.0 && emissivity <= 1.0))
            throw InvalidParams(name + ".emissivity", "must lie in [0, 1]");
    }
};

enum class Reservoir { medium, ambient };

struct ConductanceLink {
    std::size_t a;
    std::size_t b;
    double G;  ///< W/K
};

struct ConvectiveCoupling {
    std::size_t node;
    double hA;  ///< W/K
    Reservoir reservoir;
};

struct RadiativeCoupling {
    std::size_t node;
    double eps_sigma_A;  ///< W/K^4
    Reservoir reservoir;
};

/// Boundary temperatures and film-coefficient multipliers for one operating point.
struct Scenario {
    double T_medium = 300.0;   ///< K
    double T_ambient = 300.0;  ///< K
    double h_medium_scale = 1.0;
    double h_ambient_scale = 1.0;

    void validate() const {
        if (!(T_medium > 0.0)) throw InvalidParams("T_medium", "absolute temperature must be > 0 K");
        if (!(T_ambient > 0.0))
            throw InvalidParams("T_ambient", "absolute temperature must be > 0 K");
        if (!(h_medium_scale > 0.0)) throw InvalidParams("h_medium_scale", "must be > 0");
        if (!(h_ambient_scale > 0.0)) throw InvalidParams("h_ambient_scale", "must be > 0");
    }

    [[nodiscard]] double temperature(Reservoir r) const {
        return r == Reservoir::medium ? T_medium : T_ambient;
    }
    [[nodiscard]] double h_scale(Reservoir r) const {
        return r == Reservoir::medium ? h_medium_scale : h_ambient_scale;
    }
};

struct TemperatureField {
    std::vector<double> temperatures;  ///< K per node
    bool converged = false;
    int iterations = 0;
    double residual_norm = 0.0;  ///< max |F_i|, W
};

/// Immutable lumped network. Links are stored once per unordered pair; the
/// conductance matrix built from them is symmetric by construction.
class ThermalNetwork {
public:
    ThermalNetwork(std::vector<double> capacitances, std::vector<ConductanceLink> links,
                   std::vector<ConvectiveCoupling> convective,
                   std::vector<RadiativeCoupling> radiative)
        : capacitances_(std::move(capacitances)),
          links_(std::move(links)),
          convective_(std::move(convective)),
          radiative_(std::move(radiative)) {
        const std::size_t n = capacitances_.size();
        if (n == 0) throw InvalidNetwork("network has no nodes");
        for (std::size_t i = 0; i < n; ++i) {
            if (!(capacitances_[i] > 0.0))
                throw InvalidNetwork("capacitance of node " + std::to_string(i) + " must be > 0");
        }
        for (auto& l : links_) {
            if (l.a >= n || l.b >= n) throw InvalidNetwork("link references a node out of range");
            if (l.a == l.b) throw InvalidNetwork("self link on node " + std::to_string(l.a));
            if (!(l.G >= 0.0)) throw InvalidNetwork("negative conductance on a link");
            if (l.a > l.b) std::swap(l.a, l.b);
        }
        for (const auto& c : convective_) {
            if (c.node >= n) throw InvalidNetwork("convective coupling node out of range");
            if (!(c.hA >= 0.0)) throw InvalidNetwork("negative hA on a convective coupling");
        }
        for (const auto& r : radiative_) {
            if (r.node >= n) throw InvalidNetwork("radiative coupling node out of range");
            if (!(r.eps_sigma_A >= 0.0))
                throw InvalidNetwork("negative eps*sigma*A on a radiative coupling");
        }
        build_pattern();
    }

    [[nodiscard]] std::size_t node_count() const { return capacitances_.size(); }
    [[nodiscard]] std::span<const double> capacitances() const { return capacitances_; }
    [[nodiscard]] std::span<const ConductanceLink> links() const { return links_; }
    [[nodiscard]] std::span<const ConvectiveCoupling> convective() const { return convective_; }
    [[nodiscard]] std::span<const RadiativeCoupling> radiative() const { return radiative_; }
    [[nodiscard]] bool has_radiation() const {
        return std::any_of(radiative_.begin(), radiative_.end(),
                           [](const RadiativeCoupling& r) { return r.eps_sigma_A > 0.0; });
    }

    /// Same network with every radiative coupling removed.
    [[nodiscard]] ThermalNetwork without_radiation() const {
        return ThermalNetwork(capacitances_, links_, convective_, {});
    }

    /// Indices of connected components (through G > 0 links) that have no
    /// reservoir coupling. Empty iff the steady problem is well posed.
    [[nodiscard]] std::vector<std::size_t> floating_components() const {
        const std::size_t n = node_count();
        std::vector<std::size_t> parent(n);
        std::iota(parent.begin(), parent.end(), std::size_t{0});
        auto find = [&](std::size_t x) {
            while (parent[x] != x) {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            return x;
        };
        for (const auto& l : links_) {
            if (l.G > 0.0) parent[find(l.a)] = find(l.b);
        }
        std::vector<char> anchored(n, 0);
        for (const auto& c : convective_)
            if (c.hA > 0.0) anchored[find(c.node)] = 1;
        for (const auto& r : radiative_)
            if (r.eps_sigma_A > 0.0) anchored[find(r.node)] = 1;
        std::vector<std::size_t> floating;
        for (std::size_t i = 0; i < n; ++i) {
            if (find(i) == i && !anchored[i]) floating.push_back(i);
        }
        return floating;
    }

    /// Net heat flow into every node, W. Positive means the node would warm up.
    void residual(std::span<const double> T, const Scenario& s, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        for (const auto& l : links_) {
            const double q = l.G * (T[l.b] - T[l.a]);
            out[l.a] += q;
            out[l.b] -= q;
        }
        for (const auto& c : convective_) {
            out[c.node] += c.hA * s.h_scale(c.reservoir) * (s.temperature(c.reservoir) - T[c.node]);
        }
        for (const auto& r : radiative_) {
            const double Tr = s.temperature(r.reservoir);
            const double Ti = T[r.node];
            out[r.node] += r.eps_sigma_A * (Tr * Tr * Tr * Tr - Ti * Ti * Ti * Ti);
        }
    }

    /// Sparsity pattern of the system matrix (lower+upper, with diagonal).
    [[nodiscard]] const Eigen::SparseMatrix<double>& pattern() const { return pattern_; }
    /// Position of link k's (a,b) and (b,a) entries inside pattern().valuePtr().
    [[nodiscard]] std::span<const std::ptrdiff_t> link_slots_ab() const { return slot_ab_; }
    [[nodiscard]] std::span<const std::ptrdiff_t> link_slots_ba() const { return slot_ba_; }
    [[nodiscard]] std::span<const std::ptrdiff_t> diagonal_slots() const { return slot_diag_; }

private:
    void build_pattern() {
        const auto n = static_cast<Eigen::Index>(node_count());
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(links_.size() * 2 + node_count());
        for (Eigen::Index i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
        for (const auto& l : links_) {
            trip.emplace_back(static_cast<Eigen::Index>(l.a), static_cast<Eigen::Index>(l.b), 1.0);
            trip.emplace_back(static_cast<Eigen::Index>(l.b), static_cast<Eigen::Index>(l.a), 1.0);
        }
        pattern_.resize(n, n);
        pattern_.setFromTriplets(trip.begin(), trip.end(), [](double a, double) { return a; });
        pattern_.makeCompressed();

        auto slot = [&](std::size_t row, std::size_t col) -> std::ptrdiff_t {
            const auto c = static_cast<Eigen::Index>(col);
            const auto* outer = pattern_.outerIndexPtr();
            const auto* inner = pattern_.innerIndexPtr();
            const auto* first = inner + outer[c];
            const auto* last = inner + outer[c + 1];
            const auto* it = std::lower_bound(first, last, static_cast<Eigen::Index>(row));
            return it - inner;
        };
        slot_diag_.resize(node_count());
        for (std::size_t i = 0; i < node_count(); ++i) slot_diag_[i] = slot(i, i);
        slot_ab_.resize(links_.size());
        slot_ba_.resize(links_.size());
        for (std::size_t k = 0; k < links_.size(); ++k) {
            slot_ab_[k] = slot(links_[k].a, links_[k].b);
            slot_ba_[k] = slot(links_[k].b, links_[k].a);
        }
    }

    std::vector<double> capacitances_;
    std::vector<ConductanceLink> links_;
    std::vector<ConvectiveCoupling> convective_;
    std::vector<RadiativeCoupling> radiative_;

    Eigen::SparseMatrix<double> pattern_;
    std::vector<std::ptrdiff_t> slot_ab_;
    std::vector<std::ptrdiff_t> slot_ba_;
    std::vector<std::ptrdiff_t> slot_diag_;
};

enum class NonlinearMethod {
    newton,  ///< exact Jacobian, radiation contributes 4 eps sigma A T^3
    lagged,  ///< h_r = eps sigma A (T^2 + T_res^2)(T + T_res), re-solved to a fixed point
};

struct SolverOptions {
    double tolerance = 1e-9;  ///< W, max per-node residual
    int max_iterations = 50;
    NonlinearMethod method = NonlinearMethod::newton;
};

namespace detail {

[[nodiscard]] inline double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

/// Shared Newton / fixed-point driver. `mass[i]` is C_i/dt for transient
/// steps and 0 for the steady problem; `previous` is T^n in the transient case.
class NonlinearSolver {
public:
    NonlinearSolver(const ThermalNetwork& net, const Scenario& s, const SolverOptions& opt)
        : net_(net), scenario_(s), opt_(opt), matrix_(net.pattern()),
          residual_(net.node_count()), rhs_(static_cast<Eigen::Index>(net.node_count())) {
        if (!(opt.tolerance > 0.0)) throw PreconditionViolation("solver tolerance must be > 0");
        if (opt.max_iterations < 1) throw PreconditionViolation("max_iterations must be >= 1");
        s.validate();
        if (const auto floating = net.floating_components(); !floating.empty()) {
            throw SingularSystem("connected component containing node " +
                                 std::to_string(floating.front()) +
                                 " has no reservoir coupling");
        }
        ldlt_.analyzePattern(matrix_);
    }

    /// Iterates T in place to ||F(T) - mass (T - previous)||_inf <= tol.
    TemperatureField solve(std::vector<double> T, std::span<const double> mass,
                           std::span<const double> previous) {
        const std::size_t n = net_.node_count();
        for (int it = 1; it <= opt_.max_iterations; ++it) {
            const double res = evaluate(T, mass, previous);
            if (res <= opt_.tolerance) return {std::move(T), true, it, res};
            if (!std::isfinite(res)) throw NonConvergence(it, res);

            assemble(T, mass, opt_.method);
            ldlt_.factorize(matrix_);
            if (ldlt_.info() != Eigen::Success)
                throw SingularSystem("factorization of the conductance matrix failed");

            if (opt_.method == NonlinearMethod::newton) {
                for (std::size_t i = 0; i < n; ++i) rhs_[static_cast<Eigen::Index>(i)] = residual_[i];
                const Eigen::VectorXd delta = ldlt_.solve(rhs_);
                // Damp steps that would push a node to non-physical (<= 0 K) values.
                double step = 1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = delta[static_cast<Eigen::Index>(i)];
                    if (T[i] + d <= 0.0) step = std::min(step, 0.5 * T[i] / -d);
                }
                for (std::size_t i = 0; i < n; ++i) T[i] += step * delta[static_cast<Eigen::Index>(i)];
            } else {
                lagged_rhs(T, mass, previous);
                const Eigen::VectorXd next = ldlt_.solve(rhs_);
                for (std::size_t i = 0; i < n; ++i) T[i] = next[static_cast<Eigen::Index>(i)];
            }
        }
        const double res = evaluate(T, mass, previous);
        if (res <= opt_.tolerance) return {std::move(T), true, opt_.max_iterations + 1, res};
        throw NonConvergence(opt_.max_iterations, res);
    }

private:
    double evaluate(std::span<const double> T, std::span<const double> mass,
                    std::span<const double> previous) {
        net_.residual(T, scenario_, residual_);
        if (!mass.empty()) {
            for (std::size_t i = 0; i < residual_.size(); ++i)
                residual_[i] -= mass[i] * (T[i] - previous[i]);
        }
        return max_abs(residual_);
    }

    // System matrix: Laplacian + diag(hA + radiation term + C/dt).
    void assemble(std::span<const double> T, std::span<const double> mass, NonlinearMethod m) {
        double* v = matrix_.valuePtr();
        std::fill(v, v + matrix_.nonZeros(), 0.0);
        const auto diag = net_.diagonal_slots();
        const auto ab = net_.link_slots_ab();
        const auto ba = net_.link_slots_ba();
        const auto links = net_.links();
        for (std::size_t k = 0; k < links.size(); ++k) {
            const double G = links[k].G;
            v[ab[k]] -= G;
            v[ba[k]] -= G;
            v[diag[links[k].a]] += G;
            v[diag[links[k].b]] += G;
        }
        for (const auto& c : net_.convective())
            v[diag[c.node]] += c.hA * scenario_.h_scale(c.reservoir);
        for (const auto& r : net_.radiative()) {
            const double Ti = T[r.node];
            const double Tr = scenario_.temperature(r.reservoir);
            v[diag[r.node]] += m == NonlinearMethod::newton
                                   ? 4.0 * r.eps_sigma_A * Ti * Ti * Ti
                                   : r.eps_sigma_A * (Ti * Ti + Tr * Tr) * (Ti + Tr);
        }
        if (!mass.empty()) {
            for (std::size_t i = 0; i < mass.size(); ++i) v[diag[i]] += mass[i];
        }
    }

    void lagged_rhs(std::span<const double> T, std::span<const double> mass,
                    std::span<const double> previous) {
        rhs_.setZero();
        for (const auto& c : net_.convective()) {
            rhs_[static_cast<Eigen::Index>(c.node)] +=
                c.hA * scenario_.h_scale(c.reservoir) * scenario_.temperature(c.reservoir);
        }
        for (const auto& r : net_.radiative()) {
            const double Ti = T[r.node];
            const double Tr = scenario_.temperature(r.reservoir);
            rhs_[static_cast<Eigen::Index>(r.node)] +=
                r.eps_sigma_A * (Ti * Ti + Tr * Tr) * (Ti + Tr) * Tr;
        }
        if (!mass.empty()) {
            for (std::size_t i = 0; i < mass.size(); ++i)
                rhs_[static_cast<Eigen::Index>(i)] += mass[i] * previous[i];
        }
    }

    const ThermalNetwork& net_;
    Scenario scenario_;
    SolverOptions opt_;
    Eigen::SparseMatrix<double> matrix_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
    std::vector<double> residual_;
    Eigen::VectorXd rhs_;
};

}  // namespace detail

/// Steady-state field. The initial guess is the mean of the two reservoir
/// temperatures; `iterations` counts residual evaluations, so an exact
/// initial guess reports 1.
[[nodiscard]] inline TemperatureField solve_steady(const ThermalNetwork& net, const Scenario& s,
                                                   const SolverOptions& opt = {}) {
    detail::NonlinearSolver solver(net, s, opt);
    std::vector<double> T(net.node_count(), 0.5 * (s.T_medium + s.T_ambient));
    return solver.solve(std::move(T), {}, {});
}

/// Backward Euler integration; returns one field per step (the initial
/// field is not included).
[[nodiscard]] inline std::vector<TemperatureField> solve_transient(
    const ThermalNetwork& net, const Scenario& s, std::span<const double> T_initial, double dt,
    int steps, const SolverOptions& opt = {}) {
    if (!(dt > 0.0)) throw PreconditionViolation("dt must be > 0");
    if (steps < 1) throw PreconditionViolation("steps must be >= 1");
    if (T_initial.size() != net.node_count())
        throw PreconditionViolation("T_initial length does not match node count");

    detail::NonlinearSolver solver(net, s, opt);
    std::vector<double> mass(net.node_count());
    for (std::size_t i = 0; i < mass.size(); ++i) mass[i] = net.capacitances()[i] / dt;

    std::vector<TemperatureField> out;
    out.reserve(static_cast<std::size_t>(steps));
    std::vector<double> previous(T_initial.begin(), T_initial.end());
    for (int k = 0; k < steps; ++k) {
        auto field = solver.solve(previous, mass, previous);
        previous = field.temperatures;
        out.push_back(std::move(field));
    }
    return out;
}

/// Net heat flow into the network through all reservoir couplings, W.
/// Conductance links cancel pairwise, so at steady state this is the sum of
/// the per-node residuals.
[[nodiscard]] inline double energy_residual(const ThermalNetwork& net, const TemperatureField& field,
                                            const Scenario& s) {
    if (field.temperatures.size() != net.node_count())
        throw PreconditionViolation("field length does not match node count");
    const auto& T = field.temperatures;
    double q = 0.0;
    for (const auto& c : net.convective())
        q += c.hA * s.h_scale(c.reservoir) * (s.temperature(c.reservoir) - T[c.node]);
    for (const auto& r : net.radiative()) {
        const double Tr = s.temperature(r.reservoir);
        const double Ti = T[r.node];
        q += r.eps_sigma_A * (Tr * Tr * Tr * Tr - Ti * Ti * Ti * Ti);
    }
    return q;
}

}  // namespace probemap
