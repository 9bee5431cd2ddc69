#pragma once

// Batch pipeline: configuration file, stage drivers and report writers.
//
// The configuration is an INI file (see config/default.ini). Every key is
// required; a missing or malformed key is a ValidationError naming it.

#include "probemap/errors.hpp"
#include "probemap/fit.hpp"
#include "probemap/geometry.hpp"
#include "probemap/quantize.hpp"
#include "probemap/sweep.hpp"
#include "probemap/thermal_core.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

namespace probemap {

struct FitOptions {
    bool family = false;  ///< false: eq2 preset, true: select over the template family
    UnitConvention unit = UnitConvention::celsius;
    double bound_K = 1.8;
};

struct QuantizeOptions {
    QFormat qformat;
    double range_margin_K = 1.0;
};

struct Budgets {
    std::size_t flash_bytes = 10240;
    std::size_t ram_bytes = 320;
    double sample_rate_hz = 1000.0;
};

struct PipelineConfig {
    std::string output_dir = "out";
    MaterialCatalog materials;
    AssemblyParams assembly;
    SolverOptions solver;
    SweepSpec sweep;
    unsigned threads = 0;
    Scenario field_scenario;
    FitOptions fit;
    FamilyRule family;
    SelectionConstraints selection;
    QuantizeOptions quantize;
    McuProfile mcu;
    Budgets budgets;
};

namespace detail {

namespace pt = boost::property_tree;

class ConfigReader {
public:
    explicit ConfigReader(const pt::ptree& tree) : tree_(tree) {}

    const pt::ptree& section(const std::string& name) const {
        const auto it = tree_.find(name);
        if (it == tree_.not_found()) throw InvalidParams("[" + name + "]", "section is missing");
        return it->second;
    }

    std::string text(const std::string& sec, const std::string& key) const {
        const auto& s = section(sec);
        const auto it = s.find(key);
        if (it == s.not_found()) throw InvalidParams(sec + "." + key, "key is missing");
        return it->second.data();
    }

    double number(const std::string& sec, const std::string& key) const {
        const std::string v = text(sec, key);
        double out = 0.0;
        const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out))
            throw InvalidParams(sec + "." + key, "'" + v + "' is not a number");
        return out;
    }

    long long integer(const std::string& sec, const std::string& key) const {
        const double v = number(sec, key);
        if (v != std::floor(v)) throw InvalidParams(sec + "." + key, "must be an integer");
        return static_cast<long long>(v);
    }

    std::size_t count(const std::string& sec, const std::string& key) const {
        const auto v = integer(sec, key);
        if (v < 0) throw InvalidParams(sec + "." + key, "must be >= 0");
        return static_cast<std::size_t>(v);
    }

    bool flag(const std::string& sec, const std::string& key) const {
        const std::string v = text(sec, key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw InvalidParams(sec + "." + key, "'" + v + "' is not a boolean");
    }

    const pt::ptree& tree() const { return tree_; }

private:
    const pt::ptree& tree_;
};

inline ProbeSpec parse_probe(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    std::string region;
    ProbeSpec p;
    if (!(is >> region >> p.fx >> p.fz)) throw InvalidParams("probes." + key, "expected '<hole|board> fx fz'");
    std::string rest;
    if (is >> rest) throw InvalidParams("probes." + key, "trailing text '" + rest + "'");
    if (region == "hole") {
        p.region = ProbeRegion::drill_hole;
    } else if (region == "board") {
        p.region = ProbeRegion::board;
    } else {
        throw InvalidParams("probes." + key, "unknown region '" + region + "'");
    }
    return p;
}

}  // namespace detail

[[nodiscard]] inline PipelineConfig parse_config(std::istream& is) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(is, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw SchemaError(std::string("configuration: ") + e.what());
    }
    const detail::ConfigReader rd(tree);
    PipelineConfig c;

    c.output_dir = rd.text("output", "dir");

    for (const auto& [name, sec] : tree) {
        const std::string prefix = "material:";
        if (name.rfind(prefix, 0) != 0) continue;
        Material m;
        m.name = name.substr(prefix.size());
        m.conductivity = rd.number(name, "conductivity");
        m.density = rd.number(name, "density");
        m.specific_heat = rd.number(name, "specific_heat");
        m.emissivity = rd.number(name, "emissivity");
        if (!(m.conductivity > 0.0)) throw InvalidParams(name + ".conductivity", "must be > 0");
        if (!(m.density > 0.0)) throw InvalidParams(name + ".density", "must be > 0");
        if (!(m.specific_heat > 0.0)) throw InvalidParams(name + ".specific_heat", "must be > 0");
        if (!(m.emissivity >= 0.0 && m.emissivity <= 1.0))
            throw InvalidParams(name + ".emissivity", "must lie in [0, 1]");
        c.materials[m.name] = m;
    }
    if (c.materials.empty()) throw InvalidParams("[material:*]", "no material sections");

    auto& a = c.assembly;
    const std::string as = "assembly";
    a.tube_wall_thickness = rd.number(as, "tube_wall_thickness_mm") * 1e-3;
    a.fitting_height = rd.number(as, "fitting_height_mm") * 1e-3;
    a.fitting_width = rd.number(as, "fitting_width_mm") * 1e-3;
    a.drill_hole_depth = rd.number(as, "drill_hole_depth_mm") * 1e-3;
    a.drill_hole_diameter = rd.number(as, "drill_hole_diameter_mm") * 1e-3;
    a.board_offset = rd.number(as, "board_offset_mm") * 1e-3;
    a.board_thickness = rd.number(as, "board_thickness_mm") * 1e-3;
    a.cell_size = rd.number(as, "cell_size_mm") * 1e-3;
    a.out_of_plane_depth = rd.number(as, "out_of_plane_depth_mm") * 1e-3;
    a.metal = rd.text(as, "metal");
    a.laminate = rd.text(as, "laminate");
    a.fill = rd.text(as, "fill");
    a.h_medium = rd.number(as, "h_medium");
    a.h_ambient = rd.number(as, "h_ambient");
    a.radiation = rd.flag(as, "radiation");
    for (std::size_t s = 0; s < kSensorCount; ++s)
        a.probes[s] = detail::parse_probe(sensor_name(s), rd.text("probes", sensor_name(s)));
    for (const auto* name : {&a.metal, &a.laminate, &a.fill}) {
        if (!c.materials.contains(*name)) throw UnknownMaterial(*name);
    }

    c.solver.tolerance = rd.number("solver", "tolerance_W");
    c.solver.max_iterations = static_cast<int>(rd.integer("solver", "max_iterations"));
    const std::string method = rd.text("solver", "method");
    if (method == "newton") {
        c.solver.method = NonlinearMethod::newton;
    } else if (method == "lagged") {
        c.solver.method = NonlinearMethod::lagged;
    } else {
        throw InvalidParams("solver.method", "must be 'newton' or 'lagged'");
    }
    if (!(c.solver.tolerance > 0.0)) throw InvalidParams("solver.tolerance_W", "must be > 0");
    if (c.solver.max_iterations < 1) throw InvalidParams("solver.max_iterations", "must be >= 1");

    c.sweep.medium_axis = linear_axis(celsius_to_kelvin(rd.number("sweep", "medium_first_C")),
                                      celsius_to_kelvin(rd.number("sweep", "medium_last_C")),
                                      rd.number("sweep", "medium_step_K"));
    c.sweep.ambient_axis = linear_axis(celsius_to_kelvin(rd.number("sweep", "ambient_first_C")),
                                       celsius_to_kelvin(rd.number("sweep", "ambient_last_C")),
                                       rd.number("sweep", "ambient_step_K"));
    c.sweep.validate();
    c.threads = static_cast<unsigned>(rd.count("sweep", "threads"));
    c.field_scenario.T_medium = celsius_to_kelvin(rd.number("sweep", "field_T_medium_C"));
    c.field_scenario.T_ambient = celsius_to_kelvin(rd.number("sweep", "field_T_ambient_C"));
    c.field_scenario.validate();

    const std::string tmpl = rd.text("fit", "template");
    if (tmpl == "eq2") {
        c.fit.family = false;
    } else if (tmpl == "family") {
        c.fit.family = true;
    } else {
        throw InvalidParams("fit.template", "must be 'eq2' or 'family'");
    }
    try {
        c.fit.unit = parse_unit_convention(rd.text("fit", "unit_convention"));
    } catch (const SchemaError&) {
        throw InvalidParams("fit.unit_convention", "must be 'kelvin' or 'celsius'");
    }
    c.fit.bound_K = rd.number("fit", "bound_K");

    c.selection.max_sensors = rd.count("select", "max_sensors");
    c.selection.max_terms = rd.count("select", "max_terms");
    c.family.max_degree = static_cast<int>(rd.integer("select", "max_degree"));
    c.family.include_intercept = rd.flag("select", "include_intercept");
    if (c.selection.max_sensors < 2 || c.selection.max_sensors > kSensorCount)
        throw InvalidParams("select.max_sensors", "must lie in [2, 6]");
    if (c.family.max_degree < 1 || c.family.max_degree > 2)
        throw InvalidParams("select.max_degree", "must be 1 or 2");

    c.quantize.qformat.integer_bits = static_cast<int>(rd.integer("quantize", "integer_bits"));
    c.quantize.qformat.fraction_bits = static_cast<int>(rd.integer("quantize", "fraction_bits"));
    c.quantize.range_margin_K = rd.number("quantize", "range_margin_K");
    c.quantize.qformat.validate();
    if (!(c.quantize.range_margin_K >= 0.0)) throw InvalidParams("quantize.range_margin_K", "must be >= 0");

    c.mcu.clock_hz = rd.number("mcu", "clock_hz");
    c.mcu.cycles_per_mac = rd.number("mcu", "cycles_per_mac");
    c.mcu.cycles_per_sample_overhead = rd.number("mcu", "cycles_per_sample_overhead");
    c.mcu.code_bytes_per_term = rd.count("mcu", "code_bytes_per_term");
    c.mcu.runtime_bytes = rd.count("mcu", "runtime_bytes");
    c.mcu.validate();

    c.budgets.flash_bytes = rd.count("budget", "flash_bytes");
    c.budgets.ram_bytes = rd.count("budget", "ram_bytes");
    c.budgets.sample_rate_hz = rd.number("budget", "sample_rate_hz");

    // Geometry constraints are checked here so that a bad config fails before any stage runs.
    (void)halfmodel_geometry(c.assembly);
    (void)place_probes(c.assembly);
    return c;
}

[[nodiscard]] inline PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open configuration '" + path + "'");
    return parse_config(f);
}

// ---------------------------------------------------------------------------
// Stage drivers
// ---------------------------------------------------------------------------

namespace detail {

inline std::filesystem::path ensure_dir(const std::string& dir) {
    if (dir.empty()) throw IoError("empty output directory");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
    return std::filesystem::path(dir);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f << text;
    if (!f) throw IoError("failed to write '" + path.string() + "'");
}

inline std::string fixed(double v, int digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

inline const char* pass_fail(bool ok) { return ok ? "PASS" : "FAIL"; }

}  // namespace detail

struct SweepOutputs {
    CharacteristicMap map;
    CharacteristicMap validation;
    std::filesystem::path map_path, validation_path, field_path;
};

[[nodiscard]] inline std::string field_file_name(const Scenario& s) {
    return "field_" + format_double(kelvin_to_celsius(s.T_medium)) + "_" +
           format_double(kelvin_to_celsius(s.T_ambient)) + ".csv";
}

inline SweepOutputs cmd_sweep(const PipelineConfig& c, std::ostream& log) {
    const auto dir = detail::ensure_dir(c.output_dir);
    const HalfModel model = build_halfmodel(c.assembly, c.materials);
    SweepOptions opt{c.solver, c.threads};

    SweepOutputs out;
    out.map = run_sweep(model.network, model.layout, c.sweep, opt);
    out.validation = run_sweep(model.network, model.layout, c.sweep.midpoints(), opt);
    out.map_path = dir / "map.csv";
    out.validation_path = dir / "map_validation.csv";
    export_map(out.map, out.map_path.string());
    export_map(out.validation, out.validation_path.string());

    const auto field = solve_steady(model.network, c.field_scenario, c.solver);
    std::string text = "x,z,T\n";
    const auto& g = model.geometry;
    for (std::size_t k = 0; k < g.nz; ++k) {
        for (std::size_t i = 0; i < g.nx; ++i) {
            text += format_double(g.x_center(i)) + ',' + format_double(g.z_center(k)) + ',' +
                    format_double(field.temperatures[g.index(i, k)]) + '\n';
        }
    }
    out.field_path = dir / field_file_name(c.field_scenario);
    detail::write_text(out.field_path, text);

    log << "sweep: " << model.network.node_count() << " nodes, " << c.sweep.medium_axis.size() << " x "
        << c.sweep.ambient_axis.size() << " grid -> " << out.map_path.string() << "\n";
    log << "sweep: validation grid " << out.validation.spec.medium_axis.size() << " x "
        << out.validation.spec.ambient_axis.size() << " -> " << out.validation_path.string() << "\n";
    log << "sweep: field -> " << out.field_path.string() << "\n";
    return out;
}

[[nodiscard]] inline std::string residual_csv(const ApproachFunction& af, const CharacteristicMap& map) {
    std::string text = "T_medium,T_ambient,estimate,residual\n";
    for (const auto& r : map.rows) {
        const double e = evaluate(af, r.t);
        text += format_double(r.T_medium) + ',' + format_double(r.T_ambient) + ',' + format_double(e) + ',' +
                format_double(r.T_medium - e) + '\n';
    }
    return text;
}

[[nodiscard]] inline std::string selection_table(const SelectionReport& rep) {
    std::string text = "rank,subset,terms,fit_max_residual_K,validation_max_residual_K,status\n";
    for (std::size_t i = 0; i < rep.ranked.size(); ++i) {
        const auto& c = rep.ranked[i];
        text += std::to_string(i + 1) + ',' + subset_name(c.function.basis.sensor_subset) + ',' +
                std::to_string(c.function.basis.column_count()) + ',' + format_double(c.fit_max_residual) + ',' +
                format_double(c.validation_max_residual) + ',' + (i == 0 ? "winner" : "ranked") + '\n';
    }
    for (const auto& e : rep.excluded) {
        text += std::string("-,") + subset_name(e.subset) + ",-,-,-,excluded (" + e.reason + ")\n";
    }
    return text;
}

struct FitOutputs {
    ApproachFunction function;
    ResidualStats fit_stats;
    std::optional<ResidualStats> validation_stats;
    std::optional<SelectionReport> selection;
    bool within_bound = false;
};

/// Fits the configured template on `map_path`. With a validation map the
/// report also states the held-out residual; the bound applies to both.
inline FitOutputs cmd_fit(const PipelineConfig& c, const std::string& map_path,
                          const std::optional<std::string>& validation_path, std::ostream& log) {
    const auto dir = detail::ensure_dir(c.output_dir);
    const CharacteristicMap map = import_map(map_path);
    std::optional<CharacteristicMap> val;
    if (validation_path) val = import_map(*validation_path);

    FitOutputs out;
    if (c.fit.family) {
        out.selection = select_subset(map, val ? *val : map, c.family, c.selection, c.fit.unit);
        out.function = out.selection->winner().function;
        detail::write_text(dir / "fit_selection.csv", selection_table(*out.selection));
    } else {
        out.function = fit_least_squares(map, eq2_preset(), c.fit.unit);
    }
    out.fit_stats = residual_stats(out.function, map);
    if (val) out.validation_stats = residual_stats(out.function, *val);
    out.within_bound = out.fit_stats.max_abs <= c.fit.bound_K &&
                       (!out.validation_stats || out.validation_stats->max_abs <= c.fit.bound_K);

    save_approach_function(out.function, (dir / "approach.json").string());
    detail::write_text(dir / "residuals.csv", residual_csv(out.function, map));

    std::string rep;
    rep += "# approach function fit\n";
    rep += "status: " + std::string(detail::pass_fail(out.within_bound)) + " (max_abs <= " +
           format_double(c.fit.bound_K) + " K)\n";
    rep += "fit max_abs_residual_K: " + format_double(out.fit_stats.max_abs) + "\n";
    rep += "fit rms_residual_K: " + format_double(out.fit_stats.rms) + "\n";
    if (out.validation_stats) {
        rep += "validation max_abs_residual_K: " + format_double(out.validation_stats->max_abs) + "\n";
        rep += "validation rms_residual_K: " + format_double(out.validation_stats->rms) + "\n";
    }
    rep += "condition_number: " + format_double(out.function.diagnostics.condition_number) + "\n";
    rep += "unit_convention: " + std::string(to_string(out.function.unit)) + "\n";
    rep += "sensor_subset: " + subset_name(out.function.basis.sensor_subset) + "\n";
    const auto cols = out.function.basis.columns();
    for (std::size_t k = 0; k < cols.size(); ++k)
        rep += "b" + std::to_string(k) + " * " + to_string(cols[k]) + ": " + format_double(out.function.coefficients[k]) + "\n";
    if (out.selection) {
        for (const auto& e : out.selection->excluded)
            rep += "excluded " + subset_name(e.subset) + ": " + e.reason + "\n";
    }
    const auto& worst = map.rows[out.fit_stats.worst_row];
    rep += "worst fit row: T_medium=" + format_double(worst.T_medium) + " K, T_ambient=" +
           format_double(worst.T_ambient) + " K\n";
    detail::write_text(dir / "fit_report.txt", rep);

    log << "fit: " << subset_name(out.function.basis.sensor_subset) << " max |residual| "
        << detail::fixed(out.fit_stats.max_abs, 4) << " K";
    if (out.validation_stats) log << " (validation " << detail::fixed(out.validation_stats->max_abs, 4) << " K)";
    log << " " << detail::pass_fail(out.within_bound) << "\n";
    return out;
}

inline SelectionReport cmd_select(const PipelineConfig& c, const std::string& fit_map_path,
                                  const std::string& val_map_path, std::ostream& log) {
    const auto dir = detail::ensure_dir(c.output_dir);
    const CharacteristicMap fit_map = import_map(fit_map_path);
    const CharacteristicMap val_map = import_map(val_map_path);
    SelectionReport rep = select_subset(fit_map, val_map, c.family, c.selection, c.fit.unit);
    std::string text = selection_table(rep);
    detail::write_text(dir / "selection.csv", text);
    std::string trace;
    for (const auto& t : rep.tie_break_trace) trace += t + "\n";
    detail::write_text(dir / "selection_ties.txt", trace);
    log << "select: " << rep.candidate_count() << " candidates, " << rep.excluded.size() << " excluded, winner "
        << subset_name(rep.winner().function.basis.sensor_subset) << " ("
        << detail::fixed(rep.winner().validation_max_residual, 5) << " K)\n";
    return rep;
}

struct QuantizeOutputs {
    std::optional<FixedPointProgram> program;
    std::optional<ResourceReport> resources;
    bool budgets_met = false;
};

/// Compiles the function over the reading range of `range_map_path`.
/// Throws OverflowRisk after writing a FAIL report when the proof fails.
inline QuantizeOutputs cmd_quantize(const PipelineConfig& c, const std::string& function_path,
                                    const std::string& range_map_path, std::ostream& log) {
    const auto dir = detail::ensure_dir(c.output_dir);
    const ApproachFunction af = load_approach_function(function_path);
    const CharacteristicMap map = import_map(range_map_path);
    const OperatingRange range = reading_range(map, af.unit, c.quantize.range_margin_K);
    const QFormat& q = c.quantize.qformat;

    std::string rep = "# fixed-point program resources\n";
    rep += "qformat: Q(" + std::to_string(q.integer_bits) + "," + std::to_string(q.fraction_bits) + ") signed, " +
           std::to_string(q.width()) + "-bit words\n";
    rep += "rounding: coefficients and inputs round-to-nearest, alignment shifts truncate\n";

    QuantizeOutputs out;
    try {
        out.program = compile_fixed(af, q, range);
    } catch (const OverflowRisk& e) {
        rep += "compile: FAIL OverflowRisk: " + std::string(e.what()) + "\n";
        rep += "hint: increase integer_bits\n";
        detail::write_text(dir / "resources.txt", rep);
        log << "quantize: FAIL " << e.what() << "\n";
        throw;
    }
    save_program(*out.program, (dir / "program.json").string());
    out.resources = resource_report(*out.program, c.mcu);
    const auto& r = *out.resources;
    const bool ram = r.state_bytes <= c.budgets.ram_bytes;
    const bool flash = r.flash_bytes <= c.budgets.flash_bytes;
    const bool rate = r.estimated_max_sample_rate >= c.budgets.sample_rate_hz;
    out.budgets_met = ram && flash && rate;

    rep += "compile: PASS\n";
    rep += "error_bound_K: " + format_double(out.program->error_bound) + "\n";
    rep += "coefficient_bytes: " + std::to_string(r.coefficient_bytes) + "\n";
    rep += "mac_count: " + std::to_string(r.mac_count) + "\n";
    rep += "ram_state_bytes: " + std::to_string(r.state_bytes) + " (reference budget " +
           std::to_string(c.budgets.ram_bytes) + " B): " + detail::pass_fail(ram) + "\n";
    rep += "flash_bytes: " + std::to_string(r.flash_bytes) + " (reference budget " +
           std::to_string(c.budgets.flash_bytes) + " B): " + detail::pass_fail(flash) + "\n";
    rep += "sample_rate_hz: " + detail::fixed(r.estimated_max_sample_rate, 1) + " (reference " +
           format_double(c.budgets.sample_rate_hz) + " Hz at " + format_double(c.mcu.clock_hz) + " Hz, " +
           format_double(c.mcu.cycles_per_mac) + " cycles/MAC): " + detail::pass_fail(rate) + "\n";
    detail::write_text(dir / "resources.txt", rep);

    log << "quantize: " << out.program->instructions.size() << " instructions, bound "
        << format_double(out.program->error_bound) << " K, RAM " << r.state_bytes << " B, flash " << r.flash_bytes
        << " B, " << detail::fixed(r.estimated_max_sample_rate, 0) << " Hz\n";
    return out;
}

struct PipelineOutputs {
    SweepOutputs sweep;
    FitOutputs fit;
    SelectionReport selection;
    QuantizeOutputs quantize;
};

inline PipelineOutputs cmd_pipeline(const PipelineConfig& c, std::ostream& log) {
    PipelineOutputs out;
    out.sweep = cmd_sweep(c, log);
    out.fit = cmd_fit(c, out.sweep.map_path.string(), out.sweep.validation_path.string(), log);
    out.selection = cmd_select(c, out.sweep.map_path.string(), out.sweep.validation_path.string(), log);
    const auto dir = std::filesystem::path(c.output_dir);
    out.quantize = cmd_quantize(c, (dir / "approach.json").string(), out.sweep.map_path.string(), log);
    return out;
}

}  // namespace probemap
