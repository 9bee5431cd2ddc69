#pragma once

// =============================================================================
// probemap - fixed-point straight-line programs for approach functions
// =============================================================================
// Data words are signed Q(I.F): W = I + F + 1 bits. Inputs are rounded to
// the nearest multiple of 2^-F. Every coefficient b_k is stored as a
// W-bit integer c_k with its own scale 2^-s_k (round to nearest), so small
// quadratic coefficients keep their precision. The program is a sequence of
//
//     LOAD  r_j  <- round(t_j * 2^F)
//     MUL   p    <- (r_a * r_b) >> F                 (truncating shift)
//     MAC   acc  <- acc + ((c_k * operand) >> s_k)   (truncating shift)
//
// with one MAC per basis column, and acc read out as acc * 2^-F.
//
// compile_fixed proves by integer interval arithmetic over the operating
// range that no register, product or partial sum leaves the W-bit range, and
// derives a worst-case bound on |fixed - float| from the rounding steps.
// =============================================================================

#include "probemap/errors.hpp"
#include "probemap/fit.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace probemap {

struct QFormat {
    int integer_bits = 15;
    int fraction_bits = 16;
    bool is_signed = true;

    [[nodiscard]] int width() const { return integer_bits + fraction_bits + 1; }
    [[nodiscard]] std::int64_t word_max() const { return (std::int64_t{1} << (width() - 1)) - 1; }
    [[nodiscard]] std::int64_t word_min() const { return -(std::int64_t{1} << (width() - 1)); }
    [[nodiscard]] std::size_t word_bytes() const { return static_cast<std::size_t>((width() + 7) / 8); }

    void validate() const {
        if (!is_signed) throw InvalidParams("qformat.signed", "only signed formats are supported");
        if (integer_bits < 0) throw InvalidParams("qformat.integer_bits", "must be >= 0");
        if (fraction_bits < 1) throw InvalidParams("qformat.fraction_bits", "must be >= 1");
        if (width() > 32) throw InvalidParams("qformat", "integer_bits + fraction_bits + 1 must be <= 32");
    }
};

/// Closed per-sensor interval in the function's unit convention.
struct OperatingRange {
    std::array<double, kSensorCount> min{};
    std::array<double, kSensorCount> max{};
};

/// Reading ranges of a map, in `unit`, widened by `margin` on both sides.
[[nodiscard]] inline OperatingRange reading_range(const CharacteristicMap& map, UnitConvention unit,
                                                  double margin = 0.0) {
    if (map.rows.empty()) throw PreconditionViolation("map has no rows");
    OperatingRange r;
    r.min.fill(std::numeric_limits<double>::infinity());
    r.max.fill(-std::numeric_limits<double>::infinity());
    for (const auto& row : map.rows) {
        for (std::size_t s = 0; s < kSensorCount; ++s) {
            const double v = to_convention(row.t[s], unit);
            r.min[s] = std::min(r.min[s], v);
            r.max[s] = std::max(r.max[s], v);
        }
    }
    for (std::size_t s = 0; s < kSensorCount; ++s) {
        r.min[s] -= margin;
        r.max[s] += margin;
    }
    return r;
}

enum class OpCode { load, mul, mac };
enum class Operand { reg, product, one };

struct Instruction {
    OpCode op = OpCode::load;
    std::size_t dst = 0;        ///< load: register index
    std::size_t sensor = 0;     ///< load: sensor index
    std::size_t a = 0, b = 0;   ///< mul: register indices
    Operand operand = Operand::reg;
    std::size_t src = 0;        ///< mac with operand reg: register index
    std::size_t coefficient = 0;
    int shift = 0;              ///< right shift (negative: left shift)
    std::int64_t lo = 0, hi = 0;  ///< proven interval of the step's result
};

struct FixedPointProgram {
    QFormat qformat;
    UnitConvention unit = UnitConvention::celsius;
    std::vector<std::size_t> inputs;  ///< sensor per register
    std::vector<std::int64_t> coefficients;
    std::vector<int> coefficient_shifts;
    std::vector<Instruction> instructions;
    OperatingRange range;
    double error_bound = 0.0;  ///< |eval_fixed - evaluate| over the range, in K
    std::size_t term_count = 0;

    [[nodiscard]] std::size_t mac_steps() const {
        return static_cast<std::size_t>(std::count_if(instructions.begin(), instructions.end(),
                                                      [](const Instruction& i) { return i.op != OpCode::load; }));
    }
    [[nodiscard]] bool uses_product_register() const {
        return std::any_of(instructions.begin(), instructions.end(),
                           [](const Instruction& i) { return i.op == OpCode::mul; });
    }
};

namespace detail {

using i128 = __int128;

struct Interval {
    i128 lo, hi;
};

inline Interval mul(Interval a, Interval b) {
    const i128 c[] = {a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
    return {*std::min_element(std::begin(c), std::end(c)), *std::max_element(std::begin(c), std::end(c))};
}

/// Floor division by 2^s for s >= 0, multiplication by 2^-s otherwise.
inline i128 shift_value(i128 v, int s) {
    if (s >= 0) return v >> s;  // arithmetic shift, rounds toward -inf
    return v * (i128{1} << (-s));
}

inline Interval shift(Interval v, int s) { return {shift_value(v.lo, s), shift_value(v.hi, s)}; }

inline void prove(const QFormat& q, Interval v, std::size_t step, const std::string& what) {
    if (v.lo < q.word_min() || v.hi > q.word_max())
        throw OverflowRisk(step, what, static_cast<long double>(v.lo), static_cast<long double>(v.hi));
}

inline std::int64_t quantize_input(double x, int fraction_bits) {
    return static_cast<std::int64_t>(std::llround(std::ldexp(x, fraction_bits)));
}

/// Largest scale s (<= 62) with |round(b 2^s)| <= word_max.
inline std::pair<std::int64_t, int> quantize_coefficient(double b, const QFormat& q) {
    if (b == 0.0) return {0, q.fraction_bits};
    const auto wmax = static_cast<double>(q.word_max());
    int s = static_cast<int>(std::floor(std::log2(wmax / std::abs(b))));
    s = std::min(s, 62);
    while (true) {
        const long long c = std::llround(std::ldexp(b, s));
        if (std::llabs(c) <= q.word_max()) return {c, s};
        --s;
    }
}

inline std::pair<double, double> real_product(std::pair<double, double> a, std::pair<double, double> b) {
    const double c[] = {a.first * b.first, a.first * b.second, a.second * b.first, a.second * b.second};
    return {*std::min_element(std::begin(c), std::end(c)), *std::max_element(std::begin(c), std::end(c))};
}

}  // namespace detail

[[nodiscard]] inline FixedPointProgram compile_fixed(const ApproachFunction& af, const QFormat& q,
                                                     const OperatingRange& range) {
    q.validate();
    af.basis.validate();
    const auto cols = af.basis.columns();
    if (af.coefficients.size() != cols.size())
        throw PreconditionViolation("coefficient count does not match the basis");

    FixedPointProgram prog;
    prog.qformat = q;
    prog.unit = af.unit;
    prog.range = range;
    prog.inputs = af.basis.sensor_subset;
    prog.term_count = cols.size();
    const int F = q.fraction_bits;
    const double lsb = std::ldexp(1.0, -F);
    const double input_err = 0.5 * lsb;

    std::array<std::size_t, kSensorCount> reg_of{};
    std::array<detail::Interval, kSensorCount> reg_iv{};
    std::array<double, kSensorCount> abs_max{};
    for (std::size_t r = 0; r < prog.inputs.size(); ++r) {
        const std::size_t s = prog.inputs[r];
        if (!(std::isfinite(range.min[s]) && std::isfinite(range.max[s]) && range.min[s] <= range.max[s]))
            throw PreconditionViolation("operating range for " + sensor_name(s) + " is empty or not finite");
        reg_of[s] = r;
        Instruction ins;
        ins.op = OpCode::load;
        ins.dst = r;
        ins.sensor = s;
        const detail::Interval iv{detail::quantize_input(range.min[s], F), detail::quantize_input(range.max[s], F)};
        detail::prove(q, iv, prog.instructions.size(), "load " + sensor_name(s));
        ins.lo = static_cast<std::int64_t>(iv.lo);
        ins.hi = static_cast<std::int64_t>(iv.hi);
        reg_iv[s] = iv;
        abs_max[s] = std::max(std::abs(range.min[s]), std::abs(range.max[s]));
        prog.instructions.push_back(ins);
    }

    detail::Interval acc{0, 0};
    double bound = 0.0;
    for (std::size_t k = 0; k < cols.size(); ++k) {
        const Monomial& m = cols[k];
        std::vector<std::size_t> factors;
        for (std::size_t s = 0; s < kSensorCount; ++s)
            for (int e = 0; e < m[s]; ++e) factors.push_back(s);

        Instruction mac;
        mac.op = OpCode::mac;
        mac.coefficient = k;
        detail::Interval operand{};
        double phi_err = 0.0;   // |operand * 2^-F - phi(x)|
        double phi_max = 0.0;   // max |phi(x)| over the range
        if (factors.empty()) {
            mac.operand = Operand::one;
            operand = {detail::i128{1} << F, detail::i128{1} << F};
            detail::prove(q, operand, prog.instructions.size(), "constant one");
            phi_max = 1.0;
        } else if (factors.size() == 1) {
            mac.operand = Operand::reg;
            mac.src = reg_of[factors[0]];
            operand = reg_iv[factors[0]];
            phi_err = input_err;
            phi_max = abs_max[factors[0]];
        } else {
            const std::size_t a = factors[0], b = factors[1];
            Instruction mul;
            mul.op = OpCode::mul;
            mul.a = reg_of[a];
            mul.b = reg_of[b];
            mul.shift = F;
            operand = detail::shift(detail::mul(reg_iv[a], reg_iv[b]), F);
            detail::prove(q, operand, prog.instructions.size(), "product " + to_string(m));
            mul.lo = static_cast<std::int64_t>(operand.lo);
            mul.hi = static_cast<std::int64_t>(operand.hi);
            prog.instructions.push_back(mul);
            mac.operand = Operand::product;
            phi_err = (abs_max[a] + input_err) * input_err + abs_max[b] * input_err + lsb;
            const auto p = detail::real_product({range.min[a], range.max[a]}, {range.min[b], range.max[b]});
            phi_max = std::max(std::abs(p.first), std::abs(p.second));
        }

        const auto [c, s] = detail::quantize_coefficient(af.coefficients[k], q);
        prog.coefficients.push_back(c);
        prog.coefficient_shifts.push_back(s);
        mac.shift = s;
        const detail::Interval term = detail::shift(detail::mul({c, c}, operand), s);
        detail::prove(q, term, prog.instructions.size(), "term " + to_string(m));
        acc = {acc.lo + term.lo, acc.hi + term.hi};
        detail::prove(q, acc, prog.instructions.size(), "accumulate " + to_string(m));
        mac.lo = static_cast<std::int64_t>(acc.lo);
        mac.hi = static_cast<std::int64_t>(acc.hi);
        prog.instructions.push_back(mac);

        const double cq = std::ldexp(static_cast<double>(c), -s);
        const double coef_err = c == 0 && af.coefficients[k] == 0.0 ? 0.0 : std::ldexp(0.5, -s);
        bound += std::abs(cq) * phi_err + coef_err * phi_max + (s > 0 && c != 0 ? lsb : 0.0);
    }
    // Slack for the double-precision reference itself.
    prog.error_bound = bound * (1.0 + 1e-9) + 1e-12;
    return prog;
}

/// Integer evaluation; readings must be in the program's unit convention.
/// Returns the estimate in that convention. Every intermediate is checked
/// against the word width, so an overflow can never wrap silently.
[[nodiscard]] inline double eval_fixed(const FixedPointProgram& prog, const ConventionReadings& readings) {
    if (readings.unit != prog.unit)
        throw ConventionMismatch(std::string("program expects ") + to_string(prog.unit) + " readings");
    const QFormat& q = prog.qformat;
    const int F = q.fraction_bits;
    std::vector<std::int64_t> regs(prog.inputs.size());
    std::int64_t product = 0;
    std::int64_t acc = 0;
    auto check = [&](detail::i128 v, std::size_t step) {
        if (v < q.word_min() || v > q.word_max())
            throw OverflowRisk(step, "runtime", static_cast<long double>(v), static_cast<long double>(v));
        return static_cast<std::int64_t>(v);
    };
    for (std::size_t step = 0; step < prog.instructions.size(); ++step) {
        const auto& ins = prog.instructions[step];
        switch (ins.op) {
            case OpCode::load: {
                const double x = readings.values[ins.sensor];
                if (!(x >= prog.range.min[ins.sensor] && x <= prog.range.max[ins.sensor]))
                    throw RangeViolation("reading " + sensor_name(ins.sensor) + " = " + std::to_string(x) +
                                         " outside the operating range [" +
                                         std::to_string(prog.range.min[ins.sensor]) + ", " +
                                         std::to_string(prog.range.max[ins.sensor]) + "]");
                regs[ins.dst] = check(detail::quantize_input(x, F), step);
                break;
            }
            case OpCode::mul:
                product = check(detail::shift_value(detail::i128{regs[ins.a]} * regs[ins.b], ins.shift), step);
                break;
            case OpCode::mac: {
                std::int64_t v = 0;
                switch (ins.operand) {
                    case Operand::reg: v = regs[ins.src]; break;
                    case Operand::product: v = product; break;
                    case Operand::one: v = std::int64_t{1} << F; break;
                }
                const auto term =
                    check(detail::shift_value(detail::i128{prog.coefficients[ins.coefficient]} * v, ins.shift), step);
                acc = check(detail::i128{acc} + term, step);
                break;
            }
        }
    }
    return std::ldexp(static_cast<double>(acc), -F);
}

/// Convenience wrapper taking and returning kelvin.
[[nodiscard]] inline double eval_fixed_kelvin(const FixedPointProgram& prog, const Readings& kelvin) {
    return from_convention(eval_fixed(prog, {prog.unit, detail::convert(kelvin, prog.unit)}), prog.unit);
}

// ---------------------------------------------------------------------------
// Resource model
// ---------------------------------------------------------------------------

struct McuProfile {
    double clock_hz = 16e6;
    double cycles_per_mac = 40.0;
    double cycles_per_sample_overhead = 2000.0;
    std::size_t code_bytes_per_term = 60;
    std::size_t runtime_bytes = 2048;

    void validate() const {
        if (!(clock_hz > 0.0)) throw InvalidParams("mcu.clock_hz", "must be > 0");
        if (!(cycles_per_mac > 0.0)) throw InvalidParams("mcu.cycles_per_mac", "must be > 0");
        if (!(cycles_per_sample_overhead > 0.0))
            throw InvalidParams("mcu.cycles_per_sample_overhead", "must be > 0");
    }
};

struct ResourceReport {
    std::size_t word_bytes = 0;
    std::size_t coefficient_bytes = 0;
    std::size_t state_bytes = 0;  ///< input registers + product register + accumulator + coefficients
    std::size_t flash_bytes = 0;  ///< coefficients + per-term code + runtime
    std::size_t mac_count = 0;    ///< multiplies, including monomial expansions
    double estimated_max_sample_rate = 0.0;  ///< Hz
};

[[nodiscard]] inline double estimated_sample_rate(const McuProfile& p, std::size_t mac_count) {
    return p.clock_hz / (static_cast<double>(mac_count) * p.cycles_per_mac + p.cycles_per_sample_overhead);
}

[[nodiscard]] inline ResourceReport resource_report(const FixedPointProgram& prog, const McuProfile& profile = {}) {
    profile.validate();
    ResourceReport r;
    r.word_bytes = prog.qformat.word_bytes();
    r.coefficient_bytes = prog.coefficients.size() * r.word_bytes;
    const std::size_t registers = prog.inputs.size() + (prog.uses_product_register() ? 1 : 0) + 1;
    r.state_bytes = registers * r.word_bytes + r.coefficient_bytes;
    r.flash_bytes = r.coefficient_bytes + profile.code_bytes_per_term * prog.term_count + profile.runtime_bytes;
    r.mac_count = prog.mac_steps();
    r.estimated_max_sample_rate = estimated_sample_rate(profile, r.mac_count);
    return r;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

[[nodiscard]] inline const char* to_string(OpCode op) {
    switch (op) {
        case OpCode::load: return "load";
        case OpCode::mul: return "mul";
        case OpCode::mac: return "mac";
    }
    return "?";
}

[[nodiscard]] inline const char* to_string(Operand o) {
    switch (o) {
        case Operand::reg: return "reg";
        case Operand::product: return "product";
        case Operand::one: return "one";
    }
    return "?";
}

[[nodiscard]] inline nlohmann::json to_json(const FixedPointProgram& p) {
    nlohmann::json ins = nlohmann::json::array();
    for (const auto& i : p.instructions) {
        nlohmann::json j = {{"op", to_string(i.op)}, {"lo", i.lo}, {"hi", i.hi}};
        switch (i.op) {
            case OpCode::load: j["dst"] = i.dst; j["sensor"] = sensor_name(i.sensor); break;
            case OpCode::mul: j["a"] = i.a; j["b"] = i.b; j["shift"] = i.shift; break;
            case OpCode::mac:
                j["coefficient"] = i.coefficient;
                j["operand"] = to_string(i.operand);
                if (i.operand == Operand::reg) j["src"] = i.src;
                j["shift"] = i.shift;
                break;
        }
        ins.push_back(std::move(j));
    }
    nlohmann::json range = nlohmann::json::object();
    for (auto s : p.inputs) range[sensor_name(s)] = {p.range.min[s], p.range.max[s]};
    std::vector<std::string> inputs;
    for (auto s : p.inputs) inputs.push_back(sensor_name(s));
    return {
        {"format", "probemap.fixed_point_program"},
        {"version", 1},
        {"qformat", {{"integer_bits", p.qformat.integer_bits}, {"fraction_bits", p.qformat.fraction_bits}, {"signed", true}}},
        {"unit_convention", to_string(p.unit)},
        {"rounding", {{"coefficients", "round-to-nearest"}, {"inputs", "round-to-nearest"}, {"shifts", "truncate (floor)"}}},
        {"inputs", inputs},
        {"coefficients", p.coefficients},
        {"coefficient_shifts", p.coefficient_shifts},
        {"term_count", p.term_count},
        {"instructions", ins},
        {"operating_range", range},
        {"error_bound_K", p.error_bound},
    };
}

namespace detail {

inline std::size_t parse_sensor(const std::string& name) {
    for (std::size_t s = 0; s < kSensorCount; ++s)
        if (sensor_name(s) == name) return s;
    throw SchemaError("unknown sensor '" + name + "'");
}

}  // namespace detail

[[nodiscard]] inline FixedPointProgram program_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "probemap.fixed_point_program")
            throw SchemaError("not a fixed-point program document");
        FixedPointProgram p;
        p.qformat.integer_bits = j.at("qformat").at("integer_bits").get<int>();
        p.qformat.fraction_bits = j.at("qformat").at("fraction_bits").get<int>();
        p.qformat.validate();
        p.unit = parse_unit_convention(j.at("unit_convention").get<std::string>());
        for (const auto& n : j.at("inputs")) p.inputs.push_back(detail::parse_sensor(n.get<std::string>()));
        p.coefficients = j.at("coefficients").get<std::vector<std::int64_t>>();
        p.coefficient_shifts = j.at("coefficient_shifts").get<std::vector<int>>();
        p.term_count = j.at("term_count").get<std::size_t>();
        for (const auto& ji : j.at("instructions")) {
            Instruction i;
            const auto op = ji.at("op").get<std::string>();
            i.lo = ji.at("lo").get<std::int64_t>();
            i.hi = ji.at("hi").get<std::int64_t>();
            if (op == "load") {
                i.op = OpCode::load;
                i.dst = ji.at("dst").get<std::size_t>();
                i.sensor = detail::parse_sensor(ji.at("sensor").get<std::string>());
            } else if (op == "mul") {
                i.op = OpCode::mul;
                i.a = ji.at("a").get<std::size_t>();
                i.b = ji.at("b").get<std::size_t>();
                i.shift = ji.at("shift").get<int>();
            } else if (op == "mac") {
                i.op = OpCode::mac;
                i.coefficient = ji.at("coefficient").get<std::size_t>();
                const auto o = ji.at("operand").get<std::string>();
                if (o == "reg") {
                    i.operand = Operand::reg;
                    i.src = ji.at("src").get<std::size_t>();
                } else if (o == "product") {
                    i.operand = Operand::product;
                } else if (o == "one") {
                    i.operand = Operand::one;
                } else {
                    throw SchemaError("unknown operand '" + o + "'");
                }
                i.shift = ji.at("shift").get<int>();
                if (i.coefficient >= p.coefficients.size()) throw SchemaError("coefficient index out of range");
            } else {
                throw SchemaError("unknown instruction '" + op + "'");
            }
            if ((i.op == OpCode::load && i.dst >= p.inputs.size()) ||
                (i.op == OpCode::mul && (i.a >= p.inputs.size() || i.b >= p.inputs.size())) ||
                (i.op == OpCode::mac && i.operand == Operand::reg && i.src >= p.inputs.size()))
                throw SchemaError("register index out of range");
            p.instructions.push_back(i);
        }
        p.range.min.fill(0.0);
        p.range.max.fill(0.0);
        for (const auto& [name, iv] : j.at("operating_range").items()) {
            const auto s = detail::parse_sensor(name);
            p.range.min[s] = iv.at(0).get<double>();
            p.range.max[s] = iv.at(1).get<double>();
        }
        p.error_bound = j.at("error_bound_K").get<double>();
        if (p.coefficient_shifts.size() != p.coefficients.size())
            throw SchemaError("coefficient_shifts length does not match coefficients");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("fixed-point program document: ") + e.what());
    }
}

inline void save_program(const FixedPointProgram& p, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << to_json(p).dump(2) << '\n';
    if (!f) throw IoError("failed to write '" + path + "'");
}

[[nodiscard]] inline FixedPointProgram load_program(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("cannot parse '") + path + "': " + e.what());
    }
    return program_from_json(j);
}

}  // namespace probemap
