#pragma once

// =============================================================================
// probemap - structured-grid half-model of the pressure-temperature sensor
// =============================================================================
// Cross-section of the assembly in the plane of symmetry, x across (x = 0 is
// the symmetry plane), z upward from the wetted tube surface:
//
//      z ^   +-------------------------+  <- ambient (convection + radiation)
//        |   |  circuit board          |
//        |   +-------------------------+
//        |   |  air gap                |
//        |   +----+--------------------+
//        |   |hole|                    |
//        |   |air |   fitting (metal)  |  <- ambient on the outer side
//        |   +----+                    |
//        |   |                         |
//        |   +-------------------------+
//        |   |  tube wall (metal)      |
//        |   +-------------------------+  <- medium (convection)
//        +-------------------------------> x
//        symmetry plane (adiabatic)
//
// Each cell becomes one node of a ThermalNetwork: capacitance rho c_p V,
// face conductances k A / d between neighbouring centres (harmonic mean of k
// across material boundaries), film couplings h A on exterior faces and
// eps sigma A on air-exposed faces.
// =============================================================================

#include "probemap/errors.hpp"
#include "probemap/thermal_core.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace probemap {

inline constexpr std::size_t kSensorCount = 6;

enum class Sensor : std::uint8_t { t1 = 0, t2, t3, t4, t5, t6 };

[[nodiscard]] inline std::string sensor_name(std::size_t s) { return "t" + std::to_string(s + 1); }

enum class ProbeRegion { drill_hole, board };

/// Probe placement as fractions of the region's cell-centre span:
/// fx = 0 is the column nearest the symmetry plane, fz = 0 the lowest row.
struct ProbeSpec {
    ProbeRegion region = ProbeRegion::drill_hole;
    double fx = 0.0;
    double fz = 0.0;
};

using MaterialCatalog = std::map<std::string, Material>;

[[nodiscard]] inline MaterialCatalog default_materials() {
    return {
        {"stainless_steel", {"stainless_steel", 15.0, 7900.0, 500.0, 0.3}},
        {"fr4", {"fr4", 0.3, 1850.0, 1100.0, 0.9}},
        {"air", {"air", 0.026, 1.2, 1005.0, 0.0}},
    };
}

/// Lengths in metres, film coefficients in W/(m^2 K). fitting_width is the
/// full width; the half-model spans fitting_width / 2. board_offset is the
/// air gap between the top of the fitting and the underside of the board.
struct AssemblyParams {
    double tube_wall_thickness = 1.5e-3;
    double fitting_height = 12e-3;
    double fitting_width = 10e-3;
    double drill_hole_depth = 6e-3;
    double drill_hole_diameter = 2e-3;
    double board_offset = 2e-3;
    double board_thickness = 1e-3;
    double cell_size = 0.25e-3;
    double out_of_plane_depth = 10e-3;

    std::string metal = "stainless_steel";
    std::string laminate = "fr4";
    std::string fill = "air";

    double h_medium = 1000.0;
    double h_ambient = 10.0;
    bool radiation = true;

    // Board probes sit on the top surface. t3 stays off the topmost hole
    // row, which borders the air gap.
    std::array<ProbeSpec, kSensorCount> probes{{
        {ProbeRegion::drill_hole, 0.0, 0.0},
        {ProbeRegion::drill_hole, 0.0, 0.5},
        {ProbeRegion::drill_hole, 0.0, 0.75},
        {ProbeRegion::board, 0.0, 1.0},
        {ProbeRegion::board, 0.5, 1.0},
        {ProbeRegion::board, 1.0, 1.0},
    }};
};

enum class FaceTag : std::uint8_t {
    untagged,
    adiabatic_symmetry,
    convective_medium,
    convective_ambient_with_radiation,
};

[[nodiscard]] inline const char* to_string(FaceTag t) {
    switch (t) {
        case FaceTag::untagged: return "untagged";
        case FaceTag::adiabatic_symmetry: return "adiabatic_symmetry";
        case FaceTag::convective_medium: return "convective_medium";
        case FaceTag::convective_ambient_with_radiation: return "convective_ambient_with_radiation";
    }
    return "?";
}

/// Cell (i, k) has node index k * nx + i.
struct GridGeometry {
    std::size_t nx = 0;
    std::size_t nz = 0;
    double cell_size = 0.0;
    double depth = 0.0;
    bool half_model = true;
    std::vector<std::string> materials;    ///< catalog names, indexed by material id
    std::vector<std::uint32_t> material;   ///< per cell
    std::vector<FaceTag> left, right;      ///< per row, length nz
    std::vector<FaceTag> bottom, top;      ///< per column, length nx

    [[nodiscard]] std::size_t cell_count() const { return nx * nz; }
    [[nodiscard]] std::size_t index(std::size_t i, std::size_t k) const { return k * nx + i; }
    [[nodiscard]] double x_center(std::size_t i) const { return (static_cast<double>(i) + 0.5) * cell_size; }
    [[nodiscard]] double z_center(std::size_t k) const { return (static_cast<double>(k) + 0.5) * cell_size; }
};

struct SensorLayout {
    std::array<std::size_t, kSensorCount> nodes{};

    [[nodiscard]] std::size_t node(Sensor s) const { return nodes[static_cast<std::size_t>(s)]; }
};

/// Samples the six probe nodes out of a solved field.
[[nodiscard]] inline std::array<double, kSensorCount> probe(const SensorLayout& layout,
                                                            const TemperatureField& field) {
    std::array<double, kSensorCount> out{};
    for (std::size_t s = 0; s < kSensorCount; ++s) out[s] = field.temperatures.at(layout.nodes[s]);
    return out;
}

/// Empty iff every GridGeometry invariant holds. Never throws.
[[nodiscard]] inline std::vector<std::string> validate(const GridGeometry& g) {
    std::vector<std::string> v;
    if (g.nx == 0 || g.nz == 0) {
        v.emplace_back("grid has zero cells");
        return v;
    }
    if (g.material.size() != g.cell_count())
        v.emplace_back("material array has " + std::to_string(g.material.size()) +
                       " entries, expected " + std::to_string(g.cell_count()));
    for (std::size_t c = 0; c < g.material.size(); ++c) {
        if (g.material[c] >= g.materials.size())
            v.push_back("cell " + std::to_string(c) + " has material id " +
                        std::to_string(g.material[c]) + " outside the catalog");
    }
    if (g.left.size() != g.nz || g.right.size() != g.nz || g.bottom.size() != g.nx ||
        g.top.size() != g.nx) {
        v.emplace_back("boundary tag arrays do not match the grid dimensions");
        return v;
    }
    bool any_medium = false, any_ambient = false;
    auto check = [&](const std::vector<FaceTag>& tags, const char* side) {
        for (std::size_t j = 0; j < tags.size(); ++j) {
            if (tags[j] == FaceTag::untagged)
                v.push_back(std::string(side) + " face " + std::to_string(j) + " is untagged");
            any_medium |= tags[j] == FaceTag::convective_medium;
            any_ambient |= tags[j] == FaceTag::convective_ambient_with_radiation;
        }
    };
    check(g.left, "left");
    check(g.right, "right");
    check(g.bottom, "bottom");
    check(g.top, "top");
    if (g.half_model) {
        for (std::size_t k = 0; k < g.nz; ++k) {
            if (g.left[k] != FaceTag::adiabatic_symmetry && g.left[k] != FaceTag::untagged)
                v.push_back("symmetry plane face " + std::to_string(k) + " is not adiabatic");
        }
    }
    if (!any_medium) v.emplace_back("no medium-wetted face");
    if (!any_ambient) v.emplace_back("no ambient-exposed face");
    return v;
}

struct FilmCoefficients {
    double h_medium = 1000.0;
    double h_ambient = 10.0;
    bool radiation = true;
};

/// Assembles the thermal network of an arbitrary tagged grid.
[[nodiscard]] inline ThermalNetwork assemble_network(const GridGeometry& g,
                                                     const MaterialCatalog& catalog,
                                                     const FilmCoefficients& film) {
    if (auto problems = validate(g); !problems.empty())
        throw InvalidParams("geometry", problems.front());
    std::vector<const Material*> mats;
    for (const auto& name : g.materials) {
        const auto it = catalog.find(name);
        if (it == catalog.end()) throw UnknownMaterial(name);
        it->second.validate();
        mats.push_back(&it->second);
    }

    const double d = g.cell_size;
    const double face_area = d * g.depth;
    const double volume = d * d * g.depth;
    auto mat = [&](std::size_t i, std::size_t k) -> const Material& {
        return *mats[g.material[g.index(i, k)]];
    };
    auto conductance = [&](const Material& a, const Material& b) {
        const double k = 2.0 * a.conductivity * b.conductivity / (a.conductivity + b.conductivity);
        return k * face_area / d;
    };

    std::vector<double> cap(g.cell_count());
    std::vector<ConductanceLink> links;
    links.reserve(2 * g.cell_count());
    for (std::size_t k = 0; k < g.nz; ++k) {
        for (std::size_t i = 0; i < g.nx; ++i) {
            const Material& m = mat(i, k);
            cap[g.index(i, k)] = m.density * m.specific_heat * volume;
            if (i + 1 < g.nx)
                links.push_back({g.index(i, k), g.index(i + 1, k), conductance(m, mat(i + 1, k))});
            if (k + 1 < g.nz)
                links.push_back({g.index(i, k), g.index(i, k + 1), conductance(m, mat(i, k + 1))});
        }
    }

    std::vector<ConvectiveCoupling> conv;
    std::vector<RadiativeCoupling> rad;
    auto couple = [&](FaceTag tag, std::size_t i, std::size_t k) {
        const std::size_t node = g.index(i, k);
        if (tag == FaceTag::convective_medium) {
            conv.push_back({node, film.h_medium * face_area, Reservoir::medium});
        } else if (tag == FaceTag::convective_ambient_with_radiation) {
            conv.push_back({node, film.h_ambient * face_area, Reservoir::ambient});
            const double eps = mat(i, k).emissivity;
            if (film.radiation && eps > 0.0)
                rad.push_back({node, eps * kStefanBoltzmann * face_area, Reservoir::ambient});
        }
    };
    for (std::size_t i = 0; i < g.nx; ++i) couple(g.bottom[i], i, 0);
    for (std::size_t k = 0; k < g.nz; ++k) couple(g.left[k], 0, k);
    for (std::size_t k = 0; k < g.nz; ++k) couple(g.right[k], g.nx - 1, k);
    for (std::size_t i = 0; i < g.nx; ++i) couple(g.top[i], i, g.nz - 1);

    return ThermalNetwork(std::move(cap), std::move(links), std::move(conv), std::move(rad));
}

namespace detail {

/// Number of cells spanning `length`; throws unless it is a whole multiple
/// of cell_size within 1%.
inline std::size_t cells_in(const char* field, double length, double cell) {
    const double ratio = length / cell;
    const double n = std::round(ratio);
    if (n < 1.0 || std::abs(ratio - n) > 0.01 * n)
        throw InvalidParams(field, "is not a whole multiple of cell_size (ratio " +
                                       std::to_string(ratio) + ")");
    return static_cast<std::size_t>(n);
}

struct RegionBox {
    std::size_t i0, i1, k0, k1;  ///< half-open cell ranges
};

struct HalfModelLayout {
    std::size_t nx, nz;
    RegionBox hole, board;
};

inline HalfModelLayout check_params(const AssemblyParams& p) {
    const std::tuple<const char*, double> lengths[] = {
        {"tube_wall_thickness", p.tube_wall_thickness},
        {"fitting_height", p.fitting_height},
        {"fitting_width", p.fitting_width},
        {"drill_hole_depth", p.drill_hole_depth},
        {"drill_hole_diameter", p.drill_hole_diameter},
        {"board_offset", p.board_offset},
        {"board_thickness", p.board_thickness},
        {"cell_size", p.cell_size},
        {"out_of_plane_depth", p.out_of_plane_depth},
    };
    for (const auto& [name, value] : lengths) {
        if (!(value > 0.0)) throw InvalidParams(name, "must be > 0");
    }
    if (!(p.h_medium > 0.0)) throw InvalidParams("h_medium", "must be > 0");
    if (!(p.h_ambient > 0.0)) throw InvalidParams("h_ambient", "must be > 0");
    if (!(p.drill_hole_depth < p.fitting_height))
        throw InvalidParams("drill_hole_depth", "must be smaller than fitting_height");
    if (p.drill_hole_diameter >= p.fitting_width)
        throw InvalidParams("drill_hole_diameter", "must be smaller than fitting_width");
    if (p.cell_size > p.drill_hole_diameter)
        throw InvalidParams("cell_size", "exceeds drill_hole_diameter; the hole cannot be resolved");

    const double c = p.cell_size;
    const std::size_t nt = cells_in("tube_wall_thickness", p.tube_wall_thickness, c);
    const std::size_t nf = cells_in("fitting_height", p.fitting_height, c);
    const std::size_t nw = cells_in("fitting_width / 2", 0.5 * p.fitting_width, c);
    const std::size_t nd = cells_in("drill_hole_depth", p.drill_hole_depth, c);
    const std::size_t nh = cells_in("drill_hole_diameter / 2", 0.5 * p.drill_hole_diameter, c);
    const std::size_t ng = cells_in("board_offset", p.board_offset, c);
    const std::size_t nb = cells_in("board_thickness", p.board_thickness, c);

    for (std::size_t s = 0; s < kSensorCount; ++s) {
        const auto& pr = p.probes[s];
        if (!(pr.fx >= 0.0 && pr.fx <= 1.0) || !(pr.fz >= 0.0 && pr.fz <= 1.0))
            throw InvalidParams("probe " + sensor_name(s), "relative position must lie in [0, 1]");
    }

    HalfModelLayout L{};
    L.nx = nw;
    L.nz = nt + nf + ng + nb;
    L.hole = {0, nh, nt + nf - nd, nt + nf};
    L.board = {0, nw, nt + nf + ng, L.nz};
    return L;
}

inline std::size_t pick(std::size_t first, std::size_t last, double f) {
    const auto span = static_cast<double>(last - first - 1);
    return first + static_cast<std::size_t>(std::lround(f * span));
}

}  // namespace detail

/// Tagged half-model grid for the given parameters (no network assembly).
[[nodiscard]] inline GridGeometry halfmodel_geometry(const AssemblyParams& p) {
    const auto L = detail::check_params(p);
    GridGeometry g;
    g.nx = L.nx;
    g.nz = L.nz;
    g.cell_size = p.cell_size;
    g.depth = p.out_of_plane_depth;
    g.half_model = true;
    g.materials = {p.metal, p.laminate, p.fill};
    constexpr std::uint32_t metal = 0, laminate = 1, fill = 2;

    g.material.assign(g.cell_count(), metal);
    const std::size_t fitting_top = L.hole.k1;
    for (std::size_t k = 0; k < g.nz; ++k) {
        for (std::size_t i = 0; i < g.nx; ++i) {
            std::uint32_t m = metal;
            if (k >= L.board.k0) {
                m = laminate;
            } else if (k >= fitting_top) {
                m = fill;
            } else if (k >= L.hole.k0 && i < L.hole.i1) {
                m = fill;
            }
            g.material[g.index(i, k)] = m;
        }
    }
    g.left.assign(g.nz, FaceTag::adiabatic_symmetry);
    g.right.assign(g.nz, FaceTag::convective_ambient_with_radiation);
    g.bottom.assign(g.nx, FaceTag::convective_medium);
    g.top.assign(g.nx, FaceTag::convective_ambient_with_radiation);
    return g;
}

/// Full model obtained by mirroring a half-model about its symmetry plane.
/// Half column i maps to full columns nx - 1 - i and nx + i.
[[nodiscard]] inline GridGeometry mirror_full(const GridGeometry& half) {
    GridGeometry g = half;
    g.half_model = false;
    g.nx = 2 * half.nx;
    g.material.assign(g.cell_count(), 0);
    for (std::size_t k = 0; k < half.nz; ++k) {
        for (std::size_t i = 0; i < half.nx; ++i) {
            const auto m = half.material[half.index(i, k)];
            g.material[g.index(half.nx + i, k)] = m;
            g.material[g.index(half.nx - 1 - i, k)] = m;
        }
    }
    g.left = half.right;
    g.right = half.right;
    g.bottom.assign(g.nx, FaceTag::untagged);
    g.top.assign(g.nx, FaceTag::untagged);
    for (std::size_t i = 0; i < half.nx; ++i) {
        g.bottom[half.nx + i] = g.bottom[half.nx - 1 - i] = half.bottom[i];
        g.top[half.nx + i] = g.top[half.nx - 1 - i] = half.top[i];
    }
    return g;
}

struct HalfModel {
    GridGeometry geometry;
    ThermalNetwork network;
    SensorLayout layout;
};

[[nodiscard]] inline SensorLayout place_probes(const AssemblyParams& p) {
    const auto L = detail::check_params(p);
    SensorLayout layout;
    for (std::size_t s = 0; s < kSensorCount; ++s) {
        const auto& pr = p.probes[s];
        const auto& box = pr.region == ProbeRegion::drill_hole ? L.hole : L.board;
        const std::size_t i = detail::pick(box.i0, box.i1, pr.fx);
        const std::size_t k = detail::pick(box.k0, box.k1, pr.fz);
        layout.nodes[s] = k * L.nx + i;
    }
    for (std::size_t a = 0; a < kSensorCount; ++a) {
        for (std::size_t b = a + 1; b < kSensorCount; ++b) {
            if (layout.nodes[a] == layout.nodes[b])
                throw InvalidParams("probe " + sensor_name(b),
                                    "resolves to the same cell as " + sensor_name(a));
        }
    }
    return layout;
}

[[nodiscard]] inline HalfModel build_halfmodel(const AssemblyParams& p,
                                               const MaterialCatalog& catalog = default_materials()) {
    GridGeometry g = halfmodel_geometry(p);
    for (const auto& name : g.materials) {
        if (!catalog.contains(name)) throw UnknownMaterial(name);
    }
    ThermalNetwork net = assemble_network(g, catalog, {p.h_medium, p.h_ambient, p.radiation});
    SensorLayout layout = place_probes(p);
    return {std::move(g), std::move(net), layout};
}

}  // namespace probemap
