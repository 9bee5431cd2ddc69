#include "probemap/sweep.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace probemap;

namespace {

const HalfModel& model() {
    static const HalfModel m = build_halfmodel(AssemblyParams{});
    return m;
}

SweepSpec small_spec(std::size_t n) {
    SweepSpec s;
    for (std::size_t i = 0; i < n; ++i) {
        s.medium_axis.push_back(celsius_to_kelvin(-20.0 + 40.0 * static_cast<double>(i)));
        s.ambient_axis.push_back(celsius_to_kelvin(-40.0 + 30.0 * static_cast<double>(i)));
    }
    return s;
}

std::string to_csv(const CharacteristicMap& m) {
    std::ostringstream os;
    (void)export_map(m, os);
    return os.str();
}

}  // namespace

TEST(RunSweep, SinglePointMatchesDirectSolve) {
    const SweepSpec spec{{celsius_to_kelvin(90.0)}, {celsius_to_kelvin(25.0)}};
    const auto map = run_sweep(model().network, model().layout, spec);
    ASSERT_EQ(map.rows.size(), 1u);
    const auto f = solve_steady(model().network, {spec.medium_axis[0], spec.ambient_axis[0]});
    EXPECT_EQ(map.rows[0].t, probe(model().layout, f));
    EXPECT_TRUE(map.rows[0].converged);
}

TEST(RunSweep, ShapeIsMediumMajor) {
    const auto spec = small_spec(5);
    const auto map = run_sweep(model().network, model().layout, spec);
    ASSERT_EQ(map.rows.size(), 25u);
    for (std::size_t im = 0; im < 5; ++im) {
        for (std::size_t ia = 0; ia < 5; ++ia) {
            EXPECT_EQ(map.rows[im * 5 + ia].T_medium, spec.medium_axis[im]);
            EXPECT_EQ(map.rows[im * 5 + ia].T_ambient, spec.ambient_axis[ia]);
        }
    }
}

TEST(RunSweep, T1StrictlyIncreasesWithMediumTemperatureWithoutRadiation) {
    const auto net = model().network.without_radiation();
    SweepSpec spec;
    spec.medium_axis = linear_axis(celsius_to_kelvin(-20.0), celsius_to_kelvin(150.0), 10.0);
    spec.ambient_axis = {celsius_to_kelvin(-40.0), celsius_to_kelvin(20.0), celsius_to_kelvin(85.0)};
    const auto map = run_sweep(net, model().layout, spec);
    const std::size_t na = spec.ambient_axis.size();
    for (std::size_t ia = 0; ia < na; ++ia)
        for (std::size_t im = 1; im < spec.medium_axis.size(); ++im)
            EXPECT_GT(map.rows[im * na + ia].t[0], map.rows[(im - 1) * na + ia].t[0]);
}

TEST(RunSweep, DiagonalPointsReadUniformly) {
    SweepSpec spec;
    spec.medium_axis = {260.0, 300.0, 350.0};
    spec.ambient_axis = {260.0, 300.0, 350.0};
    const auto map = run_sweep(model().network, model().layout, spec);
    for (const auto& r : map.rows) {
        if (r.T_medium != r.T_ambient) continue;
        for (double t : r.t) EXPECT_EQ(t, r.T_medium);
    }
}

TEST(RunSweep, DeterministicAndIndependentOfThreadCount) {
    const auto spec = small_spec(4);
    const auto serial = run_sweep(model().network, model().layout, spec, {{}, 1});
    const auto again = run_sweep(model().network, model().layout, spec, {{}, 1});
    const auto parallel = run_sweep(model().network, model().layout, spec, {{}, 4});
    EXPECT_EQ(to_csv(serial), to_csv(again));
    EXPECT_EQ(serial.rows, parallel.rows);
}

TEST(RunSweep, FailsAsAWholeOnNonConvergence) {
    SweepOptions opt;
    opt.solver.max_iterations = 1;
    SweepSpec spec{{300.0, 350.0}, {300.0}};
    try {
        (void)run_sweep(model().network, model().layout, spec, opt);
        FAIL() << "expected SweepFailed";
    } catch (const SweepFailed& e) {
        // The diagonal point converges at the initial guess; only the other one fails.
        ASSERT_EQ(e.points().size(), 1u);
        EXPECT_EQ(e.points()[0].index, 1u);
        EXPECT_EQ(e.points()[0].T_medium, 350.0);
    }
}

TEST(RunSweep, RejectsInvalidSpec) {
    EXPECT_THROW((void)run_sweep(model().network, model().layout, SweepSpec{{300.0, 290.0}, {300.0}}), InvalidParams);
    EXPECT_THROW((void)run_sweep(model().network, model().layout, SweepSpec{{}, {300.0}}), InvalidParams);
    EXPECT_THROW((void)run_sweep(model().network, model().layout, SweepSpec{{0.0}, {300.0}}), InvalidParams);
}

TEST(SweepSpec, DefaultAxesAndMidpoints) {
    const auto spec = default_sweep_spec();
    EXPECT_EQ(spec.medium_axis.size(), 18u);
    EXPECT_EQ(spec.ambient_axis.size(), 11u);
    EXPECT_DOUBLE_EQ(spec.medium_axis.front(), 253.15);
    EXPECT_DOUBLE_EQ(spec.ambient_axis.back(), 358.15);
    const auto mid = spec.midpoints();
    EXPECT_EQ(mid.medium_axis.size(), 17u);
    EXPECT_EQ(mid.ambient_axis.size(), 10u);
    EXPECT_DOUBLE_EQ(mid.medium_axis.front(), 258.15);
    EXPECT_THROW((void)linear_axis(0.0, 10.0, 3.0), InvalidParams);
}

TEST(ExportMap, OneRowIsTwoLines) {
    const auto map = run_sweep(model().network, model().layout, SweepSpec{{330.0}, {290.0}});
    const std::string csv = to_csv(map);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "T_medium,T_ambient,t1,t2,t3,t4,t5,t6");
}

TEST(ExportMap, RoundTripsLosslessly) {
    const auto map = run_sweep(model().network, model().layout, small_spec(3));
    std::istringstream is(to_csv(map));
    const auto back = import_map(is);
    EXPECT_EQ(back.spec.medium_axis, map.spec.medium_axis);
    EXPECT_EQ(back.spec.ambient_axis, map.spec.ambient_axis);
    ASSERT_EQ(back.rows.size(), map.rows.size());
    for (std::size_t i = 0; i < map.rows.size(); ++i) EXPECT_EQ(back.rows[i], map.rows[i]);

    const auto path = std::filesystem::temp_directory_path() / "probemap_roundtrip.csv";
    const auto bytes = export_map(map, path.string());
    EXPECT_EQ(bytes, std::filesystem::file_size(path));
    EXPECT_EQ(import_map(path.string()).rows, map.rows);
    std::filesystem::remove(path);
}

TEST(ExportMap, EmptyPathIsAnIoError) {
    const auto map = run_sweep(model().network, model().layout, SweepSpec{{330.0}, {290.0}});
    EXPECT_THROW((void)export_map(map, std::string{}), IoError);
}

TEST(ImportMap, AcceptsShuffledRows) {
    std::istringstream is(
        "T_medium,T_ambient,t1,t2,t3,t4,t5,t6\n"
        "310,300,1,2,3,4,5,6\n"
        "300,300,1,2,3,4,5,6\n"
        "310,290,1,2,3,4,5,6\n"
        "300,290,1,2,3,4,5,6\n");
    const auto map = import_map(is);
    EXPECT_EQ(map.spec.medium_axis, (std::vector<double>{300, 310}));
    EXPECT_EQ(map.spec.ambient_axis, (std::vector<double>{290, 300}));
    EXPECT_EQ(map.rows[1].T_medium, 300);
    EXPECT_EQ(map.rows[1].T_ambient, 300);
}

TEST(ImportMap, MissingGridPointIsAGridError) {
    std::istringstream is(
        "T_medium,T_ambient,t1,t2,t3,t4,t5,t6\n"
        "300,290,1,2,3,4,5,6\n"
        "300,300,1,2,3,4,5,6\n"
        "310,290,1,2,3,4,5,6\n");
    EXPECT_THROW((void)import_map(is), GridError);

    std::istringstream dup(
        "T_medium,T_ambient,t1,t2,t3,t4,t5,t6\n"
        "300,290,1,2,3,4,5,6\n"
        "300,290,1,2,3,4,5,6\n");
    EXPECT_THROW((void)import_map(dup), GridError);
}

TEST(ImportMap, SchemaErrors) {
    std::istringstream t7("T_medium,T_ambient,t1,t2,t3,t4,t5,t6,t7\n300,290,1,2,3,4,5,6,7\n");
    EXPECT_THROW((void)import_map(t7), SchemaError);
    std::istringstream text("T_medium,T_ambient,t1,t2,t3,t4,t5,t6\n300,290,1,2,x,4,5,6\n");
    EXPECT_THROW((void)import_map(text), SchemaError);
    std::istringstream short_row("T_medium,T_ambient,t1,t2,t3,t4,t5,t6\n300,290,1,2\n");
    EXPECT_THROW((void)import_map(short_row), SchemaError);
    std::istringstream empty("");
    EXPECT_THROW((void)import_map(empty), SchemaError);
    EXPECT_THROW((void)import_map(std::string("/nonexistent/map.csv")), IoError);
}
