#include "probemap/fit.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace probemap;
using probemap::testing::default_map;
using probemap::testing::default_validation_map;
using probemap::testing::synthetic_map;

namespace {

// Normal equations in long double, solved by Gaussian elimination with
// partial pivoting. Only adequate for small, well-scaled problems.
std::vector<double> normal_equations(const CharacteristicMap& map, const BasisTemplate& basis, UnitConvention u) {
    const auto cols = basis.columns();
    const std::size_t n = cols.size();
    std::vector<std::vector<long double>> M(n, std::vector<long double>(n + 1, 0.0L));
    for (const auto& row : map.rows) {
        std::vector<long double> phi(n);
        for (std::size_t k = 0; k < n; ++k) {
            long double v = 1.0L;
            for (std::size_t s = 0; s < kSensorCount; ++s)
                for (int e = 0; e < cols[k][s]; ++e) v *= to_convention(row.t[s], u);
            phi[k] = v;
        }
        const long double y = to_convention(row.T_medium, u);
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) M[a][b] += phi[a] * phi[b];
            M[a][n] += phi[a] * y;
        }
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(M[r][c]) > std::abs(M[p][c])) p = r;
        std::swap(M[c], M[p]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const long double f = M[r][c] / M[c][c];
            for (std::size_t k = c; k <= n; ++k) M[r][k] -= f * M[c][k];
        }
    }
    std::vector<double> x(n);
    for (std::size_t c = n; c-- > 0;) {
        long double s = M[c][n];
        for (std::size_t k = c + 1; k < n; ++k) s -= M[c][k] * x[k];
        x[c] = static_cast<double>(s / M[c][c]);
    }
    return x;
}

ApproachFunction linear_function(double b1, double b5) {
    ApproachFunction af;
    af.basis = {{0, 4}, {monomial({Sensor::t1}), monomial({Sensor::t5})}, false};
    af.unit = UnitConvention::kelvin;
    af.coefficients = {b1, b5};
    return af;
}

}  // namespace

TEST(Basis, Eq2PresetShape) {
    const auto b = eq2_preset();
    b.validate();
    EXPECT_EQ(b.terms.size(), 5u);
    EXPECT_EQ(b.sensor_subset, (std::vector<std::size_t>{0, 4}));
    EXPECT_FALSE(b.include_intercept);
    for (const auto& t : b.terms) {
        EXPECT_GE(degree(t), 1);
        EXPECT_LE(degree(t), 2);
    }
    EXPECT_EQ(to_string(b.terms[4]), "t1*t5");
    EXPECT_EQ(full_basis({4, 0}), b);
}

TEST(Basis, FamilySizes) {
    EXPECT_EQ(full_basis({0, 1, 2}).column_count(), 9u);
    EXPECT_EQ(full_basis({0, 1, 2, 3, 4, 5}).column_count(), 27u);
    EXPECT_EQ(full_basis({0, 1, 2}, {2, true}).column_count(), 10u);
    EXPECT_EQ(full_basis({0, 1, 2}, {1, false}).column_count(), 3u);
    EXPECT_THROW((void)full_basis({0, 1}, {3, false}), PreconditionViolation);
}

TEST(Basis, ValidateRejectsMalformedTemplates) {
    BasisTemplate b{{0}, {monomial({Sensor::t2})}, false};
    EXPECT_THROW(b.validate(), PreconditionViolation);
    b = {{0}, {monomial({Sensor::t1}), monomial({Sensor::t1})}, false};
    EXPECT_THROW(b.validate(), PreconditionViolation);
    b = {{0}, {monomial({Sensor::t1, Sensor::t1, Sensor::t1})}, false};
    EXPECT_THROW(b.validate(), PreconditionViolation);
    b = {{4, 0}, {monomial({Sensor::t1})}, false};
    EXPECT_THROW(b.validate(), PreconditionViolation);
    b = {{0}, {}, false};
    EXPECT_THROW(b.validate(), PreconditionViolation);
}

TEST(Evaluate, HandComputedValues) {
    Readings t{300.0, 0.0, 0.0, 0.0, 280.0, 0.0};
    EXPECT_EQ(evaluate(linear_function(0.0, 0.0), t), 0.0);
    EXPECT_DOUBLE_EQ(evaluate(linear_function(2.0, -0.5), t), 460.0);

    // In celsius the same coefficients act on 26.85 and 6.85 degC.
    auto af = linear_function(2.0, -0.5);
    af.unit = UnitConvention::celsius;
    EXPECT_NEAR(evaluate(af, t), celsius_to_kelvin(2.0 * 26.85 - 0.5 * 6.85), 1e-12);
    EXPECT_NEAR(evaluate_in(af, {UnitConvention::celsius, {26.85, 0, 0, 0, 6.85, 0}}), 2.0 * 26.85 - 0.5 * 6.85,
                1e-12);
}

TEST(Evaluate, ConventionMismatchAndMissingSensors) {
    const auto af = linear_function(1.0, 1.0);
    EXPECT_THROW((void)evaluate_in(af, {UnitConvention::celsius, {}}), ConventionMismatch);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW((void)evaluate(af, {300.0, 300.0, 300.0, 300.0, nan, 300.0}), MissingSensor);
    // Sensors outside the subset may be absent.
    EXPECT_NO_THROW((void)evaluate(af, {300.0, nan, nan, nan, 300.0, nan}));
}

TEST(FitLeastSquares, RecoversExactLinearTarget) {
    const auto map = synthetic_map(50, 1, [](const Readings& t) { return 2.0 * t[0] - 0.5 * t[4]; });
    const auto af = fit_least_squares(map, linear_function(0, 0).basis, UnitConvention::kelvin);
    EXPECT_NEAR(af.coefficients[0], 2.0, 1e-10);
    EXPECT_NEAR(af.coefficients[1], -0.5, 1e-10);
    EXPECT_LT(af.diagnostics.max_abs_residual, 1e-9);
}

TEST(FitLeastSquares, RecoversInBasisTargetsToOneInOneHundredMillion) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t a = static_cast<std::size_t>(trial % 6), b = (a + 1 + static_cast<std::size_t>(trial / 6)) % 6;
        const auto basis = full_basis({a, b}, {2, trial % 2 == 0});
        ApproachFunction truth;
        truth.basis = basis;
        truth.unit = trial % 3 == 0 ? UnitConvention::kelvin : UnitConvention::celsius;
        for (std::size_t k = 0; k < basis.column_count(); ++k) truth.coefficients.push_back(coef(rng));
        const auto map = synthetic_map(80, static_cast<unsigned>(100 + trial), [&](const Readings& t) {
            return evaluate(truth, t);
        });
        const auto af = fit_least_squares(map, basis, truth.unit);
        for (std::size_t k = 0; k < basis.column_count(); ++k)
            EXPECT_NEAR(af.coefficients[k], truth.coefficients[k], 1e-8) << "trial " << trial << " column " << k;
    }
}

TEST(FitLeastSquares, AgreesWithNormalEquationsOracle) {
    const auto map = synthetic_map(60, 3, [](const Readings& t) { return t[1] + 3.0 * std::sin(t[2] / 20.0); });
    const BasisTemplate basis{{1, 2}, {monomial({Sensor::t2}), monomial({Sensor::t3})}, true};
    const auto af = fit_least_squares(map, basis, UnitConvention::celsius);
    const auto ref = normal_equations(map, basis, UnitConvention::celsius);
    for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(af.coefficients[k], ref[k], 1e-9 * (1.0 + std::abs(ref[k])));
}

TEST(FitLeastSquares, ResidualIsOrthogonalToTheColumns) {
    const auto map = synthetic_map(120, 11, [](const Readings& t) { return t[0] + 0.1 * std::cos(t[3]); });
    for (const auto& subset : enumerate_subsets(2, 3)) {
        const auto af = fit_least_squares(map, full_basis(subset), UnitConvention::celsius);
        EXPECT_LE(af.diagnostics.orthogonality, 1e-8) << subset_name(subset);
    }
    const auto eq2 = fit_least_squares(default_map(), eq2_preset());
    EXPECT_LE(eq2.diagnostics.orthogonality, 1e-8);
}

TEST(FitLeastSquares, NestedBasesNeverIncreaseRms) {
    const auto& map = default_map();
    const auto lin = fit_least_squares(map, full_basis({0, 4}, {1, false}));
    const auto quad = fit_least_squares(map, full_basis({0, 4}));
    const auto quad_i = fit_least_squares(map, full_basis({0, 4}, {2, true}));
    const auto three = fit_least_squares(map, full_basis({0, 3, 4}, {2, true}));
    EXPECT_LE(quad.diagnostics.rms_residual, lin.diagnostics.rms_residual + 1e-12);
    EXPECT_LE(quad_i.diagnostics.rms_residual, quad.diagnostics.rms_residual + 1e-12);
    EXPECT_LE(three.diagnostics.rms_residual, quad_i.diagnostics.rms_residual + 1e-12);
}

TEST(FitLeastSquares, WithInterceptTheUnitConventionDoesNotMatter) {
    const auto& map = default_map();
    const auto basis = full_basis({0, 4}, {2, true});
    const auto c = fit_least_squares(map, basis, UnitConvention::celsius);
    const auto k = fit_least_squares(map, basis, UnitConvention::kelvin);
    for (const auto& row : default_validation_map().rows) EXPECT_NEAR(evaluate(c, row.t), evaluate(k, row.t), 1e-6);
}

TEST(FitLeastSquares, ResidualStatsAreConsistent) {
    const auto& map = default_map();
    const auto af = fit_least_squares(map, eq2_preset());
    const auto st = residual_stats(af, map);
    EXPECT_NEAR(st.max_abs, af.diagnostics.max_abs_residual, 1e-12);
    EXPECT_NEAR(st.rms, af.diagnostics.rms_residual, 1e-12);
    EXPECT_LE(st.rms, st.max_abs);
    for (const auto& row : map.rows) EXPECT_LE(std::abs(row.T_medium - evaluate(af, row.t)), st.max_abs);
    const auto& w = map.rows[st.worst_row];
    EXPECT_EQ(std::abs(w.T_medium - evaluate(af, w.t)), st.max_abs);
}

TEST(FitLeastSquares, RankDeficientForAConstantSensor) {
    auto map = synthetic_map(40, 5, [](const Readings& t) { return t[0]; });
    for (auto& r : map.rows) r.t[4] = 290.0;
    try {
        (void)fit_least_squares(map, eq2_preset());
        FAIL() << "expected RankDeficient";
    } catch (const RankDeficient& e) {
        EXPECT_GT(e.condition_number(), kConditionLimit);
    }
}

TEST(FitLeastSquares, TooFewRows) {
    const auto map = synthetic_map(4, 5, [](const Readings& t) { return t[0]; });
    EXPECT_THROW((void)fit_least_squares(map, eq2_preset()), PreconditionViolation);
}

TEST(FitLeastSquares, DefaultModelMeetsTheEq2Bound) {
    const auto af = fit_least_squares(default_map(), eq2_preset());
    EXPECT_LE(af.diagnostics.max_abs_residual, 1.8);
    EXPECT_LE(residual_stats(af, default_validation_map()).max_abs, 1.8);
    EXPECT_LT(af.diagnostics.condition_number, kConditionLimit);
}

TEST(SelectSubset, PerfectPredictorWins) {
    auto target = [](const Readings& t) { return 0.7 * t[2] + 0.3 * t[5] + 1e-3 * t[2] * t[5]; };
    const auto fit = synthetic_map(150, 21, target);
    const auto val = synthetic_map(60, 22, target);
    const auto rep = select_subset(fit, val, {}, {2, 64}, UnitConvention::kelvin);
    EXPECT_EQ(rep.winner().function.basis.sensor_subset, (std::vector<std::size_t>{2, 5}));
    EXPECT_LT(rep.winner().validation_max_residual, 1e-8);
    for (std::size_t i = 1; i < rep.ranked.size(); ++i)
        EXPECT_LE(rep.ranked[i - 1].validation_max_residual, rep.ranked[i].validation_max_residual);
}

TEST(SelectSubset, CandidateCounts) {
    const auto fit = synthetic_map(120, 31, [](const Readings& t) { return t[0] + 0.01 * t[1] * t[1]; });
    const auto val = synthetic_map(40, 32, [](const Readings& t) { return t[0] + 0.01 * t[1] * t[1]; });
    EXPECT_EQ(enumerate_subsets(2, 6).size(), 57u);
    EXPECT_EQ(select_subset(fit, val).candidate_count(), 57u);
    EXPECT_EQ(select_subset(fit, val, {}, {2, 64}).candidate_count(), 15u);
    const auto capped = select_subset(fit, val, {}, {6, 9});
    EXPECT_EQ(capped.candidate_count(), 57u);
    EXPECT_EQ(capped.ranked.size(), 15u + 20u);  // pairs have 5 columns, triples 9
}

TEST(SelectSubset, IsDeterministic) {
    const auto& fit = default_map();
    const auto& val = default_validation_map();
    const auto a = select_subset(fit, val, {}, {3, 64});
    const auto b = select_subset(fit, val, {}, {3, 64});
    ASSERT_EQ(a.ranked.size(), b.ranked.size());
    for (std::size_t i = 0; i < a.ranked.size(); ++i) {
        EXPECT_EQ(a.ranked[i].function.basis.sensor_subset, b.ranked[i].function.basis.sensor_subset);
        EXPECT_EQ(a.ranked[i].function.coefficients, b.ranked[i].function.coefficients);
    }
    EXPECT_EQ(a.tie_break_trace, b.tie_break_trace);
}

TEST(SelectSubset, Preconditions) {
    const auto fit = synthetic_map(50, 51, [](const Readings& t) { return t[0]; });
    EXPECT_THROW((void)select_subset(fit, fit, {}, {1, 64}), PreconditionViolation);
    EXPECT_THROW((void)select_subset(fit, fit, {}, {7, 64}), PreconditionViolation);
    EXPECT_THROW((void)select_subset(fit, fit, {}, {6, 1}), NoFeasibleCandidate);
}

TEST(SelectSubset, RankDeficientCandidatesAreExcluded) {
    auto fit = synthetic_map(80, 61, [](const Readings& t) { return t[0]; });
    for (auto& r : fit.rows) r.t[5] = 300.0;
    const auto rep = select_subset(fit, fit, {}, {2, 64});
    EXPECT_EQ(rep.excluded.size(), 5u);
    for (const auto& e : rep.excluded) {
        EXPECT_EQ(e.subset.back(), 5u);
        EXPECT_EQ(e.reason, "rank deficient");
    }
}

TEST(Json, RoundTrip) {
    const auto af = fit_least_squares(default_map(), eq2_preset());
    const auto path = (std::filesystem::temp_directory_path() / "probemap_af.json").string();
    save_approach_function(af, path);
    const auto back = load_approach_function(path);
    std::filesystem::remove(path);
    EXPECT_EQ(back.basis, af.basis);
    EXPECT_EQ(back.unit, af.unit);
    EXPECT_EQ(back.coefficients, af.coefficients);
    EXPECT_EQ(back.diagnostics.max_abs_residual, af.diagnostics.max_abs_residual);

    auto j = to_json(af);
    j["coefficients"].erase(0);
    EXPECT_THROW((void)approach_function_from_json(j), SchemaError);
    j = to_json(af);
    j["unit_convention"] = "rankine";
    EXPECT_THROW((void)approach_function_from_json(j), SchemaError);
    EXPECT_THROW((void)approach_function_from_json(nlohmann::json::object()), SchemaError);
    EXPECT_THROW((void)load_approach_function("/nonexistent/af.json"), IoError);
}
