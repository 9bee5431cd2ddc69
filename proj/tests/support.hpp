#pragma once

#include "probemap/fit.hpp"
#include "probemap/geometry.hpp"
#include "probemap/sweep.hpp"

#include <random>

namespace probemap::testing {

inline const HalfModel& default_model() {
    static const HalfModel m = build_halfmodel(AssemblyParams{});
    return m;
}

inline const CharacteristicMap& default_map() {
    static const CharacteristicMap m =
        run_sweep(default_model().network, default_model().layout, default_sweep_spec(), {{}, 0});
    return m;
}

inline const CharacteristicMap& default_validation_map() {
    static const CharacteristicMap m =
        run_sweep(default_model().network, default_model().layout, default_sweep_spec().midpoints(), {{}, 0});
    return m;
}

/// Rows with random readings in [250, 400] K; T_medium is filled by `target`.
template <class Target>
CharacteristicMap synthetic_map(std::size_t rows, unsigned seed, Target target) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(250.0, 400.0);
    CharacteristicMap m;
    for (std::size_t i = 0; i < rows; ++i) {
        MapRow r;
        for (auto& t : r.t) t = u(rng);
        r.T_medium = target(r.t);
        r.T_ambient = 300.0;
        m.rows.push_back(r);
    }
    return m;
}

}  // namespace probemap::testing
