#pragma once

#include "trackmpc/experiments.hpp"

#include <cmath>

namespace fixtures {

using namespace trackmpc;

inline ExperimentSetup cstr() { return make_setup(preset("cstr-paper")); }
inline ExperimentSetup scalar() { return make_setup(preset("scalar-lq")); }

/// Positive root of P^2 - P - 1 = 0: the scalar discrete Riccati solution for a = b = q = r = 1.
inline double golden_ratio() { return 0.5 * (1.0 + std::sqrt(5.0)); }

inline Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) {
        out[i++] = x;
    }
    return out;
}

}  // namespace fixtures
