#pragma once

#include "core.hpp"

#include <cmath>

namespace imix
{
struct AdamParams
{
    double learning_rate = 0.01;
    double beta1 = 0.99;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState
{
    Vector m;
    Vector v;
    long t = 0;
    AdamParams params;

    AdamState(Eigen::Index dim, AdamParams p) : m(Vector::Zero(dim)), v(Vector::Zero(dim)), params(p) {}
};

/// One bias-corrected Adam step. Returns the increment to *add* to the
/// parameters (gradient ascent).
inline Vector adam_step(AdamState &state, const VectorRef &gradient)
{
    require(gradient.size() == state.m.size(), "adam_step: gradient length mismatch");
    const auto &p = state.params;
    ++state.t;
    state.m = p.beta1 * state.m + (1.0 - p.beta1) * gradient;
    state.v = p.beta2 * state.v + (1.0 - p.beta2) * gradient.cwiseAbs2();
    const double t = static_cast<double>(state.t);
    const double m_corr = 1.0 - std::pow(p.beta1, t);
    const double v_corr = 1.0 - std::pow(p.beta2, t);
    return (p.learning_rate * (state.m.array() / m_corr) / ((state.v.array() / v_corr).sqrt() + p.epsilon)).matrix();
}

} // namespace imix
