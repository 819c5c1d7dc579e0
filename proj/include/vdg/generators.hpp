#pragma once

// Data generators for boundary and complement values.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "expression.hpp"
#include "grid.hpp"

namespace vdg {

/// Evaluates an R^N-valued function of the coordinates.
using FieldFunction = std::function<void(std::array<double, 2>, double*)>;

inline FieldFunction constant_function(std::vector<double> c) {
    return [c](std::array<double, 2>, double* out) {
        for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i];
    };
}

/// Random trigonometric polynomial with |f(x)| <= amplitude everywhere.
/// Frequencies are integer multiples of 2 pi / period; the mode count bounds
/// the largest frequency per axis.
inline FieldFunction random_fourier_function(std::size_t N, int dim, double amplitude, int modes, double period,
                                             std::uint64_t seed) {
    if (modes < 1) throw DomainError("random data needs at least one mode");
    if (!(period > 0.0)) throw DomainError("random data needs a positive period");
    struct Term {
        double a, kx, ky, phase;
    };
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<std::vector<Term>> terms(N);
    for (auto& comp : terms) {
        double total = 0.0;
        for (int i = 0; i <= modes; ++i)
            for (int j = (dim == 2 ? -modes : 0); j <= (dim == 2 ? modes : 0); ++j) {
                const double k2 = static_cast<double>(i * i + j * j);
                const double a = gauss(rng) / (1.0 + k2);
                comp.push_back({a, 2.0 * std::numbers::pi * i / period, 2.0 * std::numbers::pi * j / period,
                                2.0 * std::numbers::pi * u01(rng)});
                total += std::abs(a);
            }
        for (auto& t : comp) t.a *= amplitude / (total * std::sqrt(static_cast<double>(N)));
    }
    return [terms](std::array<double, 2> x, double* out) {
        for (std::size_t c = 0; c < terms.size(); ++c) {
            double v = 0.0;
            for (const Term& t : terms[c]) v += t.a * std::cos(t.kx * x[0] + t.ky * x[1] + t.phase);
            out[c] = v;
        }
    };
}

inline FieldFunction expression_function(const std::vector<std::string>& components) {
    std::vector<Expression> exprs;
    for (const auto& s : components) exprs.push_back(Expression::parse(s));
    return [exprs](std::array<double, 2> x, double* out) {
        for (std::size_t c = 0; c < exprs.size(); ++c) out[c] = exprs[c](x[0], x[1]);
    };
}

/// Field with values f(x) at every node (roles left Interior).
inline VectorField sample(const Grid& g, std::size_t N, const FieldFunction& f) {
    VectorField v(g, N);
    for (std::size_t k = 0; k < g.size(); ++k) f(g.point(k), v.values.data() + k * N);
    return v;
}

} // namespace vdg
