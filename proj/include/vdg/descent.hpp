#pragma once

// Monotone first-order minimization: steepest or conjugate directions with a line search.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"

namespace vdg {

struct DescentOptions {
    enum class Direction { Steepest, ConjugateGradient };
    enum class LineSearch { Armijo, DerivativeSign };

    /// Stop once sup|grad| < tolerance * (1 + |energy|).
    double tolerance = 1e-8;
    std::size_t max_iterations = 100000;
    Direction direction = Direction::ConjugateGradient;
    /// Armijo works on energy values alone. DerivativeSign assumes a convex
    /// objective: a step alpha with grad(x + alpha d) . d <= 0 certifies
    /// E(x + alpha d) <= E(x) even when the decrease is below the rounding
    /// level of E, which is what high-accuracy solves need.
    LineSearch line_search = LineSearch::DerivativeSign;
    /// Restart the conjugate direction every this many iterations (0: never).
    std::size_t restart_every = 0;
    double armijo = 1e-4;
    /// Accept a derivative-sign step once |grad . d| has dropped by this factor.
    double curvature = 0.5;
};

/// An objective over a flat coefficient vector. Gradient entries of fixed
/// coefficients must be zero so that descent never moves them.
template <class F>
concept Objective = requires(const F& f, const std::vector<double>& x, std::vector<double>& g) {
    { f.value(x) } -> std::convertible_to<double>;
    { f.value_and_gradient(x, g) } -> std::convertible_to<double>;
};

namespace detail {
inline double sup_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double e : v) m = std::max(m, std::abs(e));
    return m;
}
inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}
} // namespace detail

/// Minimize f starting from x (updated in place).
///
/// Directions are steepest descent or Polak-Ribiere+ conjugate directions,
/// falling back to steepest descent whenever the conjugate direction is not a
/// descent direction or its line search fails. Every accepted step decreases
/// the energy: by the Armijo condition, or (DerivativeSign) by a non-positive
/// directional derivative at the new point of a convex objective.
template <Objective F>
SolverTrace minimize(const F& f, std::vector<double>& x, const DescentOptions& opt = {}) {
    if (!(opt.tolerance > 0.0)) throw DomainError("descent tolerance must be positive");
    SolverTrace trace;
    const std::size_t n = x.size();
    std::vector<double> g(n), g_prev, d(n, 0.0), trial(n), g_trial(n), g_lo(n);
    double energy = f.value_and_gradient(x, g);
    ++trace.evaluations;
    double alpha_prev = 0.0, slope_prev = 0.0;
    bool restart = true;

    auto move_to = [&](double alpha) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = x[i] + alpha * d[i];
        ++trace.evaluations;
    };

    for (;;) {
        const double gsup = detail::sup_abs(g);
        if (!restart || trace.energy.empty()) {
            trace.energy.push_back(energy);
            trace.gradient_sup.push_back(gsup);
        }
        if (gsup < opt.tolerance * (1.0 + std::abs(energy))) {
            trace.converged = true;
            break;
        }
        if (trace.iterations >= opt.max_iterations) break;

        bool steepest = restart || opt.direction == DescentOptions::Direction::Steepest ||
                        (opt.restart_every > 0 && trace.iterations % opt.restart_every == 0);
        if (!steepest) {
            const double denom = detail::dot(g_prev, g_prev);
            double num = 0.0;
            for (std::size_t i = 0; i < n; ++i) num += g[i] * (g[i] - g_prev[i]);
            const double beta = denom > 0.0 ? std::max(0.0, num / denom) : 0.0;
            for (std::size_t i = 0; i < n; ++i) d[i] = -g[i] + beta * d[i];
            if (detail::dot(g, d) >= 0.0) steepest = true;
        }
        if (steepest)
            for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
        g_prev = g;
        const double slope = detail::dot(g, d);
        const double dsup = detail::sup_abs(d);
        const double xscale = 1.0 + detail::sup_abs(x);
        double alpha = alpha_prev > 0.0 ? alpha_prev * std::clamp(slope_prev / slope, 0.1, 10.0)
                                        : 1e-2 * xscale / dsup;

        double accepted = 0.0, new_energy = energy;
        if (opt.line_search == DescentOptions::LineSearch::DerivativeSign) {
            // Bracket the zero of psi(a) = grad(x + a d) . d by secant steps
            // (Illinois-modified regula falsi once bracketed).
            double lo = 0.0, psi_lo = slope, e_lo = energy;
            double hi = std::numeric_limits<double>::infinity(), psi_hi = 0.0;
            double f_lo = psi_lo, f_hi = 0.0;
            int last_side = 0;
            for (int it = 0; it < 60; ++it) {
                move_to(alpha);
                const double e = f.value_and_gradient(trial, g_trial);
                const double psi = detail::dot(g_trial, d);
                if (!std::isfinite(e) || !std::isfinite(psi)) {
                    hi = alpha;
                    psi_hi = f_hi = std::numeric_limits<double>::infinity();
                } else if (psi <= 0.0 && psi >= opt.curvature * slope) {
                    accepted = alpha;
                    new_energy = e;
                    g.swap(g_trial);
                    break;
                } else if (psi > 0.0) {
                    hi = alpha;
                    psi_hi = f_hi = psi;
                    if (last_side == 1) f_lo *= 0.5;
                    last_side = 1;
                } else {
                    lo = alpha;
                    psi_lo = f_lo = psi;
                    e_lo = e;
                    g_lo = g_trial;
                    if (last_side == -1) f_hi *= 0.5;
                    last_side = -1;
                }
                if (std::isfinite(hi)) {
                    if (!(hi - lo > 1e-16 * hi)) break;
                    double cand = std::isfinite(f_hi) ? lo + (hi - lo) * (-f_lo) / (f_hi - f_lo) : 0.5 * (lo + hi);
                    if (!(cand > lo && cand < hi)) cand = 0.5 * (lo + hi);
                    alpha = cand;
                } else {
                    const double cand = psi_lo > slope ? lo * slope / (slope - psi_lo) : 4.0 * lo;
                    alpha = std::clamp(cand, 2.0 * lo, 10.0 * lo);
                }
            }
            (void)psi_hi;
            if (accepted == 0.0 && lo > 0.0) {
                // psi(lo) < 0: still a certified decrease.
                accepted = lo;
                new_energy = e_lo;
                g.swap(g_lo);
            }
        } else {
            // Strict decrease required: at the rounding level e == energy would pass forever.
            auto armijo_ok = [&](double a, double e) { return e < energy && e <= energy + opt.armijo * a * slope; };
            auto eval_at = [&](double a) {
                move_to(a);
                return f.value(trial);
            };
            double e1 = eval_at(alpha);
            if (armijo_ok(alpha, e1)) {
                accepted = alpha;
                new_energy = e1;
            }
            const double curvature = (e1 - energy - alpha * slope) / (alpha * alpha);
            if (curvature > 0.0) {
                const double aq = -slope / (2.0 * curvature);
                if (std::isfinite(aq) && aq > 0.0 && std::abs(aq - alpha) > 1e-12 * alpha) {
                    const double eq = eval_at(aq);
                    if (armijo_ok(aq, eq) && (accepted == 0.0 || eq < new_energy)) {
                        accepted = aq;
                        new_energy = eq;
                    }
                }
            }
            double a = std::min(alpha, curvature > 0.0 ? -slope / (2.0 * curvature) : alpha);
            while (accepted == 0.0) {
                a *= 0.5;
                if (!(a * dsup > 1e-16 * xscale)) break;
                const double e = eval_at(a);
                if (armijo_ok(a, e)) {
                    accepted = a;
                    new_energy = e;
                }
            }
            if (accepted > 0.0) {
                for (std::size_t i = 0; i < n; ++i) trial[i] = x[i] + accepted * d[i];
                new_energy = f.value_and_gradient(trial, g_trial);
                ++trace.evaluations;
                g.swap(g_trial);
            }
        }

        if (accepted > 0.0) {
            bool moved = false;
            for (std::size_t i = 0; i < n && !moved; ++i) moved = x[i] + accepted * d[i] != x[i];
            if (!moved) accepted = 0.0;
        }
        if (accepted == 0.0) {
            if (!steepest) {
                restart = true;
                continue;
            }
            throw StagnationError("line search stagnated: no certified decrease along the steepest direction", trace);
        }
        for (std::size_t i = 0; i < n; ++i) x[i] += accepted * d[i];
        energy = new_energy;
        alpha_prev = accepted;
        slope_prev = slope;
        restart = false;
        trace.step.push_back(accepted);
        ++trace.iterations;
    }
    return trace;
}

} // namespace vdg
