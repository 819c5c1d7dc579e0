#pragma once

// Discrete local Orlicz energy sum_cells phi(|grad_h v|) h^n with Dirichlet data.

#include <cmath>
#include <utility>
#include <vector>

#include "descent.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "nfunc.hpp"

namespace vdg {

struct LocalOptions {
    DescentOptions descent{};
    /// Regularization: |Q| is replaced by sqrt(|Q|^2 + eps^2) when eps > 0.
    double regularization = 0.0;
};

/// Minimization instance. Nodes tagged Boundary in `data` are fixed to its values.
struct LocalProblem {
    Grid grid;
    NFunction phi;
    VectorField data;
    LocalOptions options;

    LocalProblem(NFunction phi_, VectorField data_, LocalOptions opt = {})
        : grid(data_.grid), phi(std::move(phi_)), data(std::move(data_)), options(opt) {
        if (!(options.regularization >= 0.0)) throw DomainError("regularization must be non-negative");
        if (!(options.descent.tolerance > 0.0)) throw DomainError("tolerance must be positive");
        bool any = false;
        for (std::size_t k = 0; k < grid.size(); ++k) any = any || data.is_boundary(k);
        if (!any) throw DomainError("local problem needs at least one boundary node");
    }

    std::size_t components() const noexcept { return data.components; }
};

/// Cells are indexed by their lower-left node; a node k owns a cell iff it is
/// not on the upper face of the grid in any axis.
inline bool owns_cell(const Grid& g, std::size_t k) {
    if (g.ix(k) + 1 >= g.nodes[0]) return false;
    return g.dim == 1 || g.iy(k) + 1 < g.nodes[1];
}

/// Forward-difference Jacobian of the cell owned by node k, row-major n x N
/// (row a holds the derivative along axis a). Returns false if k owns no cell.
inline bool cell_jacobian(const VectorField& v, std::size_t k, std::vector<double>& Q) {
    const Grid& g = v.grid;
    if (!owns_cell(g, k)) return false;
    const std::size_t N = v.components;
    Q.resize(static_cast<std::size_t>(g.dim) * N);
    const std::size_t nb[2] = {k + 1, k + g.nodes[0]};
    for (int a = 0; a < g.dim; ++a)
        for (std::size_t c = 0; c < N; ++c)
            Q[static_cast<std::size_t>(a) * N + c] = (v.values[nb[a] * N + c] - v.values[k * N + c]) / g.h;
    return true;
}

namespace detail {

inline void check_conforming(const LocalProblem& P, const VectorField& v) {
    if (!(v.grid == P.grid) || v.components != P.components() || v.values.size() != P.data.values.size())
        throw DomainError("field does not conform to the problem grid");
    const std::size_t N = v.components;
    for (std::size_t k = 0; k < P.grid.size(); ++k) {
        if (!P.data.is_boundary(k)) continue;
        for (std::size_t c = 0; c < N; ++c)
            if (v.values[k * N + c] != P.data.values[k * N + c])
                throw DomainError("field violates the boundary data");
    }
}

/// Energy (and optionally gradient) over a flat node-major value vector.
/// Value and gradient paths share one loop so their sums agree bit for bit.
template <bool WithGradient>
double local_assemble(const LocalProblem& P, const std::vector<double>& v, std::vector<double>* grad) {
    const Grid& g = P.grid;
    const std::size_t N = P.components();
    const std::size_t stride[2] = {1, g.nodes[0]};
    const double vol = g.cell_volume(), h = g.h, eps = P.options.regularization;
    const double phi_eps = eps > 0.0 ? P.phi(eps) : 0.0;
    if constexpr (WithGradient) grad->assign(v.size(), 0.0);
    std::vector<double> Q(static_cast<std::size_t>(g.dim) * N);
    double energy = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!owns_cell(g, k)) continue;
        double q2 = 0.0;
        for (int a = 0; a < g.dim; ++a) {
            const std::size_t nb = k + stride[a];
            for (std::size_t c = 0; c < N; ++c) {
                const double d = (v[nb * N + c] - v[k * N + c]) / h;
                Q[static_cast<std::size_t>(a) * N + c] = d;
                q2 += d * d;
            }
        }
        const double norm = std::sqrt(q2 + eps * eps);
        if (norm == 0.0) continue;
        double val, der;
        P.phi.value_and_derivative(norm, val, der);
        energy += (val - phi_eps) * vol;
        if constexpr (WithGradient) {
            // A(Q) = phi'(|Q|) Q / |Q|; d|Q|/dv enters through the forward differences.
            const double coef = der / norm * vol / h;
            for (int a = 0; a < g.dim; ++a) {
                const std::size_t nb = k + stride[a];
                for (std::size_t c = 0; c < N; ++c) {
                    const double f = coef * Q[static_cast<std::size_t>(a) * N + c];
                    (*grad)[nb * N + c] += f;
                    (*grad)[k * N + c] -= f;
                }
            }
        }
    }
    if constexpr (WithGradient)
        for (std::size_t k = 0; k < g.size(); ++k)
            if (P.data.is_boundary(k))
                for (std::size_t c = 0; c < N; ++c) (*grad)[k * N + c] = 0.0;
    return energy;
}

struct LocalObjective {
    const LocalProblem& P;
    double value(const std::vector<double>& x) const { return local_assemble<false>(P, x, nullptr); }
    double value_and_gradient(const std::vector<double>& x, std::vector<double>& g) const {
        return local_assemble<true>(P, x, &g);
    }
};

} // namespace detail

inline double local_energy(const LocalProblem& P, const VectorField& v) {
    detail::check_conforming(P, v);
    return detail::local_assemble<false>(P, v.values, nullptr);
}

inline VectorField local_energy_gradient(const LocalProblem& P, const VectorField& v) {
    detail::check_conforming(P, v);
    VectorField out = v;
    detail::local_assemble<true>(P, v.values, &out.values);
    return out;
}

inline double el_residual_local(const LocalProblem& P, const VectorField& v) {
    const VectorField g = local_energy_gradient(P, v);
    double m = 0.0;
    for (double e : g.values) m = std::max(m, std::abs(e));
    return m;
}

struct Solution {
    VectorField field;
    SolverTrace trace;
};

/// Monotone first-order minimization from `init` (which must match the boundary data).
inline Solution solve_local(const LocalProblem& P, const VectorField& init) {
    detail::check_conforming(P, init);
    Solution sol{init, {}};
    sol.field.roles = P.data.roles;
    sol.trace = minimize(detail::LocalObjective{P}, sol.field.values, P.options.descent);
    return sol;
}

/// Initial guess: boundary data, interior set to the mean of the boundary values.
inline VectorField boundary_mean_guess(const VectorField& data) {
    VectorField v = data;
    const std::size_t N = data.components;
    std::vector<double> mean(N, 0.0);
    std::size_t count = 0;
    for (std::size_t k = 0; k < data.grid.size(); ++k) {
        if (!data.is_boundary(k)) continue;
        for (std::size_t c = 0; c < N; ++c) mean[c] += data.values[k * N + c];
        ++count;
    }
    for (auto& m : mean) m /= static_cast<double>(count ? count : 1);
    for (std::size_t k = 0; k < data.grid.size(); ++k)
        if (!data.is_boundary(k))
            for (std::size_t c = 0; c < N; ++c) v.values[k * N + c] = mean[c];
    return v;
}

} // namespace vdg
