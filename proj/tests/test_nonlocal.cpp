#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "vdg/generators.hpp"
#include "vdg/local_energy.hpp"
#include "vdg/nonlocal_energy.hpp"

using vdg::FarField;
using vdg::NFunction;
using vdg::NonlocalProblem;

namespace {

/// Omega = nodes with |x|_inf < w (box centered at the origin).
vdg::VectorField with_omega(vdg::VectorField v, double w) {
    for (std::size_t k = 0; k < v.grid.size(); ++k) {
        const auto x = v.grid.point(k);
        const bool in = std::abs(x[0]) < w && (v.grid.dim == 1 || std::abs(x[1]) < w);
        v.roles[k] = in ? vdg::NodeRole::Interior : vdg::NodeRole::Boundary;
    }
    return v;
}

vdg::VectorField random_interior(const vdg::VectorField& data, std::uint64_t seed, double amp = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amp, amp);
    auto v = data;
    for (std::size_t k = 0; k < v.grid.size(); ++k)
        if (!v.is_boundary(k))
            for (auto& e : v.at(k)) e = u(rng);
    return v;
}

std::vector<std::size_t> free_coords(const vdg::VectorField& v) {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < v.grid.size(); ++k)
        if (!v.is_boundary(k))
            for (std::size_t c = 0; c < v.components; ++c) out.push_back(k * v.components + c);
    return out;
}

} // namespace

TEST(ScaledDifference, Examples) {
    const auto g = vdg::Grid::spanning(1, 3, 0.0, 2.0);
    const auto lin = vdg::sample(g, 1, vdg::expression_function({"x"}));
    EXPECT_DOUBLE_EQ(vdg::scaled_difference(lin, 1, 0, 0.5)[0], 1.0);
    const auto sq = vdg::sample(g, 1, vdg::expression_function({"x*x"}));
    EXPECT_NEAR(vdg::scaled_difference(sq, 2, 0, 0.5)[0], 4.0 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(vdg::scaled_difference(sq, 2, 0, 0.5)[0], 2.8284, 1e-4);
    const auto c = vdg::sample(g, 2, vdg::constant_function({1.0, 2.0}));
    EXPECT_EQ(vdg::scaled_difference(c, 0, 2, 0.3), (std::vector<double>{0.0, 0.0}));
    EXPECT_DOUBLE_EQ(vdg::symmetrization(sq, 0, 2)[0], 2.0);
    EXPECT_THROW(vdg::scaled_difference(lin, 1, 1, 0.5), vdg::DomainError);
}

TEST(NonlocalEnergy, ConstantFieldWithMatchingFarFieldIsZero) {
    const auto g = vdg::Grid::spanning(2, 9, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 2, vdg::constant_function({0.3, -0.7})), 0.6);
    for (auto form : {vdg::EnergyForm::Renormalized, vdg::EnergyForm::Full}) {
        vdg::NonlocalOptions opt;
        opt.form = form;
        NonlocalProblem P(NFunction::power(1.5), 0.4, data, FarField::constant({0.3, -0.7}), opt);
        EXPECT_EQ(vdg::nonlocal_energy(P, data), 0.0);
        EXPECT_EQ(vdg::el_residual_nonlocal(P, data), 0.0);
    }
}

TEST(NonlocalEnergy, TwoNodeToy) {
    // nodes 0, 1, 2 with h = 1; Omega = {1}; v = (0, 1, 1), far field 1.
    const auto g = vdg::Grid::spanning(1, 3, 0.0, 2.0);
    vdg::VectorField v(g, 1);
    v.values = {0.0, 1.0, 1.0};
    v.roles = {vdg::NodeRole::Boundary, vdg::NodeRole::Interior, vdg::NodeRole::Boundary};
    NonlocalProblem P(NFunction::power(2.0), 0.5, v, FarField::constant({1.0}));
    EXPECT_NEAR(vdg::nonlocal_energy(P, v), 1.0, 1e-15);
}

TEST(NonlocalEnergy, FullAndRenormalizedDifferByConstant) {
    const auto g = vdg::Grid::spanning(2, 9, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 2, vdg::random_fourier_function(2, 2, 1.0, 2, 4.0, 3)), 0.6);
    vdg::NonlocalOptions full;
    full.form = vdg::EnergyForm::Full;
    for (const auto& far : {FarField::constant({0.5, 0.1}), FarField::power_decay({1.0, -1.0}, 2.0, 0.5, {0.0, 0.0})}) {
        NonlocalProblem R(NFunction::power(2.5), 0.5, data, far);
        NonlocalProblem F(NFunction::power(2.5), 0.5, data, far, full);
        const auto v = random_interior(data, 1), w = random_interior(data, 2);
        const double dr = vdg::nonlocal_energy(R, v) - vdg::nonlocal_energy(R, w);
        const double df = vdg::nonlocal_energy(F, v) - vdg::nonlocal_energy(F, w);
        EXPECT_NEAR(dr, df, 1e-10 * (1.0 + std::abs(dr)));
        EXPECT_GT(F.fixed_energy(), 0.0);
        EXPECT_EQ(R.fixed_energy(), 0.0);
    }
}

TEST(NonlocalEnergy, GradientMatchesFiniteDifferences) {
    std::uint64_t seed = 10;
    for (const auto& phi : {NFunction::power(1.5), NFunction::power(2.0), NFunction::power(3.0),
                            NFunction::power_sum(1.5, 3.0)})
        for (int dim : {1, 2})
            for (std::size_t N : {1u, 3u}) {
                const auto g = vdg::Grid::spanning(dim, dim == 1 ? 11 : 7, -1.0, 1.0);
                const auto data = with_omega(vdg::sample(g, N, vdg::random_fourier_function(N, dim, 1.0, 2, 4.0, seed)), 0.6);
                std::vector<double> c(N, 0.2);
                for (const auto& far : {FarField::constant(c), FarField::power_decay(c, 3.5, 0.7, {0.1, 0.0})}) {
                    NonlocalProblem P(phi, 0.35, data, far);
                    const auto v = random_interior(data, seed++);
                    const auto grad = vdg::nonlocal_energy_gradient(P, v);
                    auto f = [&](const std::vector<double>& x) {
                        auto w = v;
                        w.values = x;
                        return vdg::nonlocal_energy(P, w);
                    };
                    const auto fd = oracle::fd_gradient(f, v.values, free_coords(v));
                    double scale = 0.0;
                    for (double e : fd) scale = std::max(scale, std::abs(e));
                    for (std::size_t i = 0; i < fd.size(); ++i)
                        EXPECT_NEAR(grad.values[i], fd[i], 1e-6 * std::max(1.0, scale));
                    for (std::size_t k = 0; k < g.size(); ++k)
                        if (v.is_boundary(k))
                            for (std::size_t cc = 0; cc < N; ++cc) EXPECT_EQ(grad.values[k * N + cc], 0.0);
                }
            }
}

TEST(NonlocalEnergy, AntisymmetryAndMirrorSymmetry) {
    const auto g = vdg::Grid::spanning(2, 9, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 2, vdg::random_fourier_function(2, 2, 1.0, 2, 4.0, 6)), 0.6);
    NonlocalProblem P(NFunction::power(3.0), 0.6, data, FarField::constant({0.4, -0.1}));
    const auto v = random_interior(data, 3);
    auto neg_data = data;
    for (auto& e : neg_data.values) e = -e;
    NonlocalProblem Pn(NFunction::power(3.0), 0.6, neg_data, FarField::constant({-0.4, 0.1}));
    auto nv = v;
    for (auto& e : nv.values) e = -e;
    const auto g1 = vdg::nonlocal_energy_gradient(P, v), g2 = vdg::nonlocal_energy_gradient(Pn, nv);
    for (std::size_t i = 0; i < g1.values.size(); ++i) EXPECT_EQ(g1.values[i], -g2.values[i]);

    // mirror x -> -x relabels every pair
    auto mirror = [&](const vdg::VectorField& f) {
        auto m = f;
        for (std::size_t k = 0; k < g.size(); ++k) {
            const std::size_t k2 = g.index(g.nodes[0] - 1 - g.ix(k), g.iy(k));
            for (std::size_t c = 0; c < 2; ++c) m.values[k2 * 2 + c] = f.values[k * 2 + c];
            m.roles[k2] = f.roles[k];
        }
        return m;
    };
    NonlocalProblem Pm(NFunction::power(3.0), 0.6, mirror(data), FarField::constant({0.4, -0.1}));
    const double e1 = vdg::nonlocal_energy(P, v), e2 = vdg::nonlocal_energy(Pm, mirror(v));
    EXPECT_NEAR(e1, e2, 1e-12 * e1);
}

TEST(NonlocalEnergy, ConvexAlongRandomSegments) {
    const auto g = vdg::Grid::spanning(2, 7, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 2, vdg::random_fourier_function(2, 2, 1.0, 2, 4.0, 9)), 0.6);
    NonlocalProblem P(NFunction::power(1.5), 0.5, data, FarField::constant({0.1, 0.1}));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int t = 0; t < 30; ++t) {
        const auto v = random_interior(data, 10 + t), w = random_interior(data, 50 + t);
        const double th = u01(rng);
        auto m = v;
        for (std::size_t i = 0; i < m.values.size(); ++i)
            if (!data.is_boundary(i / 2)) m.values[i] = th * v.values[i] + (1 - th) * w.values[i];
        const double ev = vdg::nonlocal_energy(P, v), ew = vdg::nonlocal_energy(P, w);
        EXPECT_LE(vdg::nonlocal_energy(P, m), th * ev + (1 - th) * ew + 1e-12 * (ev + ew));
    }
}

TEST(NonlocalEnergy, MonotoneOperator) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    for (const auto& phi : {NFunction::power(1.5), NFunction::power(3.0), NFunction::power_sum(1.5, 3.0)})
        for (int i = 0; i < 20000; ++i) {
            double P[3], Q[3], np = 0, nq = 0;
            for (int c = 0; c < 3; ++c) {
                P[c] = g(rng);
                Q[c] = g(rng);
                np += P[c] * P[c];
                nq += Q[c] * Q[c];
            }
            np = std::sqrt(np);
            nq = std::sqrt(nq);
            double s = 0.0;
            for (int c = 0; c < 3; ++c)
                s += (phi.derivative(np) * P[c] / np - phi.derivative(nq) * Q[c] / nq) * (P[c] - Q[c]);
            EXPECT_GE(s, -1e-12);
        }
}

TEST(NonlocalEnergy, Validation) {
    const auto g = vdg::Grid::spanning(2, 7, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 1, vdg::constant_function({0.0})), 0.6);
    EXPECT_THROW(NonlocalProblem(NFunction::power(2.0), 1.0, data, FarField::zero()), vdg::DomainError);
    EXPECT_THROW(NonlocalProblem(NFunction::power(2.0), 0.0, data, FarField::zero()), vdg::DomainError);
    EXPECT_THROW(NonlocalProblem(NFunction::power(2.0), 0.5, data, FarField::power_decay({1.0}, 0.9, 1.0, {0, 0})),
                 vdg::DomainError);
    EXPECT_THROW(NonlocalProblem(NFunction::power(2.0), 0.5, data, FarField::constant({1.0, 2.0})), vdg::DomainError);
    auto touching = data;
    for (auto& r : touching.roles) r = vdg::NodeRole::Interior;
    EXPECT_THROW(NonlocalProblem(NFunction::power(2.0), 0.5, touching, FarField::zero()), vdg::DomainError);
    NonlocalProblem P(NFunction::power(2.0), 0.5, data, FarField::zero());
    auto bad = data;
    bad.values[0] = 1.0;
    EXPECT_THROW(vdg::nonlocal_energy(P, bad), vdg::DomainError);
}

TEST(ExteriorRays, WeightsSumToFullAngle) {
    const auto g = vdg::Grid::spanning(2, 9, -1.0, 1.0);
    for (std::size_t k : {0ul, 13ul, 40ul}) {
        const auto rays = vdg::exterior_rays(g, g.point(k), 12);
        double w = 0.0;
        for (const auto& r : rays) w += r.weight;
        EXPECT_NEAR(w, 2.0 * std::numbers::pi, 1e-12);
    }
    const auto g1 = vdg::Grid::spanning(1, 5, 0.0, 1.0);
    const auto rays = vdg::exterior_rays(g1, g1.point(1), 12);
    ASSERT_EQ(rays.size(), 2u);
    EXPECT_DOUBLE_EQ(rays[0].weight + rays[1].weight, 2.0);
}

TEST(ExteriorRays, KappaMatchesIndependentQuadrature) {
    const auto g = vdg::Grid::spanning(2, 11, -1.0, 1.0);
    for (double e : {0.45, 1.0, 2.1})
        for (std::size_t k : {g.index(5, 5), g.index(2, 7), g.index(1, 1)}) {
            double kappa = 0.0;
            for (const auto& r : vdg::exterior_rays(g, g.point(k), 12)) kappa += r.weight * std::pow(r.rho, -e);
            const double ref = oracle::exterior_kappa(g.point(k), {g.box_lower(0), g.box_lower(1)},
                                                      {g.box_upper(0), g.box_upper(1)}, e);
            EXPECT_NEAR(kappa, ref, 1e-10 * ref);
        }
}

TEST(NonlocalSolve, PowerTwoMatchesDirectSolve) {
    for (int dim : {1, 2}) {
        const auto g = vdg::Grid::spanning(dim, dim == 1 ? 41 : 16, -1.0, 1.0);
        const auto data = with_omega(vdg::sample(g, 1, vdg::random_fourier_function(1, dim, 1.0, 3, 4.0, 12)), 0.7);
        vdg::NonlocalOptions opt;
        opt.descent.tolerance = 1e-13;
        NonlocalProblem P(NFunction::power(2.0), 0.5, data, FarField::constant({0.3}), opt);
        const auto sol = vdg::solve_nonlocal(P, vdg::boundary_mean_guess(data));
        const auto ref = oracle::nonlocal_p2_solve(data, 0.5, 0.3, 0);
        double err = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) err = std::max(err, std::abs(sol.field.values[k] - ref[k]));
        EXPECT_LT(err, 1e-8) << "dim " << dim;
    }
}

TEST(NonlocalSolve, ConstantDataGivesConstant) {
    const auto g = vdg::Grid::spanning(2, 11, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 2, vdg::constant_function({1.0, -2.0})), 0.6);
    NonlocalProblem P(NFunction::power(1.5), 0.3, data, FarField::constant({1.0, -2.0}));
    const auto sol = vdg::solve_nonlocal(P, random_interior(data, 4));
    for (std::size_t k = 0; k < g.size(); ++k) {
        EXPECT_NEAR(sol.field.at(k)[0], 1.0, 1e-6);
        EXPECT_NEAR(sol.field.at(k)[1], -2.0, 1e-6);
    }
}

TEST(NonlocalSolve, BoundedDataBoundsSolution) {
    const auto g = vdg::Grid::spanning(2, 13, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 2, vdg::random_fourier_function(2, 2, 1.0, 3, 4.0, 31)), 0.65);
    NonlocalProblem P(NFunction::power(3.0), 0.7, data, FarField::constant({0.6, 0.0}));
    const auto sol = vdg::solve_nonlocal(P, vdg::boundary_mean_guess(data));
    EXPECT_TRUE(sol.trace.converged);
    EXPECT_LE(sol.field.sup_norm(), 1.0 + P.options.descent.tolerance);
    const double e = vdg::nonlocal_energy(P, sol.field);
    EXPECT_LT(vdg::el_residual_nonlocal(P, sol.field), P.options.descent.tolerance * (1.0 + e));
}

TEST(Tail, ZeroAndClosedForm) {
    const auto g = vdg::Grid::spanning(2, 15, -1.0, 1.0);
    const vdg::Ball B{{0.0, 0.0}, 0.3};
    const auto zero = with_omega(vdg::sample(g, 1, vdg::constant_function({0.0})), 0.6);
    NonlocalProblem Pz(NFunction::power(2.0), 0.5, zero, FarField::zero());
    EXPECT_EQ(vdg::tail(Pz, zero, B), 0.0);

    for (double s : {0.3, 0.5, 0.7})
        for (double p : {1.5, 2.0, 3.0}) {
            const auto c = with_omega(vdg::sample(g, 2, vdg::constant_function({0.6, 0.8})), 0.6);
            NonlocalProblem P(NFunction::power(p), s, c, FarField::constant({0.6, 0.8}));
            EXPECT_NEAR(vdg::tail(P, c, B), oracle::constant_tail(1.0, 2, s, p), 1e-10);
        }
    const auto one = with_omega(vdg::sample(g, 1, vdg::constant_function({1.0})), 0.6);
    NonlocalProblem P1(NFunction::power(2.0), 0.5, one, FarField::constant({1.0}));
    EXPECT_NEAR(vdg::tail(P1, one, B), 2.0 * std::numbers::pi, 1e-10);
}

TEST(Tail, HomogeneousAtPowerTwo) {
    const auto g = vdg::Grid::spanning(2, 13, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 2, vdg::random_fourier_function(2, 2, 1.0, 2, 4.0, 8)), 0.6);
    auto twice = data;
    for (auto& e : twice.values) e *= 2.0;
    const vdg::Ball B{{0.1, 0.0}, 0.25};
    for (const auto& far : {FarField::constant({0.5, -0.5}), FarField::power_decay({0.5, -0.5}, 2.0, 1.0, {0, 0})}) {
        NonlocalProblem P(NFunction::power(2.0), 0.5, data, far);
        auto far2 = far;
        for (auto& c : far2.c) c *= 2.0;
        NonlocalProblem P2(NFunction::power(2.0), 0.5, twice, far2);
        EXPECT_NEAR(vdg::tail(P2, twice, B), 2.0 * vdg::tail(P, data, B), 1e-8);
    }
}

TEST(Tail, OneDimensionalClosedForm) {
    const auto g = vdg::Grid::spanning(1, 21, -1.0, 1.0);
    const auto c = with_omega(vdg::sample(g, 1, vdg::constant_function({-2.0})), 0.6);
    NonlocalProblem P(NFunction::power(3.0), 0.4, c, FarField::constant({-2.0}));
    EXPECT_NEAR(vdg::tail(P, c, vdg::Ball{{0.0, 0.0}, 0.2}), oracle::constant_tail(2.0, 1, 0.4, 3.0), 1e-12);
}

TEST(KernelTable, CacheRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "vdg_kernel_cache_test";
    std::filesystem::remove_all(dir);
    const auto g = vdg::Grid::spanning(2, 9, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 1, vdg::random_fourier_function(1, 2, 1.0, 2, 4.0, 1)), 0.6);
    vdg::NonlocalOptions opt;
    opt.kernel_cache_dir = dir.string();
    NonlocalProblem a(NFunction::power(2.0), 0.5, data, FarField::zero(), opt);
    NonlocalProblem b(NFunction::power(2.0), 0.5, data, FarField::zero(), opt);
    EXPECT_EQ(a.kernel.weight, b.kernel.weight);
    EXPECT_EQ(a.kernel.inv_ds, vdg::KernelTable::build(g, 0.5).inv_ds);
    vdg::KernelTable wrong;
    EXPECT_FALSE(wrong.load(dir / "missing.bin", 9, 9, 0.5));
    std::filesystem::remove_all(dir);
}
