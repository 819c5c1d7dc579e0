#include <gtest/gtest.h>

#include <random>

#include "vdg/degiorgi.hpp"
#include "vdg/generators.hpp"
#include "vdg/local_energy.hpp"
#include "vdg/nonlocal_energy.hpp"

using vdg::FarField;
using vdg::NFunction;

namespace {

vdg::VectorField boxed(const vdg::Grid& g, std::size_t N, const vdg::FieldFunction& f) {
    auto v = vdg::sample(g, N, f);
    v.mark_box_boundary();
    return v;
}

vdg::VectorField with_omega(vdg::VectorField v, double w) {
    for (std::size_t k = 0; k < v.grid.size(); ++k) {
        const auto x = v.grid.point(k);
        const bool in = std::abs(x[0]) < w && (v.grid.dim == 1 || std::abs(x[1]) < w);
        v.roles[k] = in ? vdg::NodeRole::Interior : vdg::NodeRole::Boundary;
    }
    return v;
}

vdg::VectorField solve_local(const NFunction& phi, const vdg::VectorField& data, double tol = 1e-8) {
    vdg::LocalOptions opt;
    opt.descent.tolerance = tol;
    vdg::LocalProblem P(phi, data, opt);
    return vdg::solve_local(P, vdg::boundary_mean_guess(data)).field;
}

} // namespace

TEST(IterationLemma, Examples) {
    const auto zero = vdg::iteration_lemma(1.0, 2.0, 1.0, 0.0, 100);
    EXPECT_TRUE(zero.converged);
    EXPECT_TRUE(zero.guaranteed);

    const auto below = vdg::iteration_lemma(1.0, 2.0, 1.0, 0.2, 100);
    EXPECT_DOUBLE_EQ(below.threshold, 0.25);
    EXPECT_TRUE(below.guaranteed);
    EXPECT_TRUE(below.converged);
    ASSERT_GE(below.trajectory.size(), 3u);
    EXPECT_NEAR(below.trajectory[1], 0.08, 1e-15);
    EXPECT_NEAR(below.trajectory[2], 0.0256, 1e-15);
    // direct recursion oracle
    double w = 0.2;
    for (std::size_t k = 1; k < below.trajectory.size(); ++k) {
        w = std::pow(2.0, static_cast<double>(k)) * w * w;
        EXPECT_NEAR(below.trajectory[k], w, 1e-12 * w);
    }

    const auto at = vdg::iteration_lemma(1.0, 2.0, 1.0, 0.25, 50);
    EXPECT_FALSE(at.guaranteed);
    const auto above = vdg::iteration_lemma(1.0, 2.0, 1.0, 0.5, 50);
    EXPECT_FALSE(above.guaranteed);
    EXPECT_FALSE(above.converged);
    EXPECT_GT(above.trajectory.back(), above.trajectory.front());

    EXPECT_THROW(vdg::iteration_lemma(0.5, 2.0, 1.0, 0.1, 10), vdg::DomainError);
    EXPECT_THROW(vdg::iteration_lemma(1.0, 0.5, 1.0, 0.1, 10), vdg::DomainError);
    EXPECT_THROW(vdg::iteration_lemma(1.0, 2.0, 0.0, 0.1, 10), vdg::DomainError);
    EXPECT_THROW(vdg::iteration_lemma(1.0, 2.0, 1.0, -0.1, 10), vdg::DomainError);
}

TEST(IterationLemma, GuaranteeBelowThreshold) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ua(1.0, 10.0), ual(0.1, 2.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = ua(rng), b = ua(rng), al = ual(rng);
        const double thr = vdg::iteration_lemma(a, b, al, 0.0, 0).threshold;
        const auto r = vdg::iteration_lemma(a, b, al, 0.9 * thr, 10000, 1e-8);
        EXPECT_TRUE(r.guaranteed && r.converged) << a << " " << b << " " << al;
    }
}

TEST(LevelSequence, TrivialCases) {
    const auto g = vdg::Grid::spanning(2, 17, -1.0, 1.0);
    const vdg::LevelSchedule sched{vdg::Ball{{0.0, 0.0}, 0.4}, 1.0, 10};
    const vdg::VectorField zero(g, 2);
    for (double U : vdg::level_sequence(zero, NFunction::power(2.0), sched, 1.0)) EXPECT_EQ(U, 0.0);
    const auto half = vdg::sample(g, 2, vdg::expression_function({"0.3*cos(5*x)", "0.3*sin(5*x)"}));
    const auto U = vdg::level_sequence(half, NFunction::power(2.0), sched, 1.0);
    EXPECT_GT(U[0], 0.0);
    for (std::size_t k = 1; k < U.size(); ++k) EXPECT_EQ(U[k], 0.0);
    EXPECT_THROW(vdg::level_sequence(zero, NFunction::power(2.0), {vdg::Ball{{0.0, 0.0}, 0.7}, 1.0, 10}, 1.0),
                 vdg::DomainError);
}

TEST(LevelSequence, AlmostDecreasingOnRandomFields) {
    const auto g = vdg::Grid::spanning(2, 21, -1.0, 1.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto u = vdg::sample(g, 2, vdg::random_fourier_function(2, 2, 1.0, 4, 3.0, seed));
        const vdg::LevelSchedule sched{vdg::Ball{{0.0, 0.0}, 0.45}, 0.8, 12};
        const auto U = vdg::level_sequence(u, NFunction::power(1.5), sched, 1.0);
        EXPECT_LE(vdg::almost_decreasing_violation(U, g, sched), 1e-12);
    }
}

TEST(Caccioppoli, LocalTrivialAndSolved) {
    const auto g = vdg::Grid::spanning(2, 33, -1.0, 1.0);
    const vdg::LevelPair lv{0.1, 0.2, 0.3, 0.6};
    const auto small = vdg::sample(g, 2, vdg::constant_function({0.05, 0.0}));
    const auto triv = vdg::caccioppoli_ratio_local(small, NFunction::power(2.0), {0.0, 0.0}, lv);
    EXPECT_TRUE(triv.pass);
    EXPECT_EQ(triv.value(), 0.0);

    const auto u = solve_local(NFunction::power(2.0), boxed(g, 1, vdg::expression_function({"x*x - y*y + 0.5*x"})));
    const auto rep = vdg::caccioppoli_ratio_local(u, NFunction::power(2.0), {0.0, 0.0}, {0.05, 0.1, 0.25, 0.5});
    EXPECT_TRUE(rep.pass);
    EXPECT_TRUE(std::isfinite(rep.value()));
    EXPECT_GT(rep.value(), 0.0);
    EXPECT_THROW(vdg::caccioppoli_ratio_local(u, NFunction::power(2.0), {0.0, 0.0}, {0.2, 0.1, 0.25, 0.5}),
                 vdg::DomainError);
    EXPECT_THROW(vdg::caccioppoli_ratio_local(u, NFunction::power(2.0), {0.0, 0.0}, {0.1, 0.2, 0.5, 0.25}),
                 vdg::DomainError);
}

TEST(Caccioppoli, LocalStableUnderRefinement) {
    const std::string expr = "x*x - y*y + 0.5*x";
    double ratios[2];
    int i = 0;
    for (std::size_t n : {33u, 65u}) {
        const auto g = vdg::Grid::spanning(2, n, -1.0, 1.0);
        const auto u = solve_local(NFunction::power(2.0), boxed(g, 1, vdg::expression_function({expr})), 1e-10);
        ratios[i++] = vdg::caccioppoli_ratio_local(u, NFunction::power(2.0), {0.0, 0.0}, {0.05, 0.1, 0.25, 0.5}).value();
    }
    EXPECT_NEAR(ratios[1] / ratios[0], 1.0, 0.2);
}

TEST(Caccioppoli, NonlocalTrivialSolvedAndTailSensitivity) {
    const auto g = vdg::Grid::spanning(2, 17, -1.0, 1.0);
    const auto data = with_omega(vdg::sample(g, 1, vdg::expression_function({"x + 0.5*y*y"})), 0.7);
    vdg::NonlocalProblem P(NFunction::power(2.0), 0.5, data, FarField::constant({0.5}));
    const auto u = vdg::solve_nonlocal(P, vdg::boundary_mean_guess(data)).field;
    const vdg::LevelPair lv{0.05, 0.1, 0.25, 0.5};
    const auto rep = vdg::caccioppoli_ratio_nonlocal(P, u, {0.0, 0.0}, lv);
    EXPECT_TRUE(rep.pass);
    EXPECT_GT(rep.value(), 0.0);

    const auto tiny = with_omega(vdg::sample(g, 1, vdg::constant_function({0.01})), 0.7);
    vdg::NonlocalProblem Pt(NFunction::power(2.0), 0.5, tiny, FarField::constant({0.01}));
    EXPECT_EQ(vdg::caccioppoli_ratio_nonlocal(Pt, tiny, {0.0, 0.0}, lv).value(), 0.0);

    vdg::NonlocalProblem Pz(NFunction::power(2.0), 0.5, data, FarField::zero());
    const auto with_far = vdg::caccioppoli_ratio_nonlocal(P, u, {0.0, 0.0}, lv);
    const auto without = vdg::caccioppoli_ratio_nonlocal(Pz, u, {0.0, 0.0}, lv);
    EXPECT_LT(without.measured.at("rhs_tail_term"), with_far.measured.at("rhs_tail_term"));
    EXPECT_LT(without.measured.at("tail"), with_far.measured.at("tail"));
}

TEST(Boundedness, DegenerateConstantAndSolved) {
    const auto g = vdg::Grid::spanning(2, 21, -1.0, 1.0);
    const vdg::Ball B{{0.0, 0.0}, 0.3};
    const vdg::VectorField zero(g, 1);
    const auto z = vdg::boundedness_certificate(zero, NFunction::power(2.0), B, vdg::Mode::Local);
    EXPECT_TRUE(z.pass);
    EXPECT_TRUE(z.degenerate);

    const auto c = with_omega(vdg::sample(g, 2, vdg::constant_function({0.3, 0.4})), 0.7);
    vdg::NonlocalProblem P(NFunction::power(3.0), 0.5, c, FarField::constant({0.3, 0.4}));
    const auto rc = vdg::boundedness_certificate(c, P.phi, B, vdg::Mode::Nonlocal, &P);
    EXPECT_TRUE(rc.pass);
    EXPECT_LE(rc.value(), 1.0 + 1e-14);
    EXPECT_THROW(vdg::boundedness_certificate(c, P.phi, B, vdg::Mode::Nonlocal, nullptr), vdg::DomainError);

    const auto u = solve_local(NFunction::power(3.0), boxed(g, 2, vdg::random_fourier_function(2, 2, 1.0, 3, 4.0, 2)));
    const auto r = vdg::boundedness_certificate(u, NFunction::power(3.0), B, vdg::Mode::Local);
    EXPECT_TRUE(r.pass);
    EXPECT_TRUE(std::isfinite(r.value()));
    EXPECT_THROW(vdg::boundedness_certificate(u, NFunction::power(3.0), vdg::Ball{{0.8, 0.0}, 0.3}, vdg::Mode::Local),
                 vdg::DomainError);
}

TEST(ConvexHull, LocalInstances) {
    const auto g = vdg::Grid::spanning(2, 24, -1.0, 1.0);
    const auto u2 = solve_local(NFunction::power(2.0), boxed(g, 1, vdg::random_fourier_function(1, 2, 1.0, 3, 4.0, 6)), 1e-12);
    const auto r2 = vdg::convex_hull_certificate(u2, vdg::Mode::Local);
    EXPECT_TRUE(r2.pass) << vdg::to_json(r2).dump();
    EXPECT_LE(r2.value(), 1e-8);

    const auto c = boxed(g, 2, vdg::constant_function({1.0, 2.0}));
    EXPECT_EQ(vdg::convex_hull_certificate(c, vdg::Mode::Local).value(), 0.0);

    const auto g32 = vdg::Grid::spanning(2, 32, -1.0, 1.0);
    const auto u3 = solve_local(NFunction::power(3.0), boxed(g32, 2, vdg::random_fourier_function(2, 2, 1.0, 3, 4.0, 7)));
    const auto r3 = vdg::convex_hull_certificate(u3, vdg::Mode::Local, {}, 1e-3, 1e-8);
    EXPECT_TRUE(r3.pass) << vdg::to_json(r3).dump();

    vdg::VectorField none(g, 1);
    EXPECT_THROW(vdg::convex_hull_certificate(none, vdg::Mode::Local), vdg::DomainError);
}

TEST(Poincare, Local) {
    const auto g = vdg::Grid::spanning(2, 21, -1.0, 1.0);
    const vdg::Ball B{{0.0, 0.0}, 0.5};
    const auto c = vdg::sample(g, 2, vdg::constant_function({1.0, 1.0}));
    const auto rc = vdg::poincare_ratio_local(c, NFunction::power(2.0), B);
    EXPECT_TRUE(rc.pass);
    EXPECT_TRUE(rc.degenerate);

    const auto lin = vdg::sample(g, 2, vdg::expression_function({"x", "0"}));
    const auto rl = vdg::poincare_ratio_local(lin, NFunction::power(2.0), B);
    EXPECT_TRUE(rl.pass);
    EXPECT_TRUE(std::isfinite(rl.value()) && rl.value() > 0.0);

    for (double p : {1.5, 2.0, 3.0}) {
        const auto v = vdg::sample(g, 2, vdg::random_fourier_function(2, 2, 1.0, 3, 3.0, 9));
        auto v2 = v;
        for (auto& e : v2.values) e *= 2.0;
        const double r1 = vdg::poincare_ratio_local(v, NFunction::power(p), B).value();
        const double r2 = vdg::poincare_ratio_local(v2, NFunction::power(p), B).value();
        EXPECT_NEAR(r2, r1, 1e-12 * r1);
    }
}

TEST(Poincare, Nonlocal) {
    const auto g = vdg::Grid::spanning(2, 17, -1.0, 1.0);
    const vdg::Ball B{{0.0, 0.0}, 0.5};
    const auto c = vdg::sample(g, 1, vdg::constant_function({3.0}));
    EXPECT_TRUE(vdg::poincare_ratio_nonlocal(c, NFunction::power(2.0), B, 0.5, 0.0).degenerate);
    const auto v = vdg::sample(g, 2, vdg::random_fourier_function(2, 2, 1.0, 3, 3.0, 10));
    for (double alpha : {0.0, 0.25, 0.45}) {
        const auto r = vdg::poincare_ratio_nonlocal(v, NFunction::power(1.5), B, 0.5, alpha);
        EXPECT_TRUE(r.pass);
        EXPECT_TRUE(std::isfinite(r.value()) && r.value() > 0.0);
    }
    EXPECT_THROW(vdg::poincare_ratio_nonlocal(v, NFunction::power(2.0), B, 0.5, 0.5), vdg::DomainError);
    EXPECT_THROW(vdg::poincare_ratio_nonlocal(v, NFunction::power(2.0), B, 0.5, -0.1), vdg::DomainError);
}

TEST(ScaleInvariance, IdentityConstantAndMinimizer) {
    const auto g = vdg::Grid::spanning(2, 15, -1.0, 1.0);
    const vdg::Ball B{{0.0, 0.0}, 0.3};
    const auto data = with_omega(vdg::sample(g, 1, vdg::random_fourier_function(1, 2, 1.0, 2, 4.0, 3)), 0.7);
    vdg::NonlocalOptions opt;
    opt.descent.tolerance = 1e-12;
    vdg::NonlocalProblem P(NFunction::power(2.0), 0.5, data, FarField::constant({0.2}), opt);
    const auto u = vdg::solve_nonlocal(P, vdg::boundary_mean_guess(data)).field;

    const auto one = vdg::scale_invariance_check(P, u, B, 1.0);
    EXPECT_EQ(one.measured.at("tail_mismatch"), 0.0);
    EXPECT_EQ(one.measured.at("residual_mismatch"), 0.0);

    const auto two = vdg::scale_invariance_check(P, u, B, 2.0);
    EXPECT_TRUE(two.pass) << vdg::to_json(two).dump();

    const auto c = with_omega(vdg::sample(g, 1, vdg::constant_function({1.0})), 0.7);
    vdg::NonlocalProblem Pc(NFunction::power(3.0), 0.3, c, FarField::constant({1.0}));
    EXPECT_NEAR(vdg::scale_invariance_check(Pc, c, B, 2.0).measured.at("tail_mismatch"), 0.0, 1e-8);

    // re-solve oracle: the rescaled minimizer solves the rescaled problem
    const auto Pb = vdg::rescale_problem(P, 2.0);
    const auto ub = vdg::rescale_field(u, 2.0, 0.5);
    const auto resolved = vdg::solve_nonlocal(Pb, vdg::boundary_mean_guess(Pb.data)).field;
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(resolved.values[k], ub.values[k], 1e-9);
    EXPECT_THROW(vdg::rescale_field(u, 0.0, 0.5), vdg::DomainError);
}

TEST(LevelDecay, SolvedInstancesDecay) {
    const auto g = vdg::Grid::spanning(2, 21, -1.0, 1.0);
    const vdg::Ball B{{0.0, 0.0}, 0.3};
    const auto u = solve_local(NFunction::power(2.0), boxed(g, 1, vdg::random_fourier_function(1, 2, 1.0, 3, 4.0, 5)));
    const auto in = vdg::level_inputs(u, NFunction::power(2.0), B, 1.0, 0.0);
    const double eps_inv = vdg::fit_inverse_eps({in}, NFunction::power(2.0), B.radius, 1.0);
    EXPECT_GE(eps_inv, 1.0);
    const auto rep = vdg::level_decay(u, NFunction::power(2.0), B, 1.0, in, eps_inv);
    EXPECT_TRUE(rep.pass) << vdg::to_json(rep).dump();
    EXPECT_EQ(rep.series.at("U").size(), 21u);
    EXPECT_GT(rep.measured.at("lambda_inf"), in.sup);

    const vdg::VectorField zero(g, 1);
    const auto z = vdg::level_decay(zero, NFunction::power(2.0), B, 1.0, vdg::level_inputs(zero, NFunction::power(2.0), B, 1.0, 0.0), 1.0);
    EXPECT_TRUE(z.degenerate);
}

TEST(Certificates, TranslationInvariant) {
    const auto g0 = vdg::Grid::spanning(2, 21, -1.0, 1.0);
    const auto g1 = vdg::Grid::make(2, g0.nodes, {g0.lower[0] + 3.0, g0.lower[1] - 1.5}, g0.h);
    const vdg::Ball B0{{0.0, 0.0}, 0.33}, B1{{3.0, -1.5}, 0.33};
    const auto f = vdg::random_fourier_function(2, 2, 1.0, 3, 4.0, 12);
    auto u0 = boxed(g0, 2, f);
    auto u1 = u0;
    u1.grid = g1;
    const auto a = solve_local(NFunction::power(3.0), u0), b = solve_local(NFunction::power(3.0), u1);
    EXPECT_EQ(a.values, b.values);
    const double ba = vdg::boundedness_certificate(a, NFunction::power(3.0), B0, vdg::Mode::Local).value();
    const double bb = vdg::boundedness_certificate(b, NFunction::power(3.0), B1, vdg::Mode::Local).value();
    EXPECT_NEAR(ba, bb, 1e-12 * ba);
    const double pa = vdg::poincare_ratio_local(a, NFunction::power(3.0), B0).value();
    const double pb = vdg::poincare_ratio_local(b, NFunction::power(3.0), B1).value();
    EXPECT_NEAR(pa, pb, 1e-12 * pa);
}
