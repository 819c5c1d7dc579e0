#pragma once

// Verification harness for the De Giorgi argument on discrete solutions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "grid.hpp"
#include "local_energy.hpp"
#include "nfunc.hpp"
#include "nonlocal_energy.hpp"
#include "report.hpp"
#include "vecops.hpp"

namespace vdg {

// ---------------------------------------------------------------------------
// Iteration lemma

struct IterationResult {
    bool converged = false;
    /// W0 strictly below a^{-1/alpha} b^{-1/alpha - 1/alpha^2}.
    bool guaranteed = false;
    double threshold = 0.0;
    std::vector<double> trajectory;
};

/// Iterates the extremal recursion W_k = a b^k W_{k-1}^{1+alpha} (in log space)
/// until W_k < target or maxk steps.
inline IterationResult iteration_lemma(double a, double b, double alpha, double W0, std::size_t maxk,
                                       double target = 1e-12) {
    if (!(a >= 1.0) || !(b >= 1.0) || !(alpha > 0.0) || !(W0 >= 0.0) || !std::isfinite(a * b * alpha * W0))
        throw DomainError("iteration lemma needs a >= 1, b >= 1, alpha > 0, W0 >= 0");
    IterationResult out;
    const double log_thr = -std::log(a) / alpha - std::log(b) * (1.0 / alpha + 1.0 / (alpha * alpha));
    out.threshold = std::exp(log_thr);
    out.guaranteed = W0 == 0.0 || std::log(W0) < log_thr;
    out.trajectory.push_back(W0);
    if (W0 < target) {
        out.converged = true;
        return out;
    }
    double lw = std::log(W0);
    const double la = std::log(a), lb = std::log(b);
    for (std::size_t k = 1; k <= maxk; ++k) {
        lw = la + static_cast<double>(k) * lb + (1.0 + alpha) * lw;
        out.trajectory.push_back(lw > 709.0 ? std::numeric_limits<double>::infinity() : std::exp(lw));
        if (lw < std::log(target)) {
            out.converged = true;
            break;
        }
        if (lw > 709.0) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Level schedule

struct LevelSchedule {
    Ball base;
    double lambda_inf = 1.0;
    std::size_t levels = 20;

    Ball ball(std::size_t k) const { return base.scaled(1.0 + std::ldexp(1.0, -static_cast<int>(k))); }
    double level(std::size_t k) const { return (1.0 - std::ldexp(1.0, -static_cast<int>(k))) * lambda_inf; }

    void validate(const Grid& g) const {
        if (!(lambda_inf > 0.0)) throw DomainError("lambda_inf must be positive");
        if (levels < 1) throw DomainError("need at least one level");
        check_inside(g, base.scaled(2.0));
    }

    static void check_inside(const Grid& g, const Ball& b) {
        for (int a = 0; a < g.dim; ++a) {
            const auto i = static_cast<std::size_t>(a);
            if (b.center[i] - b.radius < g.box_lower(a) || b.center[i] + b.radius > g.box_upper(a))
                throw DomainError("ball must lie inside the computational domain");
        }
    }
};

enum class Mode { Local, Nonlocal };

namespace detail {

inline double mean_over(const std::vector<std::uint8_t>& mask, const std::vector<double>& f) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < mask.size(); ++k)
        if (mask[k]) {
            sum += f[k];
            ++n;
        }
    if (n == 0) throw DomainError("empty ball mask");
    return sum / static_cast<double>(n);
}

inline Vec node_vec(const VectorField& u, std::size_t k) {
    Vec a(static_cast<Eigen::Index>(u.components));
    for (std::size_t c = 0; c < u.components; ++c) a[static_cast<Eigen::Index>(c)] = u.at(k)[c];
    return a;
}

inline VectorField shortened(const VectorField& u, double lambda) {
    VectorField out = u;
    if (lambda == 0.0) return out;
    for (std::size_t k = 0; k < u.grid.size(); ++k) {
        const Vec a = shorten(lambda, node_vec(u, k));
        for (std::size_t c = 0; c < u.components; ++c) out.at(k)[c] = a[static_cast<Eigen::Index>(c)];
    }
    return out;
}

inline double shortened_norm(double norm, double lambda) { return std::max(norm - lambda, 0.0); }

/// phi^{-1}(y) by bisection (closed form for Power).
inline double phi_inverse(const NFunction& phi, double y) {
    if (!(y >= 0.0)) throw DomainError("phi inverse needs y >= 0");
    if (y == 0.0) return 0.0;
    if (phi.family() == NFunction::Family::Power) return std::pow(phi.p() * y, 1.0 / phi.p());
    double lo = 0.0, hi = 1.0;
    while (phi(hi) < y) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (phi(mid) < y ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline void finish_ratio(CertificateReport& rep, double lhs, double rhs, double cap) {
    rep.set("lhs", lhs);
    rep.set("rhs", rhs);
    rep.headline = "ratio";
    if (lhs == 0.0 && rhs == 0.0) {
        rep.degenerate = true;
        rep.set("ratio", 0.0);
    } else {
        rep.cap("ratio", rhs > 0.0 ? lhs / rhs : std::numeric_limits<double>::infinity(), cap);
    }
    rep.finalize();
}

} // namespace detail

/// U_k = average over B_k nodes of phi(|S_{lambda_k} u| / r^sigma), k = 0..K.
inline std::vector<double> level_sequence(const VectorField& u, const NFunction& phi, const LevelSchedule& sched,
                                          double sigma) {
    sched.validate(u.grid);
    const double scale = std::pow(sched.base.radius, -sigma);
    std::vector<double> U;
    std::vector<double> f(u.grid.size());
    for (std::size_t k = 0; k <= sched.levels; ++k) {
        const double lam = sched.level(k);
        for (std::size_t x = 0; x < u.grid.size(); ++x) f[x] = phi(detail::shortened_norm(u.norm_at(x), lam) * scale);
        U.push_back(detail::mean_over(ball_mask(u.grid, sched.ball(k)), f));
    }
    return U;
}

/// Worst violation of U_k <= (#B_{k-1} / #B_k) U_{k-1}, relative to U_{k-1}.
inline double almost_decreasing_violation(const std::vector<double>& U, const Grid& g, const LevelSchedule& sched) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < U.size(); ++k) {
        const double factor = static_cast<double>(count(ball_mask(g, sched.ball(k - 1)))) /
                              static_cast<double>(count(ball_mask(g, sched.ball(k))));
        const double bound = factor * U[k - 1];
        worst = std::max(worst, (U[k] - bound) / std::max(bound, 1e-300));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Caccioppoli ratios

struct LevelPair {
    double lambda, Lambda;
    double r, R;
    void validate() const {
        if (!(lambda > 0.0 && lambda < Lambda)) throw DomainError("need 0 < lambda < Lambda");
        if (!(r > 0.0 && r < R)) throw DomainError("need 0 < r < R");
    }
};

/// Local: LHS = sum over cells in B_r of phi(|grad_h S_Lambda u|) h^n,
/// RHS = sum over B_R of phi(Lambda/(Lambda-lambda) |S_lambda u| / (R-r)) h^n.
inline CertificateReport caccioppoli_ratio_local(const VectorField& u, const NFunction& phi,
                                                 std::array<double, 2> center, const LevelPair& lv,
                                                 double cap = std::numeric_limits<double>::max()) {
    lv.validate();
    const Grid& g = u.grid;
    const VectorField SL = detail::shortened(u, lv.Lambda);
    const Ball br{center, lv.r}, bR{center, lv.R};
    std::vector<double> Q;
    double lhs = 0.0, rhs = 0.0;
    const double vol = g.cell_volume(), fac = lv.Lambda / (lv.Lambda - lv.lambda) / (lv.R - lv.r);
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (br.contains(g, k) && cell_jacobian(SL, k, Q)) {
            double q2 = 0.0;
            for (double e : Q) q2 += e * e;
            lhs += phi(std::sqrt(q2)) * vol;
        }
        if (bR.contains(g, k)) rhs += phi(fac * detail::shortened_norm(u.norm_at(k), lv.lambda)) * vol;
    }
    CertificateReport rep;
    rep.name = "caccioppoli_local";
    rep.inputs_digest = digest({{"phi", phi.to_json()}, {"lambda", lv.lambda}, {"Lambda", lv.Lambda}, {"r", lv.r},
                                {"R", lv.R}, {"n", g.dim}, {"h", g.h}});
    detail::finish_ratio(rep, lhs, rhs, cap);
    return rep;
}

/// Nonlocal: LHS = double sum over B_r x B_r of phi(|delta^s S_Lambda u|) w;
/// RHS = the integral term plus the tail-weighted term.
inline CertificateReport caccioppoli_ratio_nonlocal(const NonlocalProblem& P, const VectorField& u,
                                                    std::array<double, 2> center, const LevelPair& lv,
                                                    double cap = std::numeric_limits<double>::max()) {
    lv.validate();
    const Grid& g = u.grid;
    const NFunction& phi = P.phi;
    const double s = P.s, n = static_cast<double>(g.dim), q = phi.q();
    const VectorField SL = detail::shortened(u, lv.Lambda);
    const Ball br{center, lv.r}, bR{center, lv.R};
    const auto in_r = ball_mask(g, br);
    const std::size_t N = u.components, nx = g.nodes[0];

    double lhs = 0.0;
    for (std::size_t x = 0; x < g.size(); ++x) {
        if (!in_r[x]) continue;
        for (std::size_t y = x + 1; y < g.size(); ++y) {
            if (!in_r[y]) continue;
            const std::size_t off = P.kernel.offset(x % nx > y % nx ? x % nx - y % nx : y % nx - x % nx, y / nx - x / nx);
            double m2 = 0.0;
            for (std::size_t c = 0; c < N; ++c) {
                const double d = (SL.values[x * N + c] - SL.values[y * N + c]) * P.kernel.inv_ds[off];
                m2 += d * d;
            }
            lhs += 2.0 * phi(std::sqrt(m2)) * P.kernel.weight[off];
        }
    }

    const double Rs = std::pow(lv.R, s), ratio_l = lv.Lambda / (lv.Lambda - lv.lambda), ratio_r = lv.R / (lv.R - lv.r);
    double term1 = 0.0, mass = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!bR.contains(g, k)) continue;
        const double sl = detail::shortened_norm(u.norm_at(k), lv.lambda);
        term1 += phi(ratio_l * ratio_r * sl / Rs) * g.cell_volume();
        mass += phi(sl / Rs) * g.cell_volume();
    }
    const double t = tail(P, u, bR);
    const double weight = ratio_l * std::pow(ratio_r, n + s * q) * phi.derivative(t / Rs) /
                          phi.derivative((lv.Lambda - lv.lambda) / lv.Lambda * lv.Lambda / Rs);
    const double term2 = weight * mass;

    CertificateReport rep;
    rep.name = "caccioppoli_nonlocal";
    rep.inputs_digest = digest({{"phi", phi.to_json()}, {"s", s}, {"lambda", lv.lambda}, {"Lambda", lv.Lambda},
                                {"r", lv.r}, {"R", lv.R}, {"n", g.dim}, {"h", g.h}});
    rep.set("rhs_integral", term1);
    rep.set("rhs_tail_term", term2);
    rep.set("tail", t);
    detail::finish_ratio(rep, lhs, term1 + term2, cap);
    return rep;
}

// ---------------------------------------------------------------------------
// Boundedness

/// c_hat = sup_B phi(|u| / r^sigma) / (avg_2B phi(|u| / r^sigma) + [nonlocal] phi(tail / r^sigma)).
inline CertificateReport boundedness_certificate(const VectorField& u, const NFunction& phi, const Ball& B, Mode mode,
                                                 const NonlocalProblem* P = nullptr, double cap = 1e3) {
    if (mode == Mode::Nonlocal && P == nullptr) throw DomainError("nonlocal boundedness needs the problem");
    LevelSchedule::check_inside(u.grid, B.scaled(2.0));
    const double sigma = mode == Mode::Local ? 1.0 : P->s;
    const double scale = std::pow(B.radius, -sigma);
    std::vector<double> f(u.grid.size());
    for (std::size_t k = 0; k < u.grid.size(); ++k) f[k] = phi(u.norm_at(k) * scale);
    const auto mask = ball_mask(u.grid, B);
    double sup = 0.0;
    for (std::size_t k = 0; k < mask.size(); ++k)
        if (mask[k]) sup = std::max(sup, f[k]);
    if (count(mask) == 0) throw DomainError("empty ball mask");
    const double avg = detail::mean_over(ball_mask(u.grid, B.scaled(2.0)), f);
    double tail_term = 0.0, t = 0.0;
    if (mode == Mode::Nonlocal) {
        t = tail(*P, u, B);
        tail_term = phi(t * scale);
    }
    CertificateReport rep;
    rep.name = mode == Mode::Local ? "boundedness_local" : "boundedness_nonlocal";
    nlohmann::json in = {{"phi", phi.to_json()}, {"r", B.radius}, {"n", u.grid.dim}, {"h", u.grid.h}};
    if (P) in["s"] = P->s;
    rep.inputs_digest = digest(in);
    rep.set("sup_term", sup);
    rep.set("average_term", avg);
    rep.set("tail", t);
    rep.set("tail_term", tail_term);
    rep.headline = "c_hat";
    const double denom = avg + tail_term;
    if (sup == 0.0 && denom == 0.0) {
        rep.degenerate = true;
        rep.set("c_hat", 0.0);
    } else {
        rep.cap("c_hat", denom > 0.0 ? sup / denom : std::numeric_limits<double>::infinity(), cap);
    }
    return rep.finalize(), rep;
}

// ---------------------------------------------------------------------------
// Convex hull property

/// Max over free nodes of the distance of u(x) to the hull of the fixed values
/// (plus any extra points, e.g. far-field values), normalized by the hull
/// diameter; and the sup-norm consequence.
inline CertificateReport convex_hull_certificate(const VectorField& u, Mode mode,
                                                 const std::vector<std::vector<double>>& extra_points = {},
                                                 double cap = 1e-8, double sup_cap = 1e-8) {
    const std::size_t N = u.components;
    std::vector<std::vector<double>> pts;
    for (std::size_t k = 0; k < u.grid.size(); ++k)
        if (u.is_boundary(k)) pts.emplace_back(u.at(k).begin(), u.at(k).end());
    for (const auto& e : extra_points) pts.push_back(e);
    if (pts.empty()) throw DomainError("convex hull certificate needs at least one data value");
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    Mat P(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(pts.size()));
    double data_sup = 0.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
        double n2 = 0.0;
        for (std::size_t c = 0; c < N; ++c) {
            P(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = pts[j][c];
            n2 += pts[j][c] * pts[j][c];
        }
        data_sup = std::max(data_sup, std::sqrt(n2));
    }
    double diam = 0.0;
    for (Eigen::Index i = 0; i < P.cols(); ++i)
        for (Eigen::Index j = i + 1; j < P.cols(); ++j) diam = std::max(diam, (P.col(i) - P.col(j)).norm());
    double worst = 0.0, interior_sup = 0.0;
    std::size_t worst_node = 0;
    for (std::size_t k = 0; k < u.grid.size(); ++k) {
        if (u.is_boundary(k)) continue;
        const Vec a = detail::node_vec(u, k);
        interior_sup = std::max(interior_sup, a.norm());
        const double d = hull_distance(P, a) / (diam > 0.0 ? diam : 1.0);
        if (d > worst) {
            worst = d;
            worst_node = k;
        }
    }
    CertificateReport rep;
    rep.name = mode == Mode::Local ? "convex_hull_local" : "convex_hull_nonlocal";
    rep.inputs_digest = digest({{"n", u.grid.dim}, {"N", N}, {"h", u.grid.h}, {"points", pts.size()}});
    rep.set("hull_points", static_cast<double>(pts.size()));
    rep.set("hull_diameter", diam);
    rep.set("interior_sup", interior_sup);
    rep.set("data_sup", data_sup);
    rep.cap("normalized_distance", worst, cap);
    rep.cap("sup_excess", interior_sup - data_sup, sup_cap);
    rep.headline = "normalized_distance";
    rep.finalize();
    if (!rep.pass) rep.witness["worst_node"] = worst_node;
    return rep;
}

// ---------------------------------------------------------------------------
// Improved Poincare ratios

namespace detail {
inline std::vector<double> centered_norms(const VectorField& v, const std::vector<std::uint8_t>& mask) {
    const std::size_t N = v.components;
    std::vector<double> mean(N, 0.0);
    const auto cnt = static_cast<double>(count(mask));
    if (cnt == 0) throw DomainError("empty ball mask");
    for (std::size_t k = 0; k < mask.size(); ++k)
        if (mask[k])
            for (std::size_t c = 0; c < N; ++c) mean[c] += v.at(k)[c];
    for (auto& m : mean) m /= cnt;
    std::vector<double> out(mask.size(), 0.0);
    for (std::size_t k = 0; k < mask.size(); ++k) {
        double s = 0.0;
        for (std::size_t c = 0; c < N; ++c) s += (v.at(k)[c] - mean[c]) * (v.at(k)[c] - mean[c]);
        out[k] = std::sqrt(s);
    }
    return out;
}

/// (avg_B phi^e)^{1/e}; e = infinity gives the sup.
inline double power_mean(const NFunction& phi, const std::vector<double>& dev, const std::vector<std::uint8_t>& mask,
                         double e) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < mask.size(); ++k) {
        if (!mask[k]) continue;
        const double f = phi(dev[k]);
        acc = std::isinf(e) ? std::max(acc, f) : acc + std::pow(f, e);
        ++n;
    }
    return std::isinf(e) ? acc : std::pow(acc / static_cast<double>(n), 1.0 / e);
}
} // namespace detail

/// (avg_B phi^{n/(n-1)}(|v - <v>_B|))^{(n-1)/n} over avg over cells in B of phi(r |grad_h v|).
inline CertificateReport poincare_ratio_local(const VectorField& v, const NFunction& phi, const Ball& B) {
    const Grid& g = v.grid;
    const auto mask = ball_mask(g, B);
    const auto dev = detail::centered_norms(v, mask);
    const double n = static_cast<double>(g.dim);
    const double e = g.dim == 1 ? std::numeric_limits<double>::infinity() : n / (n - 1.0);
    const double lhs = detail::power_mean(phi, dev, mask, e);
    std::vector<double> Q;
    double rhs = 0.0;
    std::size_t cells = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (!mask[k] || !cell_jacobian(v, k, Q)) continue;
        double q2 = 0.0;
        for (double x : Q) q2 += x * x;
        rhs += phi(B.radius * std::sqrt(q2));
        ++cells;
    }
    if (cells == 0) throw DomainError("ball contains no grid cells");
    rhs /= static_cast<double>(cells);
    CertificateReport rep;
    rep.name = "poincare_local";
    rep.inputs_digest = digest({{"phi", phi.to_json()}, {"r", B.radius}, {"n", g.dim}, {"h", g.h}});
    detail::finish_ratio(rep, lhs, rhs, std::numeric_limits<double>::max());
    return rep;
}

/// (avg_B phi^{n/(n-alpha)}(|v - <v>_B|))^{(n-alpha)/n} over
/// |B|^{-1} sum over B x B of phi(r^s |delta^s v|) w. Requires 0 <= alpha < s.
inline CertificateReport poincare_ratio_nonlocal(const VectorField& v, const NFunction& phi, const Ball& B, double s,
                                                 double alpha) {
    if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0, 1)");
    if (!(alpha >= 0.0 && alpha < s)) throw DomainError("alpha must lie in [0, s)");
    const Grid& g = v.grid;
    const auto mask = ball_mask(g, B);
    const auto dev = detail::centered_norms(v, mask);
    const double n = static_cast<double>(g.dim);
    const double lhs = detail::power_mean(phi, dev, mask, n / (n - alpha));
    const KernelTable K = KernelTable::build(g, s);
    const std::size_t N = v.components, nx = g.nodes[0];
    const double rs = std::pow(B.radius, s);
    double rhs = 0.0;
    for (std::size_t x = 0; x < g.size(); ++x) {
        if (!mask[x]) continue;
        for (std::size_t y = x + 1; y < g.size(); ++y) {
            if (!mask[y]) continue;
            const std::size_t off = K.offset(x % nx > y % nx ? x % nx - y % nx : y % nx - x % nx, y / nx - x / nx);
            double m2 = 0.0;
            for (std::size_t c = 0; c < N; ++c) {
                const double d = (v.values[x * N + c] - v.values[y * N + c]) * K.inv_ds[off];
                m2 += d * d;
            }
            rhs += 2.0 * phi(rs * std::sqrt(m2)) * K.weight[off];
        }
    }
    rhs /= static_cast<double>(count(mask)) * g.cell_volume();
    CertificateReport rep;
    rep.name = "poincare_nonlocal";
    rep.inputs_digest = digest({{"phi", phi.to_json()}, {"r", B.radius}, {"s", s}, {"alpha", alpha}, {"n", g.dim}, {"h", g.h}});
    rep.set("alpha", alpha);
    detail::finish_ratio(rep, lhs, rhs, std::numeric_limits<double>::max());
    return rep;
}

// ---------------------------------------------------------------------------
// Scale invariance

/// Field x -> t^{-s} u(t x) on the grid scaled by 1/t.
inline VectorField rescale_field(const VectorField& u, double t, double s) {
    if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("rescaling factor must be positive");
    VectorField out = u;
    out.grid = Grid::make(u.grid.dim, u.grid.nodes, {u.grid.lower[0] / t, u.grid.lower[1] / t}, u.grid.h / t);
    const double f = std::pow(t, -s);
    for (auto& x : out.values) x *= f;
    return out;
}

inline NonlocalProblem rescale_problem(const NonlocalProblem& P, double t) {
    return NonlocalProblem(P.phi, P.s, rescale_field(P.data, t, P.s), P.far.rescaled(t, P.s), P.options);
}

/// Compares r^{-s} tail and the Euler-Lagrange residual of u with those of its
/// rescaling. Gradients transform as grad_ubar = t^{s-n} grad_u; the residual
/// mismatch is measured against the sum of absolute gradient contributions.
inline CertificateReport scale_invariance_check(const NonlocalProblem& P, const VectorField& u, const Ball& B, double t,
                                                double cap = 1e-8) {
    const NonlocalProblem Pb = rescale_problem(P, t);
    const VectorField ub = rescale_field(u, t, P.s);
    const Ball Bb{{B.center[0] / t, B.center[1] / t}, B.radius / t};
    const double n = static_cast<double>(P.grid.dim), s = P.s;
    const double t0 = tail(P, u, B) * std::pow(B.radius, -s);
    const double t1 = tail(Pb, ub, Bb) * std::pow(Bb.radius, -s);
    const double tail_mismatch = t0 == 0.0 && t1 == 0.0 ? 0.0 : std::abs(t1 - t0) / std::max(std::abs(t0), std::abs(t1));

    const VectorField g0 = nonlocal_energy_gradient(P, u);
    const VectorField g1 = nonlocal_energy_gradient(Pb, ub);
    const double back = std::pow(t, n - s);
    double mismatch = 0.0, res0 = 0.0, res1 = 0.0;
    for (std::size_t i = 0; i < g0.values.size(); ++i) {
        mismatch = std::max(mismatch, std::abs(back * g1.values[i] - g0.values[i]));
        res0 = std::max(res0, std::abs(g0.values[i]));
        res1 = std::max(res1, std::abs(g1.values[i]));
    }
    const double scale = P.gradient_scale(u.values);

    CertificateReport rep;
    rep.name = "scale_invariance";
    rep.inputs_digest = digest({{"phi", P.phi.to_json()}, {"s", s}, {"t", t}, {"r", B.radius}, {"n", P.grid.dim}, {"h", P.grid.h}});
    rep.set("scaled_tail", t0);
    rep.set("scaled_tail_rescaled", t1);
    rep.set("residual", res0);
    rep.set("residual_rescaled", res1);
    rep.set("energy", nonlocal_energy(P, u));
    rep.set("energy_rescaled", nonlocal_energy(Pb, ub));
    rep.set("gradient_scale", scale);
    rep.cap("tail_mismatch", tail_mismatch, cap);
    rep.cap("residual_mismatch", scale > 0.0 ? mismatch / scale : mismatch, cap);
    rep.headline = "tail_mismatch";
    return rep.finalize(), rep;
}

// ---------------------------------------------------------------------------
// Level-sequence decay driver

/// Per-instance inputs to the level driver: U_0 = avg over 2B of phi(|u| / r^sigma),
/// the sup of |u| over 2B, and the tail term phi(tail / r^sigma) (zero locally).
struct LevelInputs {
    double U0 = 0.0;
    double sup = 0.0;
    double tail_term = 0.0;
};

inline LevelInputs level_inputs(const VectorField& u, const NFunction& phi, const Ball& B, double sigma,
                                double tail_value) {
    LevelInputs in;
    const double scale = std::pow(B.radius, -sigma);
    const auto mask = ball_mask(u.grid, B.scaled(2.0));
    std::vector<double> f(u.grid.size());
    for (std::size_t k = 0; k < u.grid.size(); ++k) {
        f[k] = phi(u.norm_at(k) * scale);
        if (mask[k]) in.sup = std::max(in.sup, u.norm_at(k));
    }
    in.U0 = detail::mean_over(mask, f);
    in.tail_term = phi(tail_value * scale);
    return in;
}

/// Smallest eps_hat^{-1} >= 1 such that phi(lambda_inf / r^sigma) = eps_hat^{-1} U_0 + tail_term
/// puts lambda_inf at least 1% above sup_{2B} |u| for every instance.
inline double fit_inverse_eps(const std::vector<LevelInputs>& inputs, const NFunction& phi, double r, double sigma) {
    const double scale = std::pow(r, -sigma);
    double inv = 1.0;
    for (const auto& in : inputs) {
        if (in.U0 <= 0.0) continue;
        inv = std::max(inv, std::max(0.0, phi(1.01 * in.sup * scale) - in.tail_term) / in.U0);
    }
    return inv;
}

/// Runs U_0..U_K with lambda_inf = r^sigma phi^{-1}(eps_inv U_0 + tail_term).
inline CertificateReport level_decay(const VectorField& u, const NFunction& phi, const Ball& B, double sigma,
                                     const LevelInputs& in, double eps_inv, std::size_t K = 20, double cap = 1e-6) {
    CertificateReport rep;
    rep.name = "level_decay";
    rep.inputs_digest = digest({{"phi", phi.to_json()}, {"r", B.radius}, {"sigma", sigma}, {"K", K}, {"eps_inv", eps_inv}});
    rep.headline = "decay_ratio";
    rep.set("eps_inv", eps_inv);
    rep.set("U0_input", in.U0);
    if (in.U0 == 0.0) {
        rep.degenerate = true;
        rep.set("decay_ratio", 0.0);
        return rep.finalize(), rep;
    }
    const double lambda_inf = std::pow(B.radius, sigma) * detail::phi_inverse(phi, eps_inv * in.U0 + in.tail_term);
    LevelSchedule sched{B, lambda_inf, K};
    const auto U = level_sequence(u, phi, sched, sigma);
    rep.series["U"] = U;
    rep.set("lambda_inf", lambda_inf);
    rep.set("almost_decreasing_violation", almost_decreasing_violation(U, u.grid, sched));
    rep.cap("decay_ratio", U.back() / U.front(), cap);
    return rep.finalize(), rep;
}

} // namespace vdg
