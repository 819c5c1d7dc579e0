#pragma once

// Pointwise vectorial operators: truncation T_lambda, shortening S_lambda,
// closest-point projection onto convex targets, and their Jacobians.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "report.hpp"

namespace vdg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

namespace detail {
inline void check_level(double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("level lambda must be positive and finite");
}
} // namespace detail

/// T_lambda a = min{|a|, lambda} a/|a|, the radial clamp onto the closed ball.
inline Vec truncate(double lambda, const Eigen::Ref<const Vec>& a) {
    detail::check_level(lambda);
    const double n = a.norm();
    if (n <= lambda) return a;
    return (lambda / n) * a;
}

/// S_lambda a = a - T_lambda a = (|a| - lambda)_+ a/|a|.
inline Vec shorten(double lambda, const Eigen::Ref<const Vec>& a) {
    detail::check_level(lambda);
    const double n = a.norm();
    if (n <= lambda) return Vec::Zero(a.size());
    return ((n - lambda) / n) * a;
}

/// |S_lambda a| / |a| with the limit value 0 at a = 0.
inline double shorten_ratio(double lambda, double norm_a) {
    if (norm_a <= lambda) return 0.0;
    return (norm_a - lambda) / norm_a;
}

/// |T_lambda a| / |a| with the limit value 1 at a = 0.
inline double truncate_ratio(double lambda, double norm_a) {
    if (norm_a <= lambda) return 1.0;
    return lambda / norm_a;
}

struct BallTarget {
    Vec center;
    double radius;
};

/// Convex hull of finitely many points, stored column-wise (N x m).
struct HullTarget {
    Mat points;
};

using ConvexTarget = std::variant<BallTarget, HullTarget>;

inline ConvexTarget make_ball(Vec center, double radius) {
    if (!(radius > 0.0)) throw DomainError("ball target radius must be positive");
    return BallTarget{std::move(center), radius};
}

inline ConvexTarget make_hull(Mat points) {
    if (points.cols() == 0 || points.rows() == 0) throw DomainError("hull target needs at least one point");
    return HullTarget{std::move(points)};
}

struct HullProjection {
    Vec point;
    double distance = 0.0;
    std::size_t iterations = 0;
};

/// Closest point of conv(points) to a by Wolfe's min-norm-point active-set
/// method applied to the shifted points p_i - a.
inline HullProjection project_onto_hull(const Mat& points, const Eigen::Ref<const Vec>& a) {
    const Eigen::Index m = points.cols();
    const Eigen::Index dim = points.rows();
    if (m == 0) throw DomainError("hull projection: empty point list");
    if (dim != a.size()) throw DomainError("hull projection: dimension mismatch");

    HullProjection out;
    if (m == 1) {
        out.point = points.col(0);
        out.distance = (out.point - a).norm();
        return out;
    }
    if (dim == 1) {
        const double lo = points.row(0).minCoeff(), hi = points.row(0).maxCoeff();
        out.point = Vec::Constant(1, std::clamp(a(0), lo, hi));
        out.distance = std::abs(out.point(0) - a(0));
        return out;
    }

    const Mat shifted = points.colwise() - a;
    const double scale2 = shifted.colwise().squaredNorm().maxCoeff();
    const double gap_tol = 1e-14 * scale2 + 1e-30;

    Eigen::Index first;
    shifted.colwise().squaredNorm().minCoeff(&first);
    std::vector<Eigen::Index> active{first};
    std::vector<double> weight{1.0};
    Vec x = shifted.col(first);

    auto rebuild = [&]() {
        x.setZero(dim);
        for (std::size_t i = 0; i < active.size(); ++i) x += weight[i] * shifted.col(active[i]);
    };

    const std::size_t max_major = 50 * static_cast<std::size_t>(m) + 100;
    for (std::size_t major = 0; major < max_major; ++major) {
        ++out.iterations;
        Eigen::Index j;
        const double best = (shifted.transpose() * x).minCoeff(&j);
        if (x.squaredNorm() - best <= gap_tol) break;
        if (std::find(active.begin(), active.end(), j) != active.end()) break;
        active.push_back(j);
        weight.push_back(0.0);

        for (std::size_t minor = 0; minor < 4 * static_cast<std::size_t>(dim) + 8; ++minor) {
            const Eigen::Index k = static_cast<Eigen::Index>(active.size());
            Mat kkt = Mat::Zero(k + 1, k + 1);
            Vec rhs = Vec::Zero(k + 1);
            for (Eigen::Index r = 0; r < k; ++r) {
                for (Eigen::Index c = 0; c < k; ++c)
                    kkt(r, c) = shifted.col(active[static_cast<std::size_t>(r)]).dot(
                        shifted.col(active[static_cast<std::size_t>(c)]));
                kkt(r, k) = kkt(k, r) = 1.0;
            }
            rhs(k) = 1.0;
            const Vec sol = kkt.completeOrthogonalDecomposition().solve(rhs);
            const Vec mu = sol.head(k);

            if ((mu.array() > 1e-14).all()) {
                for (Eigen::Index i = 0; i < k; ++i) weight[static_cast<std::size_t>(i)] = mu(i);
                rebuild();
                break;
            }
            double theta = 1.0;
            for (Eigen::Index i = 0; i < k; ++i) {
                const double w = weight[static_cast<std::size_t>(i)];
                if (mu(i) <= 1e-14 && w - mu(i) > 0.0) theta = std::min(theta, w / (w - mu(i)));
            }
            for (Eigen::Index i = 0; i < k; ++i) {
                auto& w = weight[static_cast<std::size_t>(i)];
                w = (1.0 - theta) * w + theta * mu(i);
            }
            std::vector<Eigen::Index> keep_idx;
            std::vector<double> keep_w;
            for (std::size_t i = 0; i < active.size(); ++i) {
                if (weight[i] > 1e-15) {
                    keep_idx.push_back(active[i]);
                    keep_w.push_back(weight[i]);
                }
            }
            if (keep_idx.empty()) {
                keep_idx.push_back(j);
                keep_w.push_back(1.0);
            }
            double total = 0.0;
            for (double w : keep_w) total += w;
            for (double& w : keep_w) w /= total;
            active = std::move(keep_idx);
            weight = std::move(keep_w);
            rebuild();
        }
    }
    out.point = a + x;
    out.distance = x.norm();
    return out;
}

/// Closest-point projection onto a convex target.
inline Vec project(const ConvexTarget& target, const Eigen::Ref<const Vec>& a) {
    if (const auto* ball = std::get_if<BallTarget>(&target)) {
        if (!(ball->radius > 0.0)) throw DomainError("ball target radius must be positive");
        const Vec diff = a - ball->center;
        return ball->center + truncate(ball->radius, diff);
    }
    return project_onto_hull(std::get<HullTarget>(target).points, a).point;
}

/// Euclidean distance from a to the closed convex hull of the points.
inline double hull_distance(const Mat& points, const Eigen::Ref<const Vec>& a) {
    if (points.cols() == 0) throw DomainError("hull_distance: empty point list");
    return project_onto_hull(points, a).distance;
}

/// Jacobian of a composed pointwise operator, with a flag for |a| = lambda.
struct JacobianResult {
    Mat matrix;
    bool interface = false;
};

/// Jacobian of x -> T_lambda(v(x)) given v(x) = a and grad v = G (n x N,
/// G(i,j) = d_i v_j). On |a| = lambda the inside branch is returned and flagged.
inline JacobianResult truncate_jacobian(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Mat>& G, double lambda) {
    detail::check_level(lambda);
    if (G.cols() != a.size()) throw DomainError("truncate_jacobian: G must be n x N");
    const double n = a.norm();
    if (n < lambda) return {G, false};
    if (n == lambda) return {G, true};
    const Vec dir = a / n;
    return {(lambda / n) * (G - (G * dir) * dir.transpose()), false};
}

/// Jacobian of x -> S_lambda(v(x)); complementary to truncate_jacobian.
inline JacobianResult shorten_jacobian(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Mat>& G, double lambda) {
    detail::check_level(lambda);
    if (G.cols() != a.size()) throw DomainError("shorten_jacobian: G must be n x N");
    const double n = a.norm();
    if (n <= lambda) return {Mat::Zero(G.rows(), G.cols()), n == lambda};
    const Vec dir = a / n;
    const double ratio = (n - lambda) / n;
    return {ratio * G + (lambda / n) * (G * dir) * dir.transpose(), false};
}

namespace detail {

inline Vec random_direction(std::mt19937_64& rng, Eigen::Index dim) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec v(dim);
    do {
        for (Eigen::Index i = 0; i < dim; ++i) v(i) = g(rng);
    } while (v.norm() < 1e-12);
    return v.normalized();
}

} // namespace detail

/// Randomized check of the pointwise operator inequalities for T_lambda and S_lambda.
///
/// Every measured value is a worst violation normalized by max(|a|,|b|,lambda)^2
/// (or by max(|a|,lambda) for first-order quantities); caps are 1e-12.
inline CertificateReport verify_pointwise_inequalities(Eigen::Index dim, std::size_t trials, std::uint64_t seed) {
    if (dim < 1) throw DomainError("verify_pointwise_inequalities: N must be >= 1");
    if (trials == 0) throw DomainError("verify_pointwise_inequalities: trials must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    enum Check {
        TChainLower, TChainUpper, SChainLower, SChainUpper, TruncateRatio, ShortenRatio,
        Identity, ShortenNorm, GammaComparison, kChecks
    };
    const char* names[kChecks] = {"truncate_chain_lower", "truncate_chain_upper", "shorten_chain_lower",
                                  "shorten_chain_upper",  "truncate_ratio_bound", "shorten_ratio_bound",
                                  "sum_identity",         "shorten_norm",         "gamma_comparison"};
    double worst[kChecks];
    std::fill(std::begin(worst), std::end(worst), -std::numeric_limits<double>::infinity());
    nlohmann::json witness = nlohmann::json::object();

    auto to_json_vec = [](const Vec& v) {
        return std::vector<double>(v.data(), v.data() + v.size());
    };
    auto record = [&](int k, double violation, const Vec& a, const Vec& b, double lambda) {
        if (violation > worst[k]) {
            worst[k] = violation;
            if (violation > 1e-12)
                witness[names[k]] = {{"a", to_json_vec(a)}, {"b", to_json_vec(b)}, {"lambda", lambda}};
        }
    };

    for (std::size_t i = 0; i < trials; ++i) {
        const double lambda = std::exp(std::log(1e-3) + std::log(1e6) * u01(rng));
        auto draw = [&]() -> Vec {
            return lambda * std::exp(-3.0 + 6.0 * u01(rng)) * detail::random_direction(rng, dim);
        };
        Vec a = draw(), b = draw();
        const double pick = u01(rng);
        if (pick < 0.03) a.setZero();
        else if (pick < 0.06) b.setZero();
        else if (pick < 0.09) b = a;
        else if (pick < 0.12) b = a * (0.5 + u01(rng));

        const double na = a.norm(), nb = b.norm();
        const double scale = std::pow(std::max({na, nb, lambda}), 2);
        const double scale1 = std::max({na, nb, lambda});
        const Vec ta = truncate(lambda, a), tb = truncate(lambda, b);
        const Vec sa = shorten(lambda, a), sb = shorten(lambda, b);
        const Vec dab = a - b;
        const double d2 = dab.squaredNorm();

        const double t_inner = dab.dot(ta - tb);
        record(TChainLower, ((ta - tb).squaredNorm() - t_inner) / scale, a, b, lambda);
        record(TChainUpper, (t_inner - d2) / scale, a, b, lambda);
        const double s_inner = dab.dot(sa - sb);
        record(SChainLower, ((sa - sb).squaredNorm() - s_inner) / scale, a, b, lambda);
        record(SChainUpper, (s_inner - d2) / scale, a, b, lambda);

        const double t_bound = 0.5 * (truncate_ratio(lambda, na) + truncate_ratio(lambda, nb)) * d2;
        record(TruncateRatio, (t_inner - t_bound) / scale, a, b, lambda);
        const double s_bound = 0.5 * (shorten_ratio(lambda, na) + shorten_ratio(lambda, nb)) * d2;
        record(ShortenRatio, (s_bound - s_inner) / scale, a, b, lambda);

        record(Identity, (sa + ta - a).norm() / scale1, a, b, lambda);
        record(ShortenNorm, std::abs(sa.norm() - std::max(na - lambda, 0.0)) / scale1, a, b, lambda);

        // gamma > lambda and |a| >= gamma
        const double gamma = lambda * (1.0 + std::exp(std::log(1e-3) + std::log(1e4) * u01(rng)));
        const Vec ag = gamma * (1.0 + 10.0 * u01(rng)) * detail::random_direction(rng, dim);
        const double lhs = ag.norm();
        const double rhs = gamma / (gamma - lambda) * shorten(lambda, ag).norm();
        record(GammaComparison, (lhs - rhs) / std::max(lhs, rhs), ag, ag, lambda);
    }

    CertificateReport r;
    r.name = "pointwise_inequalities";
    r.inputs_digest = digest({{"N", dim}, {"trials", trials}, {"seed", seed}});
    for (int k = 0; k < kChecks; ++k) r.cap(std::string("max_violation_") + names[k], worst[k], 1e-12);
    r.set("trials", static_cast<double>(trials));
    r.set("N", static_cast<double>(dim));
    r.headline = "max_violation_shorten_ratio_bound";
    r.witness = witness;
    return r.finalize();
}

/// Randomized check of the Jacobian identities and inequalities for grad T_lambda v
/// and grad S_lambda v, plus agreement with central differences along affine fields.
inline CertificateReport verify_jacobian_identities(Eigen::Index n, Eigen::Index dim, std::size_t trials,
                                                    std::uint64_t seed) {
    if (n < 1 || dim < 1) throw DomainError("verify_jacobian_identities: n, N must be >= 1");
    if (trials == 0) throw DomainError("verify_jacobian_identities: trials must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    double identity_err = 0.0, inequality_violation = -std::numeric_limits<double>::infinity();
    double key_violation = -std::numeric_limits<double>::infinity(), fd_err = 0.0;
    std::size_t outside = 0;

    for (std::size_t t = 0; t < trials; ++t) {
        const double lambda = std::exp(std::log(1e-2) + std::log(1e4) * u01(rng));
        double ratio;
        do {
            ratio = std::exp(-2.0 + 4.0 * u01(rng));
        } while (std::abs(ratio - 1.0) < 1e-3);
        const Vec a = lambda * ratio * detail::random_direction(rng, dim);
        const double gscale = std::exp(-3.0 + 6.0 * u01(rng));
        Mat G(n, dim);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < dim; ++j) G(i, j) = gscale * gauss(rng);

        const Mat DT = truncate_jacobian(a, G, lambda).matrix;
        const Mat DS = shorten_jacobian(a, G, lambda).matrix;
        const double na = a.norm();
        const bool out = na > lambda;
        outside += out ? 1 : 0;
        const double G2 = G.squaredNorm();
        const double grad_abs2 = (G * (a / na)).squaredNorm();  // |grad |v||^2
        const double rT = lambda / na, rS = (na - lambda) / na;

        // displayed identities
        const double gT = (G.array() * DT.array()).sum();
        const double gT_formula = out ? rT * (G2 - grad_abs2) : G2;
        const double nT_formula = out ? rT * rT * (G2 - grad_abs2) : G2;
        const double gS = (G.array() * DS.array()).sum();
        const double gS_formula = out ? rS * G2 + rT * grad_abs2 : 0.0;
        const double nS_formula = out ? rS * rS * G2 + (1.0 - rS * rS) * grad_abs2 : 0.0;
        identity_err = std::max({identity_err, std::abs(gT - gT_formula) / G2,
                                 std::abs(DT.squaredNorm() - nT_formula) / G2, std::abs(gS - gS_formula) / G2,
                                 std::abs(DS.squaredNorm() - nS_formula) / G2, (DS + DT - G).norm() / std::sqrt(G2)});

        // sandwiches
        const double sq_ratio = out ? rS : 0.0;
        inequality_violation = std::max({inequality_violation, (DT.squaredNorm() - gT) / G2, (gT - G2) / G2,
                                         (DS.squaredNorm() - gS) / G2, (gS - G2) / G2,
                                         (sq_ratio * std::sqrt(G2) - DS.norm()) / std::sqrt(G2),
                                         (DS.norm() - std::sqrt(G2)) / std::sqrt(G2)});
        key_violation = std::max(key_violation, (sq_ratio * G2 - gS) / G2);

        // central differences along v(x) = a + G^T x
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vec dir = G.row(i).transpose();
            if (dir.norm() == 0.0) continue;
            const double step = 1e-5 * std::min(na, std::abs(na - lambda)) / dir.norm();
            const Vec fd_s = (shorten(lambda, a + step * dir) - shorten(lambda, a - step * dir)) / (2.0 * step);
            const Vec fd_t = (truncate(lambda, a + step * dir) - truncate(lambda, a - step * dir)) / (2.0 * step);
            const double denom = std::max(dir.norm(), 1e-300);
            fd_err = std::max({fd_err, (fd_s - DS.row(i).transpose()).norm() / denom,
                               (fd_t - DT.row(i).transpose()).norm() / denom});
        }
    }

    CertificateReport r;
    r.name = "jacobian_identities";
    r.inputs_digest = digest({{"n", n}, {"N", dim}, {"trials", trials}, {"seed", seed}});
    r.cap("max_identity_error", identity_err, 1e-10);
    r.cap("max_sandwich_violation", inequality_violation, 1e-10);
    r.cap("max_lower_bound_violation", key_violation, 1e-10);
    r.cap("max_fd_error", fd_err, 1e-6);
    r.set("fraction_outside", static_cast<double>(outside) / static_cast<double>(trials));
    r.headline = "max_lower_bound_violation";
    return r.finalize();
}

} // namespace vdg
