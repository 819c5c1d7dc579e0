#pragma once

// N-functions (Young functions) with right-derivative, inverse derivative,
// Legendre conjugate and Simonenko indices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "quadrature.hpp"
#include "report.hpp"

namespace vdg {

namespace detail {

/// t^e with exact shortcuts for the exponents that dominate the test matrix.
inline double pow_fast(double t, double e) {
    if (e == 1.0) return t;
    if (e == 2.0) return t * t;
    if (e == 3.0) return t * t * t;
    if (e == 0.5) return std::sqrt(t);
    if (e == 1.5) return t * std::sqrt(t);
    if (e == 4.0) { const double t2 = t * t; return t2 * t2; }
    return std::pow(t, e);
}

/// Monotone cubic (Fritsch-Carlson) interpolant of log(phi) against log(t),
/// continued linearly (a power law) beyond the sampled range.
struct LogLogTable {
    std::vector<double> x, y, m;
    std::vector<double> cumulative;  // log_integral at each knot

    double eval(double lx, double& slope) const {
        const std::size_t n = x.size();
        if (lx <= x.front()) {
            slope = m.front();
            return y.front() + m.front() * (lx - x.front());
        }
        if (lx >= x.back()) {
            slope = m.back();
            return y.back() + m.back() * (lx - x.back());
        }
        const auto it = std::upper_bound(x.begin(), x.end(), lx);
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(it - x.begin()) - 1, n - 2);
        const double h = x[k + 1] - x[k];
        const double s = (lx - x[k]) / h;
        const double s2 = s * s, s3 = s2 * s;
        const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
        const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
        const double d00 = 6 * s2 - 6 * s, d10 = 3 * s2 - 4 * s + 1;
        const double d01 = -6 * s2 + 6 * s, d11 = 3 * s2 - 2 * s;
        slope = (d00 * y[k] + d10 * h * m[k] + d01 * y[k + 1] + d11 * h * m[k + 1]) / h;
        return h00 * y[k] + h10 * h * m[k] + h01 * y[k + 1] + h11 * h * m[k + 1];
    }
};

} // namespace detail

/// Lower and upper Simonenko index of an N-function.
struct SimonenkoIndices {
    double lower;
    double upper;
};

/// An N-function: Power(p) = t^p/p, PowerSum(p,q) = t^p/p + t^q/q, or a
/// tabulated function interpolated monotonically in log-log coordinates.
///
/// Values are immutable after construction and safe to share across threads.
class NFunction {
public:
    enum class Family { Power, PowerSum, Tabulated };

    static NFunction power(double p) {
        if (!(p > 1.0) || !std::isfinite(p))
            throw DomainError("power N-function requires 1 < p < inf");
        NFunction f;
        f.family_ = Family::Power;
        f.p_ = f.q_ = p;
        return f;
    }

    static NFunction power_sum(double p, double q) {
        if (!(p > 1.0) || !(q >= p) || !std::isfinite(q))
            throw DomainError("power_sum N-function requires 1 < p <= q < inf");
        NFunction f;
        f.family_ = Family::PowerSum;
        f.p_ = p;
        f.q_ = q;
        return f;
    }

    /// Samples (t_i, phi(t_i)) with t_i > 0 strictly increasing.
    static NFunction tabulated(const std::vector<std::pair<double, double>>& points) {
        if (points.size() < 2) throw DomainError("tabulated N-function needs at least two samples");
        auto table = std::make_shared<detail::LogLogTable>();
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto [t, v] = points[i];
            if (!(t > 0.0) || !(v > 0.0) || !std::isfinite(t) || !std::isfinite(v))
                throw DomainError("tabulated N-function samples must be positive and finite");
            if (i > 0 && (t <= points[i - 1].first || v <= points[i - 1].second))
                throw DomainError("tabulated N-function samples must be strictly increasing");
            table->x.push_back(std::log(t));
            table->y.push_back(std::log(v));
        }
        const std::size_t n = table->x.size();
        std::vector<double> h(n - 1), delta(n - 1);
        for (std::size_t k = 0; k + 1 < n; ++k) {
            h[k] = table->x[k + 1] - table->x[k];
            delta[k] = (table->y[k + 1] - table->y[k]) / h[k];
        }
        table->m.assign(n, 0.0);
        table->m[0] = delta[0];
        table->m[n - 1] = delta[n - 2];
        for (std::size_t k = 1; k + 1 < n; ++k) {
            if (delta[k - 1] * delta[k] <= 0.0) continue;
            const double w1 = 2 * h[k] + h[k - 1], w2 = h[k] + 2 * h[k - 1];
            table->m[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
        }

        NFunction f;
        f.family_ = Family::Tabulated;
        f.table_ = table;

        // log_integral at knots: below the first knot phi is a power law with
        // exponent m0, so int_0^t0 phi(s)/s ds = phi(t0)/m0.
        table->cumulative.assign(n, 0.0);
        table->cumulative[0] = std::exp(table->y[0]) / table->m[0];
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const double piece = quad::integrate(
                [&](double lx) {
                    double slope;
                    return std::exp(table->eval(lx, slope));
                },
                table->x[k], table->x[k + 1], 16);
            table->cumulative[k + 1] = table->cumulative[k] + piece;
        }

        f.validate_tabulated();
        const auto idx = f.sample_indices();
        f.p_ = idx.lower;
        f.q_ = idx.upper;
        return f;
    }

    static NFunction from_json(const nlohmann::json& j) {
        const auto family = j.at("family").get<std::string>();
        if (family == "power") return power(j.at("p").get<double>());
        if (family == "power_sum") return power_sum(j.at("p").get<double>(), j.at("q").get<double>());
        if (family == "tabulated") {
            std::vector<std::pair<double, double>> pts;
            for (const auto& pt : j.at("points")) pts.emplace_back(pt.at(0).get<double>(), pt.at(1).get<double>());
            return tabulated(pts);
        }
        throw DomainError("unknown N-function family '" + family + "'");
    }

    nlohmann::json to_json() const {
        switch (family_) {
        case Family::Power: return {{"family", "power"}, {"p", p_}};
        case Family::PowerSum: return {{"family", "power_sum"}, {"p", p_}, {"q", q_}};
        case Family::Tabulated: {
            nlohmann::json pts = nlohmann::json::array();
            for (std::size_t k = 0; k < table_->x.size(); ++k)
                pts.push_back({std::exp(table_->x[k]), std::exp(table_->y[k])});
            return {{"family", "tabulated"}, {"points", pts}};
        }
        }
        return {};
    }

    Family family() const noexcept { return family_; }
    /// Lower Simonenko index (exact for Power/PowerSum, sampled for Tabulated).
    double p() const noexcept { return p_; }
    /// Upper Simonenko index.
    double q() const noexcept { return q_; }
    /// Bound on the Delta_2 constant: phi(2t) <= 2^q phi(t).
    double delta2() const noexcept { return std::exp2(q_); }

    double value(double t) const {
        check_nonneg(t, "phi");
        if (t == 0.0) return 0.0;
        switch (family_) {
        case Family::Power: return detail::pow_fast(t, p_) / p_;
        case Family::PowerSum: return detail::pow_fast(t, p_) / p_ + detail::pow_fast(t, q_) / q_;
        case Family::Tabulated: {
            double slope;
            return std::exp(table_->eval(std::log(t), slope));
        }
        }
        return 0.0;
    }
    double operator()(double t) const { return value(t); }

    /// Right-derivative phi'(t).
    double derivative(double t) const {
        check_nonneg(t, "phi'");
        if (t == 0.0) return 0.0;
        switch (family_) {
        case Family::Power: return detail::pow_fast(t, p_ - 1.0);
        case Family::PowerSum: return detail::pow_fast(t, p_ - 1.0) + detail::pow_fast(t, q_ - 1.0);
        case Family::Tabulated: {
            double slope;
            const double v = std::exp(table_->eval(std::log(t), slope));
            return v / t * slope;
        }
        }
        return 0.0;
    }

    /// phi(t) and phi'(t) in one evaluation.
    void value_and_derivative(double t, double& v, double& d) const {
        if (t <= 0.0) {
            check_nonneg(t, "phi");
            v = d = 0.0;
            return;
        }
        switch (family_) {
        case Family::Power: {
            const double tp1 = detail::pow_fast(t, p_ - 1.0);
            d = tp1;
            v = tp1 * t / p_;
            return;
        }
        case Family::PowerSum: {
            const double a = detail::pow_fast(t, p_ - 1.0), b = detail::pow_fast(t, q_ - 1.0);
            d = a + b;
            v = a * t / p_ + b * t / q_;
            return;
        }
        case Family::Tabulated: {
            double slope;
            v = std::exp(table_->eval(std::log(t), slope));
            d = v / t * slope;
            return;
        }
        }
    }

    /// The t >= 0 with phi'(t) = y.
    double derivative_inverse(double y) const {
        check_nonneg(y, "(phi')^{-1}");
        if (y == 0.0) return 0.0;
        if (family_ == Family::Power) return detail::pow_fast(y, 1.0 / (p_ - 1.0));
        if (!std::isfinite(y)) throw CapabilityError("(phi')^{-1} of a non-finite value");
        double lo = 1.0, hi = 1.0;
        int guard = 0;
        while (derivative(hi) < y) {
            lo = hi;
            hi *= 2.0;
            if (++guard > 2100) throw CapabilityError("phi' is bounded; cannot invert");
        }
        if (lo == hi) {
            while (derivative(lo) > y) {
                hi = lo;
                lo *= 0.5;
                if (++guard > 2100) throw CapabilityError("phi' does not vanish at 0; cannot invert");
            }
        }
        for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (derivative(mid) < y ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

    /// Legendre conjugate phi*(s) = sup_{t >= 0} (s t - phi(t)).
    double conjugate(double s) const {
        check_nonneg(s, "phi*");
        if (s == 0.0) return 0.0;
        if (family_ == Family::Power) {
            const double pc = p_ / (p_ - 1.0);
            return detail::pow_fast(s, pc) / pc;
        }
        // The supremum is attained where phi'(t) = s.
        const double t = derivative_inverse(s);
        return std::max(0.0, s * t - value(t));
    }

    /// int_0^t phi(tau)/tau d tau. Closed forms for Power/PowerSum.
    double log_integral(double t) const {
        check_nonneg(t, "log_integral");
        if (t == 0.0) return 0.0;
        switch (family_) {
        case Family::Power: return detail::pow_fast(t, p_) / (p_ * p_);
        case Family::PowerSum:
            return detail::pow_fast(t, p_) / (p_ * p_) + detail::pow_fast(t, q_) / (q_ * q_);
        case Family::Tabulated: {
            const auto& tb = *table_;
            const double lx = std::log(t);
            if (lx <= tb.x.front()) return value(t) / tb.m.front();
            if (lx >= tb.x.back())
                return tb.cumulative.back() + (value(t) - std::exp(tb.y.back())) / tb.m.back();
            const auto it = std::upper_bound(tb.x.begin(), tb.x.end(), lx);
            const std::size_t k = static_cast<std::size_t>(it - tb.x.begin()) - 1;
            return tb.cumulative[k] + quad::integrate(
                                          [&](double z) {
                                              double slope;
                                              return std::exp(tb.eval(z, slope));
                                          },
                                          tb.x[k], lx, 16);
        }
        }
        return 0.0;
    }

    /// Simonenko indices. Exact for Power/PowerSum; for Tabulated the inf/sup
    /// of t phi'(t)/phi(t) over 401 log-spaced points per decade in [1e-8, 1e8].
    SimonenkoIndices simonenko_indices() const {
        if (family_ != Family::Tabulated) return {p_, q_};
        return sample_indices();
    }

private:
    NFunction() = default;

    static void check_nonneg(double t, const char* what) {
        if (!(t >= 0.0)) throw DomainError(std::string(what) + ": argument must be >= 0");
    }

    SimonenkoIndices sample_indices() const {
        constexpr int per_decade = 401;
        constexpr int decades = 16;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (int i = 0; i <= per_decade * decades; ++i) {
            const double lx = std::log(10.0) * (-8.0 + static_cast<double>(i) / per_decade);
            double slope;
            table_->eval(lx, slope);
            lo = std::min(lo, slope);
            hi = std::max(hi, slope);
        }
        return {lo, hi};
    }

    void validate_tabulated() const {
        const auto& tb = *table_;
        if (!(tb.m.front() > 1.0) || !(tb.m.back() > 1.0))
            throw DomainError("tabulated function violates phi(t)/t -> 0 at 0 or -> inf at inf");
        const double x0 = tb.x.front() - std::log(10.0), x1 = tb.x.back() + std::log(10.0);
        const int n = std::max(2, static_cast<int>(401 * (x1 - x0) / std::log(10.0)));
        double prev = -1.0;
        for (int i = 0; i <= n; ++i) {
            const double t = std::exp(x0 + (x1 - x0) * i / n);
            const double d = derivative(t);
            if (!(d > prev)) throw DomainError("tabulated function is not strictly convex (phi' not increasing)");
            prev = d;
        }
    }

    Family family_ = Family::Power;
    double p_ = 2.0;
    double q_ = 2.0;
    std::shared_ptr<const detail::LogLogTable> table_;
};

/// Randomized check of the growth, conjugate and Young inequalities for phi.
///
/// Draws (s, t, eps) log-uniform in [1e-4,1e4]^2 x [1e-3,1]. Measured values are
/// the largest relative violations (negative means slack); every one is capped
/// at 1e-10. The Young-type constant C_eps = 2^q eps^{-1/(p-1)} follows from
/// combining the first Young form with the upper conjugate bound.
inline CertificateReport verify_nfunc_inequalities(const NFunction& phi, std::size_t trials, std::uint64_t seed) {
    if (trials == 0) throw DomainError("verify_nfunc_inequalities: trials must be >= 1");
    const double p = phi.p(), q = phi.q();
    const double pc = p / (p - 1.0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto log_uniform = [&](double lo, double hi) {
        return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * u01(rng));
    };

    const char* names[] = {"growth_lower", "growth_upper", "conjugate_lower", "conjugate_upper",
                           "young_first",  "young_second", "young_derivative", "delta2"};
    constexpr std::size_t kChecks = 8;
    double worst[kChecks];
    std::fill(std::begin(worst), std::end(worst), -std::numeric_limits<double>::infinity());
    nlohmann::json witness = nlohmann::json::object();
    double min_c_eps = std::numeric_limits<double>::infinity(), max_c_eps = 0.0;

    auto record = [&](std::size_t k, double lhs, double rhs, double s, double t, double eps) {
        const double scale = std::max({std::abs(lhs), std::abs(rhs), std::numeric_limits<double>::min()});
        const double v = (lhs - rhs) / scale;
        if (v > worst[k]) {
            worst[k] = v;
            if (v > 1e-10) witness[names[k]] = {{"s", s}, {"t", t}, {"eps", eps}, {"lhs", lhs}, {"rhs", rhs}};
        }
    };

    for (std::size_t i = 0; i < trials; ++i) {
        const double s = log_uniform(1e-4, 1e4), t = log_uniform(1e-4, 1e4), eps = log_uniform(1e-3, 1.0);
        const double phit = phi(t), phis = phi(s), phist = phi(s * t);
        record(0, std::min(std::pow(s, p), std::pow(s, q)) * phit, phist, s, t, eps);
        record(1, phist, std::max(std::pow(s, p), std::pow(s, q)) * phit, s, t, eps);
        const double conj = phi.conjugate(phi.derivative(s));
        record(2, std::exp2(-pc) * phis, conj, s, t, eps);
        record(3, conj, std::exp2(q) * phis, s, t, eps);
        const double conj_t = phi.conjugate(t);
        record(4, s * t, eps * phis + std::pow(eps, 1.0 - pc) * conj_t, s, t, eps);
        record(5, s * t, std::pow(eps, 1.0 - q) * phis + eps * conj_t, s, t, eps);
        const double c_eps = std::exp2(q) * std::pow(eps, -1.0 / (p - 1.0));
        min_c_eps = std::min(min_c_eps, c_eps);
        max_c_eps = std::max(max_c_eps, c_eps);
        record(6, phi.derivative(s) * t, c_eps * phis + eps * phit, s, t, eps);
        record(7, phi(2.0 * t), std::exp2(q) * phit, s, t, eps);
    }

    CertificateReport r;
    r.name = "nfunc_inequalities";
    r.inputs_digest = digest({{"phi", phi.to_json()}, {"trials", trials}, {"seed", seed}});
    for (std::size_t k = 0; k < kChecks; ++k) r.cap(std::string("max_violation_") + names[k], worst[k], 1e-10);
    r.set("min_slack", -*std::max_element(std::begin(worst), std::end(worst)));
    r.set("c_eps_min", min_c_eps);
    r.set("c_eps_max", max_c_eps);
    r.set("trials", static_cast<double>(trials));
    r.headline = "max_violation_young_derivative";
    r.witness = witness;
    return r.finalize();
}

} // namespace vdg
