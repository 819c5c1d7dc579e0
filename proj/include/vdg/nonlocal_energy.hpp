#pragma once

// Discrete nonlocal Orlicz energy with complement data, and the tail functional.
//
// Node x owns the cell x + [-h/2, h/2]^n. Pairs of distinct nodes interact
// through phi(|v(x) - v(y)| / |x-y|^s) h^{2n} / |x-y|^n. Interactions with
// the exterior of the computational box use an analytic descriptor of the
// data there and are integrated in polar coordinates about each node.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "descent.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "nfunc.hpp"
#include "quadrature.hpp"
#include "report.hpp"

namespace vdg {

/// Data outside the computational box: g(y) = c, or g(y) = c (1 + |y - x_c| / l)^(-beta).
struct FarField {
    enum class Kind { Constant, PowerDecay };
    Kind kind = Kind::Constant;
    std::vector<double> c;  // empty means zero
    double beta = 0.0;
    double length = 1.0;
    std::array<double, 2> center{0.0, 0.0};

    static FarField zero() { return {}; }
    static FarField constant(std::vector<double> c) { return {Kind::Constant, std::move(c)}; }
    static FarField power_decay(std::vector<double> c, double beta, double length, std::array<double, 2> center) {
        return {Kind::PowerDecay, std::move(c), beta, length, center};
    }

    bool is_zero() const {
        return std::all_of(c.begin(), c.end(), [](double x) { return x == 0.0; });
    }

    double profile(std::array<double, 2> y) const {
        if (kind == Kind::Constant) return 1.0;
        const double r = std::hypot(y[0] - center[0], y[1] - center[1]);
        return std::pow(1.0 + r / length, -beta);
    }

    /// g(y) written into out (size N).
    void value(std::array<double, 2> y, std::size_t N, double* out) const {
        const double f = profile(y);
        for (std::size_t i = 0; i < N; ++i) out[i] = i < c.size() ? c[i] * f : 0.0;
    }

    /// Descriptor of y -> t^(-s) g(t y).
    FarField rescaled(double t, double s) const {
        FarField f = *this;
        for (auto& x : f.c) x *= std::pow(t, -s);
        f.length /= t;
        f.center = {center[0] / t, center[1] / t};
        return f;
    }
};

enum class EnergyForm { Full, Renormalized };

struct NonlocalOptions {
    DescentOptions descent{};
    EnergyForm form = EnergyForm::Renormalized;
    /// Gauss-Legendre points per angular panel of the far-field rule.
    std::size_t angular_order = 12;
    /// Uniform ray count for the tail integral (two dimensions).
    std::size_t tail_rays = 4096;
    /// When non-empty, kernel tables are cached in this directory.
    std::string kernel_cache_dir;
};

/// Pair weights by grid offset: w = h^{2n} / d^n and d^{-s}, d = h |offset|.
struct KernelTable {
    std::size_t nx = 0, ny = 0;
    double s = 0.0;
    std::vector<double> weight, inv_ds;

    static KernelTable build(const Grid& g, double s) {
        KernelTable k;
        k.nx = g.nodes[0];
        k.ny = g.nodes[1];
        k.s = s;
        k.weight.assign(k.nx * k.ny, 0.0);
        k.inv_ds.assign(k.nx * k.ny, 0.0);
        const double n = static_cast<double>(g.dim);
        const double h2n = std::pow(g.h, 2.0 * n);
        for (std::size_t j = 0; j < k.ny; ++j)
            for (std::size_t i = 0; i < k.nx; ++i) {
                if (i == 0 && j == 0) continue;
                const double d = g.h * std::hypot(static_cast<double>(i), static_cast<double>(j));
                k.weight[i + k.nx * j] = h2n / std::pow(d, n);
                k.inv_ds[i + k.nx * j] = std::pow(d, -s);
            }
        return k;
    }

    std::size_t offset(std::size_t di, std::size_t dj) const noexcept { return di + nx * dj; }

    static std::string key(const Grid& g, double s) {
        nlohmann::json j = {{"dim", g.dim}, {"nx", g.nodes[0]}, {"ny", g.nodes[1]}, {"h", g.h}, {"s", s}};
        return fnv1a_hex(j.dump());
    }

    void save(const std::filesystem::path& file) const {
        std::ofstream os(file, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write kernel cache " + file.string());
        const std::uint64_t dims[2] = {nx, ny};
        os.write("ODGK", 4);
        os.write(reinterpret_cast<const char*>(dims), sizeof dims);
        os.write(reinterpret_cast<const char*>(&s), sizeof s);
        os.write(reinterpret_cast<const char*>(weight.data()), static_cast<std::streamsize>(weight.size() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(inv_ds.data()), static_cast<std::streamsize>(inv_ds.size() * sizeof(double)));
    }

    /// Returns false if the file is missing or does not match the expected shape.
    bool load(const std::filesystem::path& file, std::size_t ex, std::size_t ey, double es) {
        std::ifstream is(file, std::ios::binary);
        if (!is) return false;
        char magic[4];
        std::uint64_t dims[2];
        double ss;
        if (!is.read(magic, 4) || std::string(magic, 4) != "ODGK") return false;
        if (!is.read(reinterpret_cast<char*>(dims), sizeof dims) || !is.read(reinterpret_cast<char*>(&ss), sizeof ss))
            return false;
        if (dims[0] != ex || dims[1] != ey || ss != es) return false;
        std::vector<double> w(ex * ey), d(ex * ey);
        if (!is.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double))) ||
            !is.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double))))
            return false;
        nx = ex;
        ny = ey;
        s = es;
        weight = std::move(w);
        inv_ds = std::move(d);
        return true;
    }
};

/// A direction from a point to the box boundary: quadrature weight (in angle),
/// distance to the boundary, and unit direction.
struct Ray {
    double weight;
    double rho;
    std::array<double, 2> dir;
};

/// Angular rule about x for integrals over the box complement. In two
/// dimensions each box edge is parametrized by arclength xi, with
/// dtheta = d dxi / (d^2 + xi^2), on panels graded geometrically away from
/// the foot of the perpendicular. Weights sum to 2 pi (2 in one dimension).
inline std::vector<Ray> exterior_rays(const Grid& g, std::array<double, 2> x, std::size_t order) {
    std::vector<Ray> rays;
    if (g.dim == 1) {
        rays.push_back({1.0, x[0] - g.box_lower(0), {-1.0, 0.0}});
        rays.push_back({1.0, g.box_upper(0) - x[0], {1.0, 0.0}});
        return rays;
    }
    const quad::Rule& rule = quad::gauss_legendre(order);
    const double X0 = g.box_lower(0), X1 = g.box_upper(0), Y0 = g.box_lower(1), Y1 = g.box_upper(1);
    struct Edge {
        double d, lo, hi;          // distance, xi range
        std::array<double, 2> n;   // outward normal
        std::array<double, 2> t;   // tangent (direction of increasing xi)
    };
    const Edge edges[4] = {
        {X1 - x[0], Y0 - x[1], Y1 - x[1], {1, 0}, {0, 1}},
        {x[0] - X0, Y0 - x[1], Y1 - x[1], {-1, 0}, {0, 1}},
        {Y1 - x[1], X0 - x[0], X1 - x[0], {0, 1}, {1, 0}},
        {x[1] - Y0, X0 - x[0], X1 - x[0], {0, -1}, {1, 0}},
    };
    for (const Edge& e : edges) {
        if (!(e.d > 0.0)) throw DomainError("point lies outside the computational box");
        auto panel = [&](double a, double b) {
            const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
            for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
                const double xi = mid + half * rule.nodes[i];
                const double rho2 = e.d * e.d + xi * xi, rho = std::sqrt(rho2);
                rays.push_back({rule.weights[i] * half * e.d / rho2, rho,
                                {(e.d * e.n[0] + xi * e.t[0]) / rho, (e.d * e.n[1] + xi * e.t[1]) / rho}});
            }
        };
        for (int side = 0; side < 2; ++side) {
            const double L = side == 0 ? e.hi : -e.lo;
            double a = 0.0, b = std::min(L, e.d);
            while (a < L) {
                if (side == 0) panel(a, b);
                else panel(-b, -a);
                a = b;
                b = std::min(L, 2.0 * b);
            }
        }
    }
    return rays;
}

namespace detail {

/// Far-field contribution of one node: F(a) = 2 h^n integral over the box
/// complement of phi(|a - g(y)| / |x-y|^s) dy / |x-y|^n.
struct FarNode {
    // Constant descriptor: rays to the box boundary.
    std::vector<double> w, rho;
    // Collapsed sums sum_w rho^{-s e} for the exponents of power-type phi.
    double kappa_p = 0.0, kappa_q = 0.0;
    // PowerDecay: radial-angular points with weight, rho^{-s} and g values; then
    // the remainder beyond rho_max, treated with g = 0.
    std::vector<double> pw, pscale, pg;
    std::vector<double> rw, rscale;
};

} // namespace detail

/// Nonlocal minimization instance. Omega is the set of nodes tagged Interior in `data`;
/// values on the other nodes are fixed complement data.
class NonlocalProblem {
public:
    Grid grid;
    NFunction phi;
    double s;
    VectorField data;
    FarField far;
    NonlocalOptions options;
    std::vector<std::uint8_t> omega;
    KernelTable kernel;

    NonlocalProblem(NFunction phi_, double s_, VectorField data_, FarField far_, NonlocalOptions opt = {})
        : grid(data_.grid), phi(std::move(phi_)), s(s_), data(std::move(data_)), far(std::move(far_)), options(std::move(opt)) {
        if (!(s > 0.0 && s < 1.0)) throw DomainError("s must lie in (0, 1)");
        if (!(options.descent.tolerance > 0.0)) throw DomainError("tolerance must be positive");
        const std::size_t N = data.components;
        if (!far.c.empty() && far.c.size() != N) throw DomainError("far-field vector has the wrong number of components");
        if (far.kind == FarField::Kind::PowerDecay) {
            if (!(far.length > 0.0)) throw DomainError("far-field decay length must be positive");
            if (!(far.beta > s * phi.p()))
                throw DomainError("far-field decay exponent must exceed s*p for the tail integral to converge");
        }
        omega.assign(grid.size(), 0);
        std::size_t count = 0;
        for (std::size_t k = 0; k < grid.size(); ++k) {
            omega[k] = data.is_boundary(k) ? 0 : 1;
            if (omega[k] && grid.on_box_boundary(k)) throw DomainError("Omega must lie strictly inside the computational box");
            count += omega[k];
        }
        if (count == 0) throw DomainError("Omega has no nodes");
        load_kernel();
        far_nodes_.resize(grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k)
            if (omega[k] || options.form == EnergyForm::Full) build_far_node(k);
        fixed_energy_ = 0.0;
        if (options.form == EnergyForm::Full) fixed_energy_ = fixed_part(data.values);
    }

    std::size_t components() const noexcept { return data.components; }
    bool in_omega(std::size_t k) const { return omega[k] != 0; }

    /// Far-field energy of node k at value a (size N); adds the gradient to grad if given.
    double far_energy(std::size_t k, const double* a, double* grad) const {
        const detail::FarNode& f = far_nodes_[k];
        const std::size_t N = components();
        const double pref = 2.0 * grid.cell_volume();
        if (far.kind == FarField::Kind::Constant) {
            double m2 = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double d = a[i] - (far.c.empty() ? 0.0 : far.c[i]);
                m2 += d * d;
            }
            const double m = std::sqrt(m2);
            if (m == 0.0) return 0.0;
            double e = 0.0, de = 0.0;  // energy and derivative in m
            switch (phi.family()) {
            case NFunction::Family::Power: {
                const double p = phi.p(), mp = detail::pow_fast(m, p);
                e = mp * f.kappa_p / (s * p * p);
                de = mp / m * f.kappa_p / (s * p);
                break;
            }
            case NFunction::Family::PowerSum: {
                const double p = phi.p(), q = phi.q();
                const double mp = detail::pow_fast(m, p), mq = detail::pow_fast(m, q);
                e = mp * f.kappa_p / (s * p * p) + mq * f.kappa_q / (s * q * q);
                de = mp / m * f.kappa_p / (s * p) + mq / m * f.kappa_q / (s * q);
                break;
            }
            case NFunction::Family::Tabulated:
                for (std::size_t r = 0; r < f.w.size(); ++r) {
                    const double sc = std::pow(f.rho[r], -s), t = m * sc;
                    e += f.w[r] * phi.log_integral(t) / s;
                    de += f.w[r] * phi(t) / t * sc / s;
                }
                break;
            }
            if (grad)
                for (std::size_t i = 0; i < N; ++i)
                    grad[i] += pref * de * (a[i] - (far.c.empty() ? 0.0 : far.c[i])) / m;
            return pref * e;
        }
        double e = 0.0;
        for (std::size_t r = 0; r < f.pw.size(); ++r) {
            const double* g = &f.pg[r * N];
            double m2 = 0.0;
            for (std::size_t i = 0; i < N; ++i) m2 += (a[i] - g[i]) * (a[i] - g[i]);
            const double m = std::sqrt(m2);
            if (m == 0.0) continue;
            double v, d;
            phi.value_and_derivative(m * f.pscale[r], v, d);
            e += f.pw[r] * v;
            if (grad)
                for (std::size_t i = 0; i < N; ++i) grad[i] += pref * f.pw[r] * d * f.pscale[r] * (a[i] - g[i]) / m;
        }
        double m2 = 0.0;
        for (std::size_t i = 0; i < N; ++i) m2 += a[i] * a[i];
        const double m = std::sqrt(m2);
        if (m > 0.0)
            for (std::size_t r = 0; r < f.rw.size(); ++r) {
                const double t = m * f.rscale[r];
                e += f.rw[r] * phi.log_integral(t) / s;
                if (grad)
                    for (std::size_t i = 0; i < N; ++i) grad[i] += pref * f.rw[r] * phi(t) / t * f.rscale[r] / s * a[i] / m;
            }
        return pref * e;
    }

    /// Energy over a flat node-major vector; the value and gradient paths share one loop.
    template <bool WithGradient>
    double assemble(const std::vector<double>& v, std::vector<double>* grad) const {
        const std::size_t N = components(), M = grid.size(), nx = grid.nodes[0];
        if constexpr (WithGradient) grad->assign(v.size(), 0.0);
        std::vector<double> delta(N);
        double energy = 0.0;
        for (std::size_t x = 0; x < M; ++x) {
            const std::size_t ix = x % nx, jx = x / nx;
            for (std::size_t y = x + 1; y < M; ++y) {
                if (!omega[x] && !omega[y]) continue;
                const std::size_t iy = y % nx, jy = y / nx;
                const std::size_t off = kernel.offset(ix > iy ? ix - iy : iy - ix, jy - jx);
                const double sc = kernel.inv_ds[off];
                double m2 = 0.0;
                for (std::size_t c = 0; c < N; ++c) {
                    delta[c] = (v[x * N + c] - v[y * N + c]) * sc;
                    m2 += delta[c] * delta[c];
                }
                if (m2 == 0.0) continue;
                const double m = std::sqrt(m2);
                double val, der;
                phi.value_and_derivative(m, val, der);
                const double w = kernel.weight[off];
                energy += 2.0 * val * w;
                if constexpr (WithGradient) {
                    const double coef = 2.0 * w * der / m * sc;
                    for (std::size_t c = 0; c < N; ++c) {
                        (*grad)[x * N + c] += coef * delta[c];
                        (*grad)[y * N + c] -= coef * delta[c];
                    }
                }
            }
        }
        for (std::size_t x = 0; x < M; ++x)
            if (omega[x]) energy += far_energy(x, &v[x * N], WithGradient ? &(*grad)[x * N] : nullptr);
        if constexpr (WithGradient)
            for (std::size_t x = 0; x < M; ++x)
                if (!omega[x])
                    for (std::size_t c = 0; c < N; ++c) (*grad)[x * N + c] = 0.0;
        return energy + fixed_energy_;
    }

    /// The v-independent part of the full form: complement-complement pairs
    /// inside the box and far-field terms of complement nodes.
    double fixed_energy() const noexcept { return fixed_energy_; }

    /// Sup over Omega nodes of the summed magnitudes of all gradient contributions.
    double gradient_scale(const std::vector<double>& v) const {
        const std::size_t N = components(), M = grid.size(), nx = grid.nodes[0];
        std::vector<double> acc(M, 0.0), far_grad(N);
        for (std::size_t x = 0; x < M; ++x) {
            if (!omega[x]) continue;
            for (std::size_t y = 0; y < M; ++y) {
                if (y == x) continue;
                const std::size_t off = kernel.offset(x % nx > y % nx ? x % nx - y % nx : y % nx - x % nx,
                                                      x / nx > y / nx ? x / nx - y / nx : y / nx - x / nx);
                double m2 = 0.0;
                for (std::size_t c = 0; c < N; ++c) {
                    const double d = (v[x * N + c] - v[y * N + c]) * kernel.inv_ds[off];
                    m2 += d * d;
                }
                acc[x] += 2.0 * kernel.weight[off] * phi.derivative(std::sqrt(m2)) * kernel.inv_ds[off];
            }
            std::fill(far_grad.begin(), far_grad.end(), 0.0);
            far_energy(x, &v[x * N], far_grad.data());
            double f2 = 0.0;
            for (double e : far_grad) f2 += e * e;
            acc[x] += std::sqrt(f2);
        }
        return *std::max_element(acc.begin(), acc.end());
    }

    void check_conforming(const VectorField& v) const {
        if (!(v.grid == grid) || v.components != components() || v.values.size() != data.values.size())
            throw DomainError("field does not conform to the problem grid");
        const std::size_t N = components();
        for (std::size_t k = 0; k < grid.size(); ++k) {
            if (omega[k]) continue;
            for (std::size_t c = 0; c < N; ++c)
                if (v.values[k * N + c] != data.values[k * N + c])
                    throw DomainError("field violates the complement data");
        }
    }

private:
    std::vector<detail::FarNode> far_nodes_;
    double fixed_energy_ = 0.0;

    void load_kernel() {
        if (options.kernel_cache_dir.empty()) {
            kernel = KernelTable::build(grid, s);
            return;
        }
        const std::filesystem::path dir(options.kernel_cache_dir);
        const auto file = dir / ("kernel-" + KernelTable::key(grid, s) + ".bin");
        if (kernel.load(file, grid.nodes[0], grid.nodes[1], s)) return;
        kernel = KernelTable::build(grid, s);
        std::filesystem::create_directories(dir);
        kernel.save(file);
    }

    void build_far_node(std::size_t k) {
        detail::FarNode& f = far_nodes_[k];
        const auto x = grid.point(k);
        const auto rays = exterior_rays(grid, x, options.angular_order);
        if (far.kind == FarField::Kind::Constant) {
            for (const Ray& r : rays) {
                f.w.push_back(r.weight);
                f.rho.push_back(r.rho);
                f.kappa_p += r.weight * std::pow(r.rho, -s * phi.p());
                f.kappa_q += r.weight * std::pow(r.rho, -s * phi.q());
            }
            return;
        }
        // Radial rule in z = log rho out to where the profile drops below 1e-12.
        const std::size_t N = components();
        const quad::Rule& rule = quad::gauss_legendre(8);
        std::vector<double> g(N);
        for (const Ray& r : rays) {
            const double dc = std::hypot(x[0] - far.center[0], x[1] - far.center[1]);
            const double rho_max = r.rho + dc + far.length * std::pow(1e12, 1.0 / far.beta);
            const double z0 = std::log(r.rho), z1 = std::log(rho_max);
            const std::size_t panels = static_cast<std::size_t>(std::ceil(z1 - z0)) + 1;
            const double width = (z1 - z0) / static_cast<double>(panels);
            for (std::size_t pnl = 0; pnl < panels; ++pnl) {
                const double mid = z0 + width * (static_cast<double>(pnl) + 0.5);
                for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
                    const double z = mid + 0.5 * width * rule.nodes[i];
                    const double rho = std::exp(z);
                    far.value({x[0] + rho * r.dir[0], x[1] + rho * r.dir[1]}, N, g.data());
                    f.pw.push_back(r.weight * 0.5 * width * rule.weights[i]);
                    f.pscale.push_back(std::exp(-s * z));
                    f.pg.insert(f.pg.end(), g.begin(), g.end());
                }
            }
            f.rw.push_back(r.weight);
            f.rscale.push_back(std::pow(rho_max, -s));
        }
    }

    double fixed_part(const std::vector<double>& v) const {
        const std::size_t N = components(), M = grid.size(), nx = grid.nodes[0];
        double energy = 0.0;
        for (std::size_t x = 0; x < M; ++x) {
            if (omega[x]) continue;
            for (std::size_t y = x + 1; y < M; ++y) {
                if (omega[y]) continue;
                const std::size_t off = kernel.offset(x % nx > y % nx ? x % nx - y % nx : y % nx - x % nx, y / nx - x / nx);
                double m2 = 0.0;
                for (std::size_t c = 0; c < N; ++c) {
                    const double d = (v[x * N + c] - v[y * N + c]) * kernel.inv_ds[off];
                    m2 += d * d;
                }
                if (m2 > 0.0) energy += 2.0 * phi(std::sqrt(m2)) * kernel.weight[off];
            }
            energy += far_energy(x, &v[x * N], nullptr);
        }
        return energy;
    }
};

/// (v(x) - v(y)) / |x-y|^s.
inline std::vector<double> scaled_difference(const VectorField& v, std::size_t x, std::size_t y, double s) {
    if (x == y) throw DomainError("scaled difference needs distinct nodes");
    const auto px = v.grid.point(x), py = v.grid.point(y);
    const double d = std::pow(std::hypot(px[0] - py[0], px[1] - py[1]), s);
    std::vector<double> out(v.components);
    for (std::size_t c = 0; c < v.components; ++c) out[c] = (v.at(x)[c] - v.at(y)[c]) / d;
    return out;
}

/// (v(x) + v(y)) / 2.
inline std::vector<double> symmetrization(const VectorField& v, std::size_t x, std::size_t y) {
    std::vector<double> out(v.components);
    for (std::size_t c = 0; c < v.components; ++c) out[c] = 0.5 * (v.at(x)[c] + v.at(y)[c]);
    return out;
}

namespace detail {
struct NonlocalObjective {
    const NonlocalProblem& P;
    double value(const std::vector<double>& x) const { return P.assemble<false>(x, nullptr); }
    double value_and_gradient(const std::vector<double>& x, std::vector<double>& g) const {
        return P.assemble<true>(x, &g);
    }
};
} // namespace detail

inline double nonlocal_energy(const NonlocalProblem& P, const VectorField& v) {
    P.check_conforming(v);
    return P.assemble<false>(v.values, nullptr);
}

inline VectorField nonlocal_energy_gradient(const NonlocalProblem& P, const VectorField& v) {
    P.check_conforming(v);
    VectorField out = v;
    P.assemble<true>(v.values, &out.values);
    return out;
}

inline double el_residual_nonlocal(const NonlocalProblem& P, const VectorField& v) {
    const VectorField g = nonlocal_energy_gradient(P, v);
    double m = 0.0;
    for (double e : g.values) m = std::max(m, std::abs(e));
    return m;
}

struct NonlocalSolution {
    VectorField field;
    SolverTrace trace;
};

inline NonlocalSolution solve_nonlocal(const NonlocalProblem& P, const VectorField& init) {
    P.check_conforming(init);
    NonlocalSolution sol{init, {}};
    sol.field.roles = P.data.roles;
    sol.trace = minimize(detail::NonlocalObjective{P}, sol.field.values, P.options.descent);
    return sol;
}

/// Integral over B^c of phi'(|u(y)| / |y - x_B|^s) dy / |y - x_B|^{n+s}.
///
/// u is taken piecewise constant on node cells inside the box; each ray from
/// the ball surface is marched cell by cell, with the exact radial integral
/// (phi(|c| rho1^-s) - phi(|c| rho2^-s)) / (s |c|) on every segment. Outside
/// the box the far-field descriptor is used.
inline double tail_integral(const NonlocalProblem& P, const VectorField& u, const Ball& B) {
    const Grid& g = u.grid;
    const double s = P.s;
    const NFunction& phi = P.phi;
    const std::size_t N = u.components;
    if (!(B.radius > 0.0)) throw DomainError("ball radius must be positive");
    auto segment = [&](double c, double r1, double r2) {
        if (c == 0.0) return 0.0;
        return (phi(c * std::pow(r1, -s)) - phi(c * std::pow(r2, -s))) / (s * c);
    };
    std::vector<double> gv(N);
    auto far_part = [&](const std::array<double, 2>& dir, double rho_e) {
        if (P.far.kind == FarField::Kind::Constant) {
            double c2 = 0.0;
            for (double c : P.far.c) c2 += c * c;
            const double c = std::sqrt(c2);
            return c == 0.0 ? 0.0 : phi(c * std::pow(rho_e, -s)) / (s * c);
        }
        const double dc = std::hypot(B.center[0] - P.far.center[0], B.center[1] - P.far.center[1]);
        const double rho_max = rho_e + dc + P.far.length * std::pow(1e12, 1.0 / P.far.beta);
        auto f = [&](double z) {
            const double rho = std::exp(z);
            P.far.value({B.center[0] + rho * dir[0], B.center[1] + rho * dir[1]}, N, gv.data());
            double m2 = 0.0;
            for (double e : gv) m2 += e * e;
            return phi.derivative(std::sqrt(m2) * std::exp(-s * z)) * std::exp(-s * z);
        };
        const double z0 = std::log(rho_e), z1 = std::log(rho_max);
        double total = 0.0;
        const int panels = static_cast<int>(std::ceil(z1 - z0));
        for (int i = 0; i < panels; ++i)
            total += quad::integrate_adaptive(f, z0 + (z1 - z0) * i / panels, z0 + (z1 - z0) * (i + 1) / panels, 1e-10, 20);
        return total;
    };

    // March one ray; returns the box-interior contribution and sets rho_exit.
    const double lo[2] = {g.box_lower(0), g.dim == 2 ? g.box_lower(1) : 0.0};
    const double hi[2] = {g.box_upper(0), g.dim == 2 ? g.box_upper(1) : 0.0};
    auto march = [&](const std::array<double, 2>& dir, double& rho_exit) {
        const int D = g.dim;
        double p[2] = {B.center[0] + B.radius * dir[0], B.center[1] + B.radius * dir[1]};
        for (int a = 0; a < D; ++a)
            if (!(p[a] > lo[a] && p[a] < hi[a])) throw DomainError("ball must lie inside the computational box");
        long cell[2] = {0, 0}, step[2] = {0, 0};
        double tmax[2] = {INFINITY, INFINITY}, tdelta[2] = {INFINITY, INFINITY};
        for (int a = 0; a < D; ++a) {
            const auto n = static_cast<long>(g.nodes[static_cast<std::size_t>(a)]);
            cell[a] = std::clamp(static_cast<long>(std::floor((p[a] - lo[a]) / g.h)), 0L, n - 1);
            if (dir[static_cast<std::size_t>(a)] > 0) {
                step[a] = 1;
                tmax[a] = (lo[a] + g.h * static_cast<double>(cell[a] + 1) - p[a]) / dir[static_cast<std::size_t>(a)];
                tdelta[a] = g.h / dir[static_cast<std::size_t>(a)];
            } else if (dir[static_cast<std::size_t>(a)] < 0) {
                step[a] = -1;
                tmax[a] = (lo[a] + g.h * static_cast<double>(cell[a]) - p[a]) / dir[static_cast<std::size_t>(a)];
                tdelta[a] = -g.h / dir[static_cast<std::size_t>(a)];
            }
        }
        double total = 0.0, t = 0.0;
        for (;;) {
            const int a = (D == 2 && tmax[1] < tmax[0]) ? 1 : 0;
            const double t_next = tmax[a];
            const std::size_t k = g.index(static_cast<std::size_t>(cell[0]), static_cast<std::size_t>(cell[1]));
            total += segment(u.norm_at(k), B.radius + t, B.radius + t_next);
            t = t_next;
            cell[a] += step[a];
            tmax[a] += tdelta[a];
            if (cell[a] < 0 || cell[a] >= static_cast<long>(g.nodes[static_cast<std::size_t>(a)])) break;
        }
        rho_exit = B.radius + t;
        return total;
    };

    double total = 0.0;
    if (g.dim == 1) {
        for (double sgn : {-1.0, 1.0}) {
            double rho_e;
            total += march({sgn, 0.0}, rho_e);
            total += far_part({sgn, 0.0}, rho_e);
        }
        return total;
    }
    const std::size_t M = P.options.tail_rays;
    const double w = 2.0 * std::numbers::pi / static_cast<double>(M);
    for (std::size_t i = 0; i < M; ++i) {
        const double th = w * (static_cast<double>(i) + 0.5);
        const std::array<double, 2> dir{std::cos(th), std::sin(th)};
        double rho_e;
        double ray = march(dir, rho_e);
        ray += far_part(dir, rho_e);
        total += w * ray;
    }
    return total;
}

/// tail(u, B) = r^s (phi')^{-1}( r^s * tail_integral ).
inline double tail(const NonlocalProblem& P, const VectorField& u, const Ball& B) {
    const double rs = std::pow(B.radius, P.s);
    return rs * P.phi.derivative_inverse(rs * tail_integral(P, u, B));
}

} // namespace vdg
