#pragma once

// Scenario configs: validation, execution and report emission.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "degiorgi.hpp"
#include "errors.hpp"
#include "generators.hpp"
#include "grid.hpp"
#include "local_energy.hpp"
#include "nfunc.hpp"
#include "nonlocal_energy.hpp"
#include "report.hpp"
#include "vecops.hpp"

namespace vdg {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int certificate_failure = 1;
inline constexpr int schema_error = 2;
inline constexpr int stagnation = 3;
inline constexpr int io_error = 4;
} // namespace exit_code

/// Schema violation; carries one diagnostic per offending field.
class SchemaError : public std::runtime_error {
public:
    explicit SchemaError(std::vector<std::string> diagnostics)
        : std::runtime_error(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}
    const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

private:
    static std::string join(const std::vector<std::string>& d) {
        std::string out;
        for (const auto& s : d) out += (out.empty() ? "" : "\n") + s;
        return out;
    }
    std::vector<std::string> diagnostics_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CertificateSpec {
    std::string name;
    nlohmann::json params;
};

struct Scenario {
    std::string name;
    std::uint64_t seed = 0;
    std::string output;
    nlohmann::json raw;

    bool has_problem = false;
    bool nonlocal = false;
    double s = 0.5;
    EnergyForm form = EnergyForm::Renormalized;
    FarField far;
    nlohmann::json omega;
    std::optional<NFunction> phi;
    Grid grid;
    std::size_t components = 1;
    nlohmann::json data;
    DescentOptions descent;
    double regularization = 0.0;
    std::vector<CertificateSpec> certificates;
};

inline const std::vector<std::string>& certificate_names() {
    static const std::vector<std::string> names = {
        "convex_hull", "boundedness", "caccioppoli", "poincare", "level_decay", "scale_invariance",
        "tail_closed_form", "el_residual", "nfunc_inequalities", "operator_inequalities",
        "jacobian_identities", "iteration_lemma"};
    return names;
}

namespace detail {

/// Collects field diagnostics of the form "/path: message".
class Validator {
public:
    std::vector<std::string> errors;

    void error(const std::string& path, const std::string& msg) { errors.push_back(path + ": " + msg); }

    const nlohmann::json* get(const nlohmann::json& obj, const std::string& path, const char* key, bool required) {
        if (!obj.is_object()) return nullptr;
        auto it = obj.find(key);
        if (it == obj.end()) {
            if (required) error(path + "/" + key, "required field is missing");
            return nullptr;
        }
        return &*it;
    }

    std::optional<double> number(const nlohmann::json& obj, const std::string& path, const char* key, bool required,
                                 double lo = -INFINITY, double hi = INFINITY, bool open_lo = false, bool open_hi = false) {
        const auto* v = get(obj, path, key, required);
        if (!v) return std::nullopt;
        if (!v->is_number()) {
            error(path + "/" + key, "expected a number");
            return std::nullopt;
        }
        const double x = v->get<double>();
        const bool ok = std::isfinite(x) && (open_lo ? x > lo : x >= lo) && (open_hi ? x < hi : x <= hi);
        if (!ok) {
            std::ostringstream os;
            os << "value " << x << " outside " << (open_lo ? "(" : "[") << lo << ", " << hi << (open_hi ? ")" : "]");
            error(path + "/" + key, os.str());
            return std::nullopt;
        }
        return x;
    }

    std::optional<std::string> string(const nlohmann::json& obj, const std::string& path, const char* key, bool required,
                                      const std::vector<std::string>& allowed = {}) {
        const auto* v = get(obj, path, key, required);
        if (!v) return std::nullopt;
        if (!v->is_string()) {
            error(path + "/" + key, "expected a string");
            return std::nullopt;
        }
        const auto s = v->get<std::string>();
        if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
            std::string list;
            for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
            error(path + "/" + key, "unknown value '" + s + "' (expected one of: " + list + ")");
            return std::nullopt;
        }
        return s;
    }

    std::optional<std::vector<double>> vector(const nlohmann::json& obj, const std::string& path, const char* key,
                                              bool required, std::size_t size = 0) {
        const auto* v = get(obj, path, key, required);
        if (!v) return std::nullopt;
        if (!v->is_array() || (size && v->size() != size)) {
            error(path + "/" + key, size ? "expected an array of " + std::to_string(size) + " numbers" : "expected an array of numbers");
            return std::nullopt;
        }
        std::vector<double> out;
        for (const auto& e : *v) {
            if (!e.is_number() || !std::isfinite(e.get<double>())) {
                error(path + "/" + key, "expected finite numbers");
                return std::nullopt;
            }
            out.push_back(e.get<double>());
        }
        return out;
    }

    void only(const nlohmann::json& obj, const std::string& path, std::initializer_list<const char*> keys) {
        if (!obj.is_object()) return;
        for (const auto& [k, v] : obj.items()) {
            bool known = false;
            for (const char* key : keys) known = known || k == key;
            if (!known) error(path + "/" + k, "unknown field");
        }
    }
};

inline std::string line_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

inline std::optional<Ball> parse_ball(Validator& v, const nlohmann::json& obj, const std::string& path, int dim) {
    const auto* b = v.get(obj, path, "ball", true);
    if (!b) return std::nullopt;
    if (!b->is_object()) {
        v.error(path + "/ball", "expected an object");
        return std::nullopt;
    }
    v.only(*b, path + "/ball", {"center", "radius"});
    auto c = v.vector(*b, path + "/ball", "center", true, static_cast<std::size_t>(dim));
    auto r = v.number(*b, path + "/ball", "radius", true, 0.0, INFINITY, true);
    if (!c || !r) return std::nullopt;
    return Ball{{(*c)[0], dim == 2 ? (*c)[1] : 0.0}, *r};
}

inline bool ball_inside(const Grid& g, const Ball& b) {
    for (int a = 0; a < g.dim; ++a) {
        const auto i = static_cast<std::size_t>(a);
        if (b.center[i] - b.radius < g.box_lower(a) || b.center[i] + b.radius > g.box_upper(a)) return false;
    }
    return true;
}

} // namespace detail

/// Parses and validates a scenario document. Throws SchemaError with all diagnostics.
inline Scenario parse_scenario(const std::string& text) {
    detail::Validator v;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError({detail::line_column(text, e.byte == 0 ? 0 : e.byte - 1) + ": invalid JSON (" +
                           std::string(e.what()) + ")"});
    }
    if (!j.is_object()) throw SchemaError({"/: expected a JSON object"});
    Scenario sc;
    sc.raw = j;
    v.only(j, "", {"name", "seed", "output", "problem", "phi", "grid", "components", "data", "solver", "certificates"});
    if (auto n = v.string(j, "", "name", true)) sc.name = *n;
    if (auto s = v.number(j, "", "seed", false, 0.0, 9007199254740992.0)) {
        if (*s != std::floor(*s)) v.error("/seed", "expected an integer");
        sc.seed = static_cast<std::uint64_t>(*s);
    }
    if (auto o = v.string(j, "", "output", false)) sc.output = *o;

    int dim = 1;
    if (const auto* g = v.get(j, "", "grid", false)) {
        v.only(*g, "/grid", {"dim", "nodes", "lower", "upper"});
        auto d = v.number(*g, "/grid", "dim", true, 1, 2);
        auto n = v.number(*g, "/grid", "nodes", true, 3, 4096);
        auto lo = v.number(*g, "/grid", "lower", true);
        auto hi = v.number(*g, "/grid", "upper", true);
        if (d && *d != std::floor(*d)) v.error("/grid/dim", "expected 1 or 2");
        if (n && *n != std::floor(*n)) v.error("/grid/nodes", "expected an integer");
        if (lo && hi && !(*hi > *lo)) v.error("/grid/upper", "must exceed lower");
        if (d && n && lo && hi && *hi > *lo) {
            dim = static_cast<int>(*d);
            sc.grid = Grid::spanning(dim, static_cast<std::size_t>(*n), *lo, *hi);
        }
    }
    if (const auto* p = v.get(j, "", "phi", false)) {
        try {
            sc.phi = NFunction::from_json(*p);
        } catch (const std::exception& e) {
            v.error("/phi", e.what());
        }
    }
    if (auto c = v.number(j, "", "components", false, 1, 64)) {
        if (*c != std::floor(*c)) v.error("/components", "expected an integer");
        sc.components = static_cast<std::size_t>(*c);
    }

    if (const auto* p = v.get(j, "", "problem", false)) {
        sc.has_problem = true;
        v.only(*p, "/problem", {"kind", "s", "energy_form", "far_field", "omega"});
        const auto kind = v.string(*p, "/problem", "kind", true, {"local", "nonlocal"});
        sc.nonlocal = kind && *kind == "nonlocal";
        if (sc.nonlocal) {
            if (auto s = v.number(*p, "/problem", "s", true, 0.0, 1.0, true, true)) sc.s = *s;
            if (auto f = v.string(*p, "/problem", "energy_form", false, {"renormalized", "full"}))
                sc.form = *f == "full" ? EnergyForm::Full : EnergyForm::Renormalized;
            if (const auto* ff = v.get(*p, "/problem", "far_field", false)) {
                v.only(*ff, "/problem/far_field", {"kind", "value", "beta", "length", "center"});
                const auto fk = v.string(*ff, "/problem/far_field", "kind", true, {"zero", "constant", "power_decay"});
                if (fk && *fk != "zero") {
                    auto val = v.vector(*ff, "/problem/far_field", "value", true, sc.components);
                    if (*fk == "constant" && val) sc.far = FarField::constant(*val);
                    if (*fk == "power_decay") {
                        auto beta = v.number(*ff, "/problem/far_field", "beta", true, 0.0, INFINITY, true);
                        auto len = v.number(*ff, "/problem/far_field", "length", false, 0.0, INFINITY, true);
                        auto cen = v.vector(*ff, "/problem/far_field", "center", false, 2);
                        if (val && beta) {
                            sc.far = FarField::power_decay(*val, *beta, len.value_or(1.0),
                                                           cen ? std::array<double, 2>{(*cen)[0], (*cen)[1]}
                                                               : std::array<double, 2>{0.0, 0.0});
                            if (sc.phi && !(*beta > sc.s * sc.phi->p()))
                                v.error("/problem/far_field/beta", "must exceed s*p for the tail integral to converge");
                        }
                    }
                }
            }
            if (const auto* om = v.get(*p, "/problem", "omega", true)) {
                v.only(*om, "/problem/omega", {"shape", "half_width", "center", "radius"});
                const auto shape = v.string(*om, "/problem/omega", "shape", true, {"box", "ball"});
                if (shape && *shape == "box") v.number(*om, "/problem/omega", "half_width", true, 0.0, INFINITY, true);
                if (shape && *shape == "ball") {
                    v.vector(*om, "/problem/omega", "center", true, static_cast<std::size_t>(dim));
                    v.number(*om, "/problem/omega", "radius", true, 0.0, INFINITY, true);
                }
                sc.omega = *om;
            }
        } else {
            for (const char* key : {"s", "energy_form", "far_field", "omega"})
                if (p->contains(key)) v.error(std::string("/problem/") + key, "only valid for nonlocal problems");
        }
    }

    if (const auto* d = v.get(j, "", "data", sc.has_problem)) {
        v.only(*d, "/data", {"kind", "value", "amplitude", "modes", "components"});
        const auto kind = v.string(*d, "/data", "kind", true, {"constant", "random", "expression"});
        if (kind && *kind == "constant") v.vector(*d, "/data", "value", true, sc.components);
        if (kind && *kind == "random") {
            v.number(*d, "/data", "amplitude", false, 0.0, INFINITY);
            if (auto m = v.number(*d, "/data", "modes", false, 1, 64); m && *m != std::floor(*m))
                v.error("/data/modes", "expected an integer");
        }
        if (kind && *kind == "expression") {
            const auto* c = v.get(*d, "/data", "components", true);
            if (c && (!c->is_array() || c->size() != sc.components))
                v.error("/data/components", "expected " + std::to_string(sc.components) + " expression strings");
            else if (c)
                for (std::size_t i = 0; i < c->size(); ++i) {
                    if (!(*c)[i].is_string()) {
                        v.error("/data/components/" + std::to_string(i), "expected a string");
                        continue;
                    }
                    try {
                        Expression::parse((*c)[i].get<std::string>());
                    } catch (const std::exception& e) {
                        v.error("/data/components/" + std::to_string(i), e.what());
                    }
                }
        }
        sc.data = *d;
    }
    if (sc.has_problem) {
        v.get(j, "", "grid", true);
        v.get(j, "", "phi", true);
    }

    if (const auto* s = v.get(j, "", "solver", false)) {
        v.only(*s, "/solver", {"tolerance", "max_iterations", "direction", "line_search", "regularization"});
        if (auto t = v.number(*s, "/solver", "tolerance", false, 0.0, 1.0, true)) sc.descent.tolerance = *t;
        if (auto m = v.number(*s, "/solver", "max_iterations", false, 1, 1e9)) sc.descent.max_iterations = static_cast<std::size_t>(*m);
        if (auto d = v.string(*s, "/solver", "direction", false, {"cg", "steepest"}))
            sc.descent.direction = *d == "cg" ? DescentOptions::Direction::ConjugateGradient : DescentOptions::Direction::Steepest;
        if (auto l = v.string(*s, "/solver", "line_search", false, {"derivative_sign", "armijo"}))
            sc.descent.line_search = *l == "armijo" ? DescentOptions::LineSearch::Armijo : DescentOptions::LineSearch::DerivativeSign;
        if (auto r = v.number(*s, "/solver", "regularization", false, 0.0)) sc.regularization = *r;
    }

    const auto* certs = v.get(j, "", "certificates", true);
    if (certs && !certs->is_array()) v.error("/certificates", "expected an array");
    if (certs && certs->is_array()) {
        for (std::size_t i = 0; i < certs->size(); ++i) {
            const auto& c = (*certs)[i];
            const std::string path = "/certificates/" + std::to_string(i);
            if (!c.is_object()) {
                v.error(path, "expected an object");
                continue;
            }
            const auto name = v.string(c, path, "name", true, certificate_names());
            if (!name) continue;
            const bool needs_problem = *name != "nfunc_inequalities" && *name != "operator_inequalities" &&
                                       *name != "jacobian_identities" && *name != "iteration_lemma";
            if (needs_problem && !sc.has_problem) v.error(path + "/name", "certificate needs a problem");
            if (*name == "nfunc_inequalities" && !sc.phi) v.error(path + "/name", "certificate needs phi");
            v.number(c, path, "cap", false, 0.0);
            v.number(c, path, "trials", false, 1, 1e7);
            if (*name == "boundedness" || *name == "poincare" || *name == "level_decay" || *name == "scale_invariance" ||
                *name == "tail_closed_form") {
                auto b = detail::parse_ball(v, c, path, dim);
                if (b && sc.grid.size() && !detail::ball_inside(sc.grid, *b))
                    v.error(path + "/ball", "ball must lie inside the grid box");
                if (b && (*name == "boundedness" || *name == "level_decay") && sc.grid.size() &&
                    !detail::ball_inside(sc.grid, b->scaled(2.0)))
                    v.error(path + "/ball", "the doubled ball must lie inside the grid box");
            }
            if (*name == "caccioppoli") {
                v.vector(c, path, "center", true, static_cast<std::size_t>(dim));
                auto lam = v.number(c, path, "lambda", true, 0.0, INFINITY, true);
                auto Lam = v.number(c, path, "Lambda", true, 0.0, INFINITY, true);
                auto r = v.number(c, path, "r", true, 0.0, INFINITY, true);
                auto R = v.number(c, path, "R", true, 0.0, INFINITY, true);
                if (lam && Lam && !(*lam < *Lam)) v.error(path + "/Lambda", "must exceed lambda");
                if (r && R && !(*r < *R)) v.error(path + "/R", "must exceed r");
            }
            if (*name == "poincare" && sc.nonlocal) {
                if (auto a = v.number(c, path, "alpha", true, 0.0); a && !(*a < sc.s))
                    v.error(path + "/alpha", "must lie in [0, s) = [0, " + std::to_string(sc.s) + ")");
            }
            if (*name == "level_decay") {
                v.number(c, path, "levels", false, 1, 60);
                v.number(c, path, "eps_inv", false, 1.0);
            }
            if ((*name == "scale_invariance" || *name == "tail_closed_form") && !sc.nonlocal)
                v.error(path + "/name", "certificate needs a nonlocal problem");
            if (*name == "scale_invariance") v.number(c, path, "t", false, 0.0, INFINITY, true);
            if (*name == "tail_closed_form" && sc.phi && sc.phi->family() != NFunction::Family::Power)
                v.error(path + "/name", "closed-form tail needs a power N-function");
            if (*name == "operator_inequalities") v.number(c, path, "N", false, 1, 64);
            if (*name == "jacobian_identities") {
                v.number(c, path, "n", false, 1, 64);
                v.number(c, path, "N", false, 1, 64);
            }
            sc.certificates.push_back({*name, c});
        }
    }
    if (!v.errors.empty()) throw SchemaError(v.errors);
    return sc;
}

// ---------------------------------------------------------------------------
// Execution

struct RunOptions {
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
};

struct RunResult {
    int exit_code = 0;
    nlohmann::json report;
    std::vector<CertificateReport> certificates;
    std::optional<VectorField> solution;
    SolverTrace trace;
    std::string message;
};

namespace detail {

inline FieldFunction data_function(const Scenario& sc, std::uint64_t seed) {
    const auto& d = sc.data;
    const std::string kind = d.at("kind").get<std::string>();
    if (kind == "constant") return constant_function(d.at("value").get<std::vector<double>>());
    if (kind == "random") {
        const double extent = sc.grid.box_upper(0) - sc.grid.box_lower(0);
        return random_fourier_function(sc.components, sc.grid.dim, d.value("amplitude", 1.0), d.value("modes", 3),
                                       2.0 * extent, seed);
    }
    return expression_function(d.at("components").get<std::vector<std::string>>());
}

inline bool in_omega(const Scenario& sc, std::array<double, 2> x) {
    const auto& om = sc.omega;
    if (om.at("shape") == "box") {
        const double w = om.at("half_width").get<double>();
        const double cx = 0.5 * (sc.grid.box_lower(0) + sc.grid.box_upper(0));
        const double cy = sc.grid.dim == 2 ? 0.5 * (sc.grid.box_lower(1) + sc.grid.box_upper(1)) : 0.0;
        return std::abs(x[0] - cx) < w && (sc.grid.dim == 1 || std::abs(x[1] - cy) < w);
    }
    const auto c = om.at("center").get<std::vector<double>>();
    const double dx = x[0] - c[0], dy = sc.grid.dim == 2 ? x[1] - c[1] : 0.0;
    return std::hypot(dx, dy) < om.at("radius").get<double>();
}

inline nlohmann::json trace_json(const SolverTrace& t) {
    return {{"iterations", t.iterations},
            {"evaluations", t.evaluations},
            {"converged", t.converged},
            {"final_energy", t.energy.empty() ? 0.0 : t.energy.back()},
            {"final_gradient_sup", t.gradient_sup.empty() ? 0.0 : t.gradient_sup.back()}};
}

inline double param(const nlohmann::json& c, const char* key, double fallback) {
    return c.contains(key) ? c.at(key).get<double>() : fallback;
}

inline Ball ball_param(const nlohmann::json& c) {
    const auto cen = c.at("ball").at("center").get<std::vector<double>>();
    return Ball{{cen[0], cen.size() > 1 ? cen[1] : 0.0}, c.at("ball").at("radius").get<double>()};
}

/// Random admissible (a, b, alpha) with W0 at 90% of the threshold.
inline CertificateReport iteration_lemma_suite(std::size_t trials, std::uint64_t seed, double cap = 1e-8) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ua(1.0, 10.0), ualpha(0.1, 2.0);
    std::size_t failures = 0, max_steps = 0;
    nlohmann::json witness;
    for (std::size_t i = 0; i < trials; ++i) {
        const double a = ua(rng), b = ua(rng), alpha = ualpha(rng);
        const double thr = iteration_lemma(a, b, alpha, 0.0, 0).threshold;
        const auto res = iteration_lemma(a, b, alpha, 0.9 * thr, 10000, cap);
        max_steps = std::max(max_steps, res.trajectory.size() - 1);
        if (!res.converged || !res.guaranteed) {
            ++failures;
            if (witness.is_null()) witness = {{"a", a}, {"b", b}, {"alpha", alpha}};
        }
    }
    CertificateReport rep;
    rep.name = "iteration_lemma";
    rep.inputs_digest = digest({{"trials", trials}, {"seed", seed}});
    rep.set("trials", static_cast<double>(trials));
    rep.set("max_steps", static_cast<double>(max_steps));
    rep.cap("failures", static_cast<double>(failures), 0.0);
    rep.headline = "failures";
    rep.finalize();
    if (!witness.is_null()) rep.witness["first_failure"] = witness;
    return rep;
}

} // namespace detail

/// Runs a validated scenario. Never writes files; see emit_report.
inline RunResult run_scenario(const Scenario& sc, const RunOptions& ro = {}) {
    RunResult out;
    const std::uint64_t seed = ro.seed.value_or(sc.seed);
    std::optional<LocalProblem> lp;
    std::optional<NonlocalProblem> np;
    nlohmann::json solver_json = nullptr;

    if (sc.has_problem) {
        VectorField data = sample(sc.grid, sc.components, detail::data_function(sc, seed));
        if (sc.nonlocal) {
            for (std::size_t k = 0; k < sc.grid.size(); ++k)
                data.roles[k] = detail::in_omega(sc, sc.grid.point(k)) ? NodeRole::Interior : NodeRole::Boundary;
            NonlocalOptions opt;
            opt.descent = sc.descent;
            opt.form = sc.form;
            FarField far = sc.far;
            if (far.c.empty()) far.c.assign(sc.components, 0.0);
            np.emplace(*sc.phi, sc.s, data, far, opt);
        } else {
            data.mark_box_boundary();
            LocalOptions opt;
            opt.descent = sc.descent;
            opt.regularization = sc.regularization;
            lp.emplace(*sc.phi, data, opt);
        }
        const VectorField init = boundary_mean_guess(data);
        try {
            if (np) {
                auto sol = solve_nonlocal(*np, init);
                out.solution = sol.field;
                out.trace = sol.trace;
            } else {
                auto sol = solve_local(*lp, init);
                out.solution = sol.field;
                out.trace = sol.trace;
            }
        } catch (const StagnationError& e) {
            out.trace = e.trace();
            out.exit_code = exit_code::stagnation;
            out.message = e.what();
            solver_json = detail::trace_json(out.trace);
            solver_json["error"] = e.what();
        }
        if (out.exit_code == 0) {
            solver_json = detail::trace_json(out.trace);
            if (!out.trace.converged) solver_json["warning"] = "iteration limit reached before the tolerance";
        }
    }

    if (out.exit_code == 0) {
        const Mode mode = np ? Mode::Nonlocal : Mode::Local;
        for (const auto& spec : sc.certificates) {
            const auto& c = spec.params;
            const auto trials = static_cast<std::size_t>(detail::param(c, "trials", 10000));
            CertificateReport rep;
            const std::string& n = spec.name;
            if (n == "nfunc_inequalities") {
                rep = verify_nfunc_inequalities(*sc.phi, trials, seed);
            } else if (n == "operator_inequalities") {
                rep = verify_pointwise_inequalities(static_cast<Eigen::Index>(detail::param(c, "N", 3)), trials, seed);
            } else if (n == "jacobian_identities") {
                rep = verify_jacobian_identities(static_cast<Eigen::Index>(detail::param(c, "n", 2)),
                                                 static_cast<Eigen::Index>(detail::param(c, "N", 3)), trials, seed);
            } else if (n == "iteration_lemma") {
                rep = detail::iteration_lemma_suite(static_cast<std::size_t>(detail::param(c, "trials", 1000)), seed,
                                                    detail::param(c, "cap", 1e-8));
            } else if (n == "el_residual") {
                const double res = np ? el_residual_nonlocal(*np, *out.solution) : el_residual_local(*lp, *out.solution);
                const double e = np ? nonlocal_energy(*np, *out.solution) : local_energy(*lp, *out.solution);
                rep.name = "el_residual";
                rep.inputs_digest = digest(sc.raw);
                rep.set("energy", e);
                rep.cap("residual", res, detail::param(c, "cap", sc.descent.tolerance * (1.0 + std::abs(e))));
                rep.headline = "residual";
                rep.finalize();
            } else if (n == "convex_hull") {
                std::vector<std::vector<double>> extra;
                if (np) {
                    extra.push_back(np->far.c);
                    if (np->far.kind == FarField::Kind::PowerDecay) extra.emplace_back(sc.components, 0.0);
                }
                rep = convex_hull_certificate(*out.solution, mode, extra, detail::param(c, "cap", 1e-8),
                                              detail::param(c, "sup_cap", 1e-8));
            } else if (n == "boundedness") {
                rep = boundedness_certificate(*out.solution, *sc.phi, detail::ball_param(c), mode, np ? &*np : nullptr,
                                              detail::param(c, "cap", 1e3));
            } else if (n == "caccioppoli") {
                const auto cen = c.at("center").get<std::vector<double>>();
                const LevelPair lv{c.at("lambda").get<double>(), c.at("Lambda").get<double>(), c.at("r").get<double>(),
                                   c.at("R").get<double>()};
                const std::array<double, 2> center{cen[0], cen.size() > 1 ? cen[1] : 0.0};
                const double cap = detail::param(c, "cap", std::numeric_limits<double>::max());
                rep = np ? caccioppoli_ratio_nonlocal(*np, *out.solution, center, lv, cap)
                         : caccioppoli_ratio_local(*out.solution, *sc.phi, center, lv, cap);
            } else if (n == "poincare") {
                rep = np ? poincare_ratio_nonlocal(*out.solution, *sc.phi, detail::ball_param(c), sc.s, c.at("alpha").get<double>())
                         : poincare_ratio_local(*out.solution, *sc.phi, detail::ball_param(c));
            } else if (n == "level_decay") {
                const Ball B = detail::ball_param(c);
                const double sigma = np ? sc.s : 1.0;
                const double t = np ? tail(*np, *out.solution, B) : 0.0;
                const LevelInputs in = level_inputs(*out.solution, *sc.phi, B, sigma, t);
                const double eps_inv = detail::param(c, "eps_inv", fit_inverse_eps({in}, *sc.phi, B.radius, sigma));
                rep = level_decay(*out.solution, *sc.phi, B, sigma, in, eps_inv,
                                  static_cast<std::size_t>(detail::param(c, "levels", 20)), detail::param(c, "cap", 1e-6));
            } else if (n == "scale_invariance") {
                rep = scale_invariance_check(*np, *out.solution, detail::ball_param(c), detail::param(c, "t", 2.0),
                                             detail::param(c, "cap", 1e-8));
            } else if (n == "tail_closed_form") {
                const Ball B = detail::ball_param(c);
                const double measured = tail(*np, *out.solution, B);
                double cn = 0.0;
                for (double x : np->far.c) cn += x * x;
                cn = std::sqrt(cn);
                const double omega = sc.grid.dim == 2 ? 2.0 * std::numbers::pi : 2.0;
                const double p = sc.phi->p();
                const double expected = cn * std::pow(omega / (sc.s * p), 1.0 / (p - 1.0));
                rep.name = "tail_closed_form";
                rep.inputs_digest = digest(sc.raw);
                rep.set("tail", measured);
                rep.set("closed_form", expected);
                rep.cap("relative_error",
                        expected == 0.0 ? std::abs(measured) : std::abs(measured - expected) / expected,
                        detail::param(c, "cap", 1e-3));
                rep.headline = "relative_error";
                rep.finalize();
            }
            out.certificates.push_back(std::move(rep));
        }
    }

    bool all = true;
    nlohmann::json certs = nlohmann::json::array();
    for (const auto& r : out.certificates) {
        all = all && r.pass;
        certs.push_back(to_json(r));
    }
    if (out.exit_code == 0 && !all) out.exit_code = exit_code::certificate_failure;
    out.report = {{"scenario", sc.name},
                  {"seed", seed},
                  {"config_digest", digest(sc.raw)},
                  {"deterministic", ro.deterministic},
                  {"solver", solver_json},
                  {"certificates", certs},
                  {"pass", out.exit_code == 0},
                  {"exit_code", out.exit_code}};
    return out;
}

// ---------------------------------------------------------------------------
// Emission

namespace detail {

inline std::string csv_number(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << bytes;
    if (!os) throw IoError("write failed: " + path.string());
}

inline std::string summary_csv(const nlohmann::json& certificates, const std::string& prefix_key = "") {
    std::string out = "name,value,cap,pass\n";
    for (const auto& c : certificates) {
        auto number = [](const nlohmann::json& v) -> double {
            if (v.is_number()) return v.get<double>();
            const auto s = v.is_string() ? v.get<std::string>() : "nan";
            return s == "inf" ? std::numeric_limits<double>::infinity()
                 : s == "-inf" ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
        };
        const std::string head = c.value("headline", "");
        const double value = c.at("measured").contains(head) ? number(c.at("measured").at(head)) : NAN;
        const double cap = c.at("caps").contains(head) ? number(c.at("caps").at(head)) : INFINITY;
        std::string name = c.at("name").get<std::string>();
        if (!prefix_key.empty() && c.contains(prefix_key)) name = c.at(prefix_key).get<std::string>() + "/" + name;
        out += name + "," + csv_number(value) + "," + csv_number(cap) + "," + (c.at("pass").get<bool>() ? "true" : "false") + "\n";
    }
    return out;
}

} // namespace detail

/// Writes report.json, summary.csv, plot CSVs and (if present) the solution
/// field to dir. Output bytes depend only on the run result.
inline void emit_report(const RunResult& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    detail::write_file(dir / "report.json", r.report.dump(2) + "\n");
    detail::write_file(dir / "summary.csv", detail::summary_csv(r.report.at("certificates")));
    if (!r.trace.energy.empty()) {
        std::string csv = "iteration,energy,gradient_sup\n";
        for (std::size_t i = 0; i < r.trace.energy.size(); ++i)
            csv += std::to_string(i) + "," + detail::csv_number(r.trace.energy[i]) + "," +
                   detail::csv_number(r.trace.gradient_sup[i]) + "\n";
        detail::write_file(dir / "plot_solver_trace.csv", csv);
    }
    for (std::size_t i = 0; i < r.certificates.size(); ++i) {
        const auto& c = r.certificates[i];
        for (const auto& [key, series] : c.series) {
            std::string csv = "k," + key + "\n";
            for (std::size_t k = 0; k < series.size(); ++k) csv += std::to_string(k) + "," + detail::csv_number(series[k]) + "\n";
            detail::write_file(dir / ("plot_" + std::to_string(i) + "_" + c.name + "_" + key + ".csv"), csv);
        }
    }
    if (r.solution) {
        std::ostringstream csv, bin;
        write_csv(*r.solution, csv);
        write_binary(*r.solution, bin);
        detail::write_file(dir / "solution.csv", csv.str());
        detail::write_file(dir / "solution.odgf", bin.str());
    }
}

/// Concatenates the certificates of several run directories.
inline nlohmann::json report_merge(const std::vector<std::string>& dirs) {
    nlohmann::json merged = {{"sources", nlohmann::json::array()}, {"certificates", nlohmann::json::array()}};
    bool all = true;
    for (const auto& d : dirs) {
        const auto path = std::filesystem::path(d) / "report.json";
        std::ifstream is(path, std::ios::binary);
        if (!is) throw IoError("cannot read " + path.string());
        nlohmann::json r;
        try {
            r = nlohmann::json::parse(is);
        } catch (const nlohmann::json::parse_error& e) {
            throw SchemaError({path.string() + ": invalid JSON (" + e.what() + ")"});
        }
        if (!r.is_object() || !r.contains("certificates") || !r.contains("scenario"))
            throw SchemaError({path.string() + ": not a scenario report"});
        merged["sources"].push_back({{"dir", d}, {"scenario", r.at("scenario")}, {"pass", r.value("pass", false)},
                                     {"exit_code", r.value("exit_code", -1)}});
        all = all && r.value("pass", false);
        for (auto c : r.at("certificates")) {
            c["scenario"] = r.at("scenario");
            merged["certificates"].push_back(c);
        }
    }
    merged["pass"] = all;
    return merged;
}

inline void emit_merged(const nlohmann::json& merged, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    detail::write_file(dir / "report.json", merged.dump(2) + "\n");
    detail::write_file(dir / "summary.csv", detail::summary_csv(merged.at("certificates"), "scenario"));
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace vdg
