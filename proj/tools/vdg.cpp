// Command-line driver: run scenarios, self-check operators, merge reports.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vdg/scenario.hpp"

namespace {

int run_command(const std::string& config, const std::string& out_flag, bool deterministic,
                std::optional<std::uint64_t> seed) {
    std::string text;
    try {
        text = vdg::read_text(config);
    } catch (const vdg::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return vdg::exit_code::io_error;
    }
    vdg::Scenario sc;
    try {
        sc = vdg::parse_scenario(text);
    } catch (const vdg::SchemaError& e) {
        for (const auto& d : e.diagnostics()) std::cerr << config << ": " << d << "\n";
        return vdg::exit_code::schema_error;
    }

    std::filesystem::path out;
    if (!out_flag.empty()) out = out_flag;
    else if (const char* env = std::getenv("VDG_OUT_DIR"); env && *env) out = env;
    else if (!sc.output.empty()) out = sc.output;
    else out = std::filesystem::path("out") / sc.name;

    vdg::RunResult r;
    try {
        r = vdg::run_scenario(sc, {seed, deterministic});
    } catch (const vdg::DomainError& e) {
        std::cerr << config << ": " << e.what() << "\n";
        return vdg::exit_code::schema_error;
    }
    try {
        vdg::emit_report(r, out);
    } catch (const vdg::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return vdg::exit_code::io_error;
    }
    if (r.exit_code == vdg::exit_code::stagnation) std::cerr << "solver stagnated: " << r.message << "\n";
    for (const auto& c : r.certificates) {
        const auto j = vdg::to_json(c);
        std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " " << c.headline << "=" << j["measured"].value(c.headline, nlohmann::json()).dump()
                  << "\n";
    }
    std::cout << "report: " << (out / "report.json").string() << "\n";
    return r.exit_code;
}

int verify_ops_command(std::size_t trials, std::uint64_t seed) {
    std::vector<vdg::CertificateReport> reps;
    for (double p : {1.5, 2.0, 3.0}) reps.push_back(vdg::verify_nfunc_inequalities(vdg::NFunction::power(p), trials, seed));
    reps.push_back(vdg::verify_nfunc_inequalities(vdg::NFunction::power_sum(2.0, 4.0), trials, seed));
    for (Eigen::Index N : {1, 2, 3, 5}) reps.push_back(vdg::verify_pointwise_inequalities(N, trials, seed));
    for (Eigen::Index n : {1, 2, 3}) reps.push_back(vdg::verify_jacobian_identities(n, 3, trials, seed));
    bool all = true;
    for (const auto& r : reps) {
        all = all && r.pass;
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " " << r.inputs_digest << "\n";
        if (!r.pass) std::cout << "  " << vdg::to_json(r).dump() << "\n";
    }
    return all ? vdg::exit_code::ok : vdg::exit_code::certificate_failure;
}

int merge_command(const std::vector<std::string>& dirs, const std::string& out) {
    try {
        const auto merged = vdg::report_merge(dirs);
        vdg::emit_merged(merged, out);
        std::cout << "merged " << dirs.size() << " reports into " << out << "\n";
        return merged.at("pass").get<bool>() ? vdg::exit_code::ok : vdg::exit_code::certificate_failure;
    } catch (const vdg::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return vdg::exit_code::io_error;
    } catch (const vdg::SchemaError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return vdg::exit_code::schema_error;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vectorial De Giorgi certificates"};
    app.require_subcommand(1);

    std::string config, out;
    bool deterministic = false;
    std::uint64_t seed = 0;
    auto* run = app.add_subcommand("run", "Solve a scenario and evaluate its certificates");
    run->add_option("config", config, "Scenario JSON")->required();
    run->add_option("--out", out, "Output directory");
    run->add_flag("--deterministic", deterministic, "Fixed-order reductions");
    auto* seed_opt = run->add_option("--seed", seed, "Override the scenario seed");

    std::size_t trials = 100000;
    std::uint64_t ops_seed = 1;
    auto* ops = app.add_subcommand("verify-ops", "Property checks of N-functions and truncation operators");
    ops->add_option("--trials", trials, "Samples per property")->check(CLI::PositiveNumber);
    ops->add_option("--seed", ops_seed, "Sampling seed");

    std::vector<std::string> dirs;
    std::string merge_out = "merged";
    auto* merge = app.add_subcommand("report-merge", "Combine run directories into one report");
    merge->add_option("dirs", dirs, "Run directories")->required();
    merge->add_option("--out", merge_out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : vdg::exit_code::schema_error;
    }

    if (*run) {
        std::optional<std::uint64_t> s;
        if (*seed_opt) s = seed;
        return run_command(config, out, deterministic, s);
    }
    if (*ops) return verify_ops_command(trials, ops_seed);
    return merge_command(dirs, merge_out);
}
