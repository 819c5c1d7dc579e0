#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace vdg {

/// Measured quantities of one certificate together with their upper caps.
///
/// Every cap is an upper bound on the measured value with the same key; a
/// certificate passes iff every capped value is finite and within its cap.
struct CertificateReport {
    std::string name;
    std::string inputs_digest;
    std::map<std::string, double> measured;
    std::map<std::string, double> caps;
    std::map<std::string, std::vector<double>> series;
    nlohmann::json witness = nlohmann::json::object();
    std::string status = "pending";
    bool pass = false;
    bool degenerate = false;
    /// Headline value and cap used for summary rows.
    std::string headline;

    void set(const std::string& key, double value) { measured[key] = value; }
    void cap(const std::string& key, double value, double limit) {
        measured[key] = value;
        caps[key] = limit;
    }

    double value() const {
        auto it = measured.find(headline);
        return it == measured.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
    }
    double headline_cap() const {
        auto it = caps.find(headline);
        return it == caps.end() ? std::numeric_limits<double>::infinity() : it->second;
    }

    /// Recompute pass from caps. Degenerate 0/0 certificates pass unconditionally.
    CertificateReport& finalize() {
        if (degenerate) {
            pass = true;
            status = "degenerate pass";
            return *this;
        }
        pass = true;
        for (const auto& [key, limit] : caps) {
            auto it = measured.find(key);
            if (it == measured.end() || !std::isfinite(it->second) || it->second > limit) {
                pass = false;
                witness["violated"].push_back(key);
            }
        }
        status = pass ? "pass" : "fail";
        return *this;
    }
};

namespace detail {
inline nlohmann::json finite_or_string(double x) {
    if (std::isfinite(x)) return x;
    if (std::isnan(x)) return "nan";
    return x > 0 ? "inf" : "-inf";
}
} // namespace detail

inline nlohmann::json to_json(const CertificateReport& r) {
    nlohmann::json j;
    j["name"] = r.name;
    j["inputs_digest"] = r.inputs_digest;
    j["pass"] = r.pass;
    j["status"] = r.status;
    j["degenerate"] = r.degenerate;
    j["headline"] = r.headline;
    j["measured"] = nlohmann::json::object();
    for (const auto& [k, v] : r.measured) j["measured"][k] = detail::finite_or_string(v);
    j["caps"] = nlohmann::json::object();
    for (const auto& [k, v] : r.caps) j["caps"][k] = detail::finite_or_string(v);
    j["witness"] = r.witness;
    return j;
}

inline CertificateReport report_from_json(const nlohmann::json& j) {
    auto number = [](const nlohmann::json& v) {
        if (v.is_number()) return v.get<double>();
        const auto s = v.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        return std::numeric_limits<double>::quiet_NaN();
    };
    CertificateReport r;
    r.name = j.at("name").get<std::string>();
    r.inputs_digest = j.value("inputs_digest", "");
    r.pass = j.at("pass").get<bool>();
    r.status = j.value("status", r.pass ? "pass" : "fail");
    r.degenerate = j.value("degenerate", false);
    r.headline = j.value("headline", "");
    for (const auto& [k, v] : j.at("measured").items()) r.measured[k] = number(v);
    for (const auto& [k, v] : j.at("caps").items()) r.caps[k] = number(v);
    r.witness = j.value("witness", nlohmann::json::object());
    return r;
}

/// 64-bit FNV-1a, hex encoded. Used for input digests.
inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xF];
    return out;
}

inline std::string digest(const nlohmann::json& inputs) { return fnv1a_hex(inputs.dump()); }

} // namespace vdg
