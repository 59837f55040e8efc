#pragma once

// File formats and persistence: decision logs (CSV and JSONL with a fixed
// column order), schema and posterior serialization, checksums, atomic
// writes, and the per-directory run manifest.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "jitai/domain.hpp"
#include "jitai/evaluation.hpp"
#include "jitai/learner.hpp"
#include "jitai/policy.hpp"
#include "jitai/rng.hpp"

namespace jitai {

inline constexpr std::string_view kVersion = "0.1.0";

namespace io_detail {

// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("format_double failed");
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw std::runtime_error("bad numeric field '" + std::string(s) + "'");
    }
    return v;
}

inline void check_csv_token(const std::string& s) {
    if (s.find_first_of(",\"\n\r") != std::string::npos) {
        throw std::invalid_argument("value '" + s + "' cannot appear in a CSV field");
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace io_detail

// --- decision logs --------------------------------------------------------

inline std::vector<std::string> decision_log_header(const CovariateSchema& schema) {
    std::vector<std::string> cols = {"participant_id", "decision_index", "days_in_study"};
    for (const auto& v : schema.variables()) {
        io_detail::check_csv_token(v.name);
        cols.push_back(v.name);
    }
    for (const char* c : {"s1", "s2", "policy_prob", "action", "reward", "true_prob_send",
                          "true_prob_nosend"}) {
        cols.emplace_back(c);
    }
    return cols;
}

inline void write_decision_log_csv(std::ostream& os, std::span<const DecisionRecord> records,
                                   const CovariateSchema& schema) {
    const auto header = decision_log_header(schema);
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& r : records) {
        if (r.true_prob_send.has_value() != r.true_prob_nosend.has_value()) {
            throw std::invalid_argument("decision log: true probabilities must come in pairs");
        }
        const auto p = period_indicators(r.days_in_study);
        os << r.participant_id << "," << r.decision_index << "," << r.days_in_study;
        for (std::size_t v = 0; v < schema.size(); ++v) {
            const auto& level = schema.variable(v).levels.at(r.context.levels.at(v));
            io_detail::check_csv_token(level);
            os << "," << level;
        }
        os << "," << (p.s1 ? 1 : 0) << "," << (p.s2 ? 1 : 0) << ","
           << io_detail::format_double(r.policy_prob) << "," << r.action.send << ","
           << r.reward.opened << ","
           << (r.true_prob_send ? io_detail::format_double(*r.true_prob_send) : "") << ","
           << (r.true_prob_nosend ? io_detail::format_double(*r.true_prob_nosend) : "") << "\n";
    }
}

inline std::vector<DecisionRecord> read_decision_log_csv(std::istream& is,
                                                         const CovariateSchema& schema) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("decision log: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto expected = decision_log_header(schema);
    const auto header = io_detail::split_csv_line(line);
    if (header != expected) throw std::runtime_error("decision log: header does not match schema");

    std::vector<DecisionRecord> out;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = io_detail::split_csv_line(line);
        if (f.size() != expected.size()) {
            throw std::runtime_error("decision log: bad field count at row " +
                                     std::to_string(out.size() + 1));
        }
        DecisionRecord r;
        std::size_t c = 0;
        r.participant_id = std::stoll(f[c++]);
        r.decision_index = std::stoll(f[c++]);
        r.days_in_study = std::stoi(f[c++]);
        for (std::size_t v = 0; v < schema.size(); ++v) {
            r.context.levels.push_back(static_cast<std::uint32_t>(schema.level_index(v, f[c++])));
        }
        c += 2;  // s1, s2 are derived
        r.policy_prob = io_detail::parse_double(f[c++]);
        r.action.send = std::stoi(f[c++]);
        r.reward.opened = std::stoi(f[c++]);
        const auto& ts = f[c++];
        const auto& tn = f[c++];
        if (ts.empty() != tn.empty()) {
            throw std::runtime_error("decision log: true probabilities must come in pairs");
        }
        if (!ts.empty()) {
            r.true_prob_send = io_detail::parse_double(ts);
            r.true_prob_nosend = io_detail::parse_double(tn);
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline nlohmann::ordered_json decision_record_to_json(const DecisionRecord& r,
                                                      const CovariateSchema& schema) {
    const auto p = period_indicators(r.days_in_study);
    nlohmann::ordered_json j;
    j["participant_id"] = r.participant_id;
    j["decision_index"] = r.decision_index;
    j["days_in_study"] = r.days_in_study;
    for (std::size_t v = 0; v < schema.size(); ++v) {
        j[schema.variable(v).name] = schema.variable(v).levels.at(r.context.levels.at(v));
    }
    j["s1"] = p.s1 ? 1 : 0;
    j["s2"] = p.s2 ? 1 : 0;
    j["policy_prob"] = r.policy_prob;
    j["action"] = r.action.send;
    j["reward"] = r.reward.opened;
    if (r.true_prob_send.has_value() != r.true_prob_nosend.has_value()) {
        throw std::invalid_argument("decision log: true probabilities must come in pairs");
    }
    if (r.true_prob_send) {
        j["true_prob_send"] = *r.true_prob_send;
        j["true_prob_nosend"] = *r.true_prob_nosend;
    } else {
        j["true_prob_send"] = nullptr;
        j["true_prob_nosend"] = nullptr;
    }
    return j;
}

inline DecisionRecord decision_record_from_json(const nlohmann::json& j,
                                                const CovariateSchema& schema) {
    DecisionRecord r;
    r.participant_id = j.at("participant_id").get<std::int64_t>();
    r.decision_index = j.at("decision_index").get<std::int64_t>();
    r.days_in_study = j.at("days_in_study").get<int>();
    for (std::size_t v = 0; v < schema.size(); ++v) {
        const auto level = j.at(schema.variable(v).name).get<std::string>();
        r.context.levels.push_back(static_cast<std::uint32_t>(schema.level_index(v, level)));
    }
    r.policy_prob = j.at("policy_prob").get<double>();
    r.action.send = j.at("action").get<int>();
    r.reward.opened = j.at("reward").get<int>();
    if (!j.at("true_prob_send").is_null()) {
        r.true_prob_send = j.at("true_prob_send").get<double>();
        r.true_prob_nosend = j.at("true_prob_nosend").get<double>();
    }
    return r;
}

inline void write_decision_log_jsonl(std::ostream& os, std::span<const DecisionRecord> records,
                                     const CovariateSchema& schema) {
    for (const auto& r : records) os << decision_record_to_json(r, schema).dump() << "\n";
}

inline std::vector<DecisionRecord> read_decision_log_jsonl(std::istream& is,
                                                           const CovariateSchema& schema) {
    std::vector<DecisionRecord> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(decision_record_from_json(nlohmann::json::parse(line), schema));
    }
    return out;
}

// --- schema JSON ------------------------------------------------------------

inline nlohmann::ordered_json schema_to_json(const CovariateSchema& schema) {
    nlohmann::ordered_json doc;
    doc["variables"] = nlohmann::ordered_json::array();
    for (const auto& v : schema.variables()) {
        nlohmann::ordered_json jv;
        jv["name"] = v.name;
        jv["levels"] = v.levels;
        jv["reference"] = v.levels.at(v.reference);
        doc["variables"].push_back(std::move(jv));
    }
    doc["baseline_variables"] = nlohmann::ordered_json::array();
    for (const auto& b : schema.baseline_variables()) {
        doc["baseline_variables"].push_back(
            {{"name", b.name},
             {"kind", b.kind == BaselineKind::NumericAge ? "numeric-age" : "categorical-gender"}});
    }
    return doc;
}

inline CovariateSchema schema_from_json(const nlohmann::json& doc) {
    std::vector<ContextVariable> vars;
    for (const auto& jv : doc.at("variables")) {
        ContextVariable v;
        v.name = jv.at("name").get<std::string>();
        v.levels = jv.at("levels").get<std::vector<std::string>>();
        const auto ref = jv.at("reference").get<std::string>();
        v.reference = v.levels.size();
        for (std::size_t i = 0; i < v.levels.size(); ++i) {
            if (v.levels[i] == ref) v.reference = i;
        }
        if (v.reference == v.levels.size()) {
            throw std::invalid_argument("schema json: reference level '" + ref +
                                        "' not in level list of '" + v.name + "'");
        }
        vars.push_back(std::move(v));
    }
    std::vector<BaselineVariable> baseline;
    if (doc.contains("baseline_variables")) {
        for (const auto& jb : doc.at("baseline_variables")) {
            const auto kind = jb.at("kind").get<std::string>();
            if (kind != "numeric-age" && kind != "categorical-gender") {
                throw std::invalid_argument("schema json: bad baseline kind '" + kind + "'");
            }
            baseline.push_back({jb.at("name").get<std::string>(),
                                kind == "numeric-age" ? BaselineKind::NumericAge
                                                      : BaselineKind::CategoricalGender});
        }
    }
    return CovariateSchema::make(std::move(vars), std::move(baseline));
}

// --- posterior artifacts ------------------------------------------------------

inline void write_posterior_csv(std::ostream& os, const PosteriorDraws& draws) {
    for (std::size_t j = 0; j < draws.param_names.size(); ++j) {
        io_detail::check_csv_token(draws.param_names[j]);
        os << (j ? "," : "") << draws.param_names[j];
    }
    os << "\n";
    for (Eigen::Index i = 0; i < draws.draws.rows(); ++i) {
        for (Eigen::Index j = 0; j < draws.draws.cols(); ++j) {
            os << (j ? "," : "") << io_detail::format_double(draws.draws(i, j));
        }
        os << "\n";
    }
}

inline nlohmann::ordered_json diagnostics_to_json(const PosteriorDraws& draws,
                                                  const FitHealth& health) {
    nlohmann::ordered_json doc;
    doc["status"] = fit_status_name(health.status);
    doc["offending"] = health.offending;
    doc["chains"] = draws.chains;
    doc["sampled_iterations"] = draws.sampled_iterations;
    doc["divergences"] = draws.divergences;
    doc["wall_seconds"] = draws.wall_seconds;
    nlohmann::ordered_json rhat, ess;
    for (std::size_t j = 0; j < draws.param_names.size(); ++j) {
        rhat[draws.param_names[j]] = draws.rhat(static_cast<Eigen::Index>(j));
        ess[draws.param_names[j]] = draws.ess(static_cast<Eigen::Index>(j));
    }
    doc["split_rhat"] = std::move(rhat);
    doc["ess"] = std::move(ess);
    return doc;
}

// --- policy table CSV -----------------------------------------------------------

inline void write_policy_table_csv(std::ostream& os, const PolicyTable& table) {
    for (const auto& v : table.schema.variables()) os << v.name << ",";
    os << "s1,s2,send_prob,provenance\n";
    for (const auto& row : table.rows) {
        for (std::size_t v = 0; v < table.schema.size(); ++v) {
            os << table.schema.variable(v).levels.at(row.context.levels[v]) << ",";
        }
        os << (row.period.s1 ? 1 : 0) << "," << (row.period.s2 ? 1 : 0) << ","
           << io_detail::format_double(row.send_prob) << "," << provenance_name(row.provenance)
           << "\n";
    }
}

// --- failure report JSON --------------------------------------------------------

inline nlohmann::ordered_json failure_report_to_json(const FailureReport& report) {
    nlohmann::ordered_json doc;
    doc["flag_count"] = report.flag_count();
    doc["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : report.entries) {
        nlohmann::ordered_json je;
        je["participant_id"] = e.participant_id;
        je["scheduled_day"] = e.scheduled_day;
        je["executed"] = e.executed;
        je["status"] = fit_status_name(e.status);
        je["offending"] = e.offending;
        char cs[32];
        std::snprintf(cs, sizeof(cs), "%016llx",
                      static_cast<unsigned long long>(e.posterior_checksum));
        je["posterior_checksum"] = cs;
        je["flagged"] = e.flagged;
        je["flag_reason"] = e.flag_reason;
        doc["entries"].push_back(std::move(je));
    }
    return doc;
}

// --- files, checksums, manifest ---------------------------------------------------

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
        os << content;
        if (!os) throw std::runtime_error("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline std::string file_checksum_hex(const std::filesystem::path& path) {
    const auto content = read_file(path);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a_bytes(content.data(), content.size())));
    return buf;
}

struct RunManifest {
    std::string command;
    nlohmann::ordered_json resolved_config;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> input_checksums;   // (path, fnv hex)
    std::vector<std::pair<std::string, std::string>> output_checksums;  // (path, fnv hex)
    std::vector<std::string> warnings;
    double wall_seconds = 0.0;
};

// One manifest per output directory; repeated commands append entries.
inline void append_manifest(const std::filesystem::path& dir, const RunManifest& m) {
    const auto path = dir / "manifest.json";
    nlohmann::ordered_json doc;
    doc["version"] = std::string(kVersion);
    doc["entries"] = nlohmann::ordered_json::array();
    if (std::filesystem::exists(path)) {
        doc = nlohmann::ordered_json::parse(read_file(path));
    }
    nlohmann::ordered_json entry;
    entry["command"] = m.command;
    entry["seed"] = m.seed;
    entry["config"] = m.resolved_config;
    entry["inputs"] = nlohmann::ordered_json::object();
    for (const auto& [file, sum] : m.input_checksums) entry["inputs"][file] = sum;
    entry["outputs"] = nlohmann::ordered_json::object();
    for (const auto& [file, sum] : m.output_checksums) entry["outputs"][file] = sum;
    entry["warnings"] = m.warnings;
    entry["wall_seconds"] = m.wall_seconds;
    doc["entries"].push_back(std::move(entry));
    write_file_atomic(path, doc.dump(2) + "\n");
}

}  // namespace jitai
