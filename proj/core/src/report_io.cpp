#include "horizon/experiment.hpp"

#include <nlohmann/json.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace horizon {

using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json report_json(const ResidualReport& r) {
    json j;
    j["name"] = r.name;
    j["metric"] = r.metric;
    j["tolerance"] = r.tolerance;
    j["pass"] = r.pass;
    j["max_abs"] = r.max_abs;
    j["max_mean_abs"] = r.max_mean_abs;
    if (!std::isnan(r.slope)) j["slope"] = r.slope;
    if (!r.refinement_dt.empty()) {
        j["refinement_dt"] = r.refinement_dt;
        j["refinement_metric"] = r.refinement_metric;
    }
    j["worst_path"] = r.worst_path;
    j["worst_node"] = r.worst_node;
    if (!r.details.empty()) j["details"] = r.details;
    json cps = json::array();
    for (const auto& c : r.checkpoints) {
        json e;
        e["node"] = c.node;
        e["time"] = c.time;
        e["mean"] = c.mean;
        e["se"] = c.se;
        e["max_abs"] = c.max_abs;
        cps.push_back(e);
    }
    j["checkpoints"] = cps;
    return j;
}

ResidualReport report_from(const json& j) {
    ResidualReport r;
    r.name = j.value("name", "");
    r.metric = j.value("metric", 0.0);
    r.tolerance = j.value("tolerance", 0.0);
    r.pass = j.value("pass", false);
    r.max_abs = j.value("max_abs", 0.0);
    r.max_mean_abs = j.value("max_mean_abs", 0.0);
    if (j.contains("slope")) r.slope = j["slope"].get<double>();
    if (j.contains("refinement_dt")) {
        r.refinement_dt = j["refinement_dt"].get<std::vector<double>>();
        r.refinement_metric = j["refinement_metric"].get<std::vector<double>>();
    }
    r.worst_path = j.value("worst_path", std::size_t(0));
    r.worst_node = j.value("worst_node", std::size_t(0));
    r.details = j.value("details", "");
    if (j.contains("checkpoints"))
        for (const auto& e : j["checkpoints"]) {
            CheckpointStat c;
            c.node = e.value("node", std::size_t(0));
            c.time = e.value("time", 0.0);
            c.mean = e.value("mean", 0.0);
            c.se = e.value("se", 0.0);
            c.max_abs = e.value("max_abs", 0.0);
            r.checkpoints.push_back(c);
        }
    return r;
}

}  // namespace

std::string report_to_json(const std::vector<ResidualReport>& reports,
                           const ExperimentConfig& config) {
    json j;
    j["schema"] = "horizon-report-v1";
    j["config_hash"] = config.config_hash();
    j["seed"] = config.seed;
    j["steps"] = config.steps;
    j["paths"] = config.paths;
    j["backend"] = config.backend;
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(report_json(r));
    j["checks"] = arr;
    bool all = true;
    for (const auto& r : reports) all = all && r.pass;
    j["pass"] = all;
    return j.dump(2);
}

std::vector<ResidualReport> reports_from_json(const std::string& text) {
    json j = json::parse(text);
    std::vector<ResidualReport> out;
    for (const auto& e : j.at("checks")) out.push_back(report_from(e));
    return out;
}

std::string report_table(const std::vector<ResidualReport>& reports) {
    std::ostringstream os;
    os << "check                                metric        tolerance     verdict\n";
    os << "-----------------------------------  ------------  ------------  -------\n";
    for (const auto& r : reports) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-35s  %-12.4g  %-12.4g  %s\n", r.name.c_str(),
                      r.metric, r.tolerance, r.pass ? "PASS" : "FAIL");
        os << line;
        if (!std::isnan(r.slope)) {
            std::snprintf(line, sizeof(line), "%-35s  slope %.3f over %zu levels\n", "",
                          r.slope, r.refinement_dt.size());
            os << line;
        }
        if (!r.details.empty()) os << "    " << r.details << "\n";
    }
    return os.str();
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path);
    for (std::size_t i = 0; i < header.size(); ++i) {
        const std::string& h = header[i];
        const bool quote = h.find_first_of(",\"\r\n") != std::string::npos;
        if (quote) {
            out << '"';
            for (char c : h) {
                if (c == '"') out << '"';
                out << c;
            }
            out << '"';
        } else {
            out << h;
        }
        out << (i + 1 < header.size() ? "," : "\r\n");
    }
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i)
            out << fmt(row[i]) << (i + 1 < row.size() ? "," : "\r\n");
    }
}

}  // namespace horizon
