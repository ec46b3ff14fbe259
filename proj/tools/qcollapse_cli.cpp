// qcollapse command-line driver: run scenarios, post-process CSVs, and print
// the transition arithmetic table.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "qcollapse/scenario.hpp"
#include "qcollapse/stats.hpp"
#include "qcollapse/transition.hpp"

namespace {

using json = nlohmann::json;
namespace qs = qcollapse::scenario;

constexpr int exit_schema = 2;
constexpr int exit_constraint = 3;
constexpr int exit_numerical = 4;

int fail(int code, const std::string& kind, const std::string& message, const std::string& constraint = {}) {
    json err = {{"error", kind}, {"exit_code", code}, {"message", message}};
    if (!constraint.empty()) err["constraint"] = constraint;
    std::cerr << err.dump() << '\n';
    return code;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw qcollapse::SchemaError("cannot read " + path);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw qcollapse::SchemaError("CSV lacks column '" + name + "'");
    }
};

Csv read_csv(const std::string& path) {
    std::istringstream in(slurp(path));
    Csv csv;
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> out;
        std::string cell;
        std::istringstream s(l);
        while (std::getline(s, cell, ',')) out.push_back(cell);
        if (!l.empty() && l.back() == ',') out.emplace_back();
        return out;
    };
    if (!std::getline(in, line)) throw qcollapse::SchemaError("CSV is empty");
    csv.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = split(line);
        if (row.size() != csv.header.size()) throw qcollapse::SchemaError("CSV row width does not match header");
        csv.rows.push_back(std::move(row));
    }
    return csv;
}

double to_number(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw qcollapse::SchemaError("'" + s + "' is not a number");
    }
}

json verdict_json(const qcollapse::stats::Verdict& v) {
    return {{"test", v.kind},   {"statistic", v.statistic}, {"dof", v.dof},
            {"p_value", v.p_value}, {"alpha", v.alpha},      {"pass", v.pass}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Objective-collapse simulator and analysis toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::optional<std::uint64_t> seed;
    auto* run = app.add_subcommand("run", "Run a scenario config");
    run->add_option("config", config_path, "Scenario JSON")->required();
    run->add_option("--seed", seed, "Override ensemble.master_seed");
    run->add_option("--out", out_dir, "Output directory");

    std::string kind, csv_path, branch;
    double alpha = 0.01;
    std::optional<double> p0;
    auto* stats = app.add_subcommand("stats", "Statistical tests on emitted CSVs");
    stats->add_option("kind", kind, "chi-square | binomial | two-sample")
        ->required()
        ->check(CLI::IsMember({"chi-square", "binomial", "two-sample"}));
    stats->add_option("csv", csv_path, "Input CSV")->required();
    stats->add_option("--alpha", alpha, "Significance level");
    stats->add_option("--branch", branch, "Branch label (binomial on outcomes.csv)");
    stats->add_option("--p0", p0, "Null success probability (binomial)");

    std::int64_t M = 0, e = 0, cell_cm = -15;
    auto* transition = app.add_subcommand("report-transition", "Quantum-to-classical transition arithmetic");
    transition->add_option("--M", M, "Particles in the macroscopic system")->required();
    transition->add_option("--e", e, "log10 of cells per particle in its confinement volume")->required();
    transition->add_option("--cell-log10-cm", cell_cm, "log10 of the cell side in cm");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }

    if (*run) {
        qs::ScenarioConfig cfg;
        try {
            cfg = qs::parse_config(slurp(config_path));
            if (seed) cfg.master_seed = *seed;
            const auto result = qs::run(cfg, qs::worker_count());
            qs::write_outputs(result, out_dir);
        } catch (const qcollapse::SchemaError& err) {
            return fail(exit_schema, "schema", err.what());
        } catch (const qcollapse::ConfigError& err) {
            return fail(exit_constraint, "constraint", err.what(), err.constraint());
        } catch (const qcollapse::Error& err) {
            return fail(exit_numerical, "numerical", err.what());
        }
        std::cout << "wrote " << out_dir << '\n';
        return 0;
    }

    if (*stats) {
        try {
            const auto csv = read_csv(csv_path);
            qcollapse::stats::Verdict v;
            if (kind == "chi-square") {
                const auto o = csv.column("observed"), x = csv.column("expected");
                std::vector<double> obs, exp;
                for (const auto& r : csv.rows) {
                    obs.push_back(to_number(r[o]));
                    exp.push_back(to_number(r[x]));
                }
                v = qcollapse::stats::chi_square(obs, exp, alpha);
            } else if (kind == "binomial") {
                if (!p0) throw qcollapse::SchemaError("binomial test needs --p0");
                double k = 0.0, n = 0.0;
                if (!branch.empty()) {
                    const auto b = csv.column("branch"), s = csv.column("selected");
                    for (const auto& r : csv.rows)
                        if (r[b] == branch) {
                            n += 1.0;
                            k += to_number(r[s]);
                        }
                } else {
                    const auto s = csv.column("success");
                    for (const auto& r : csv.rows) {
                        n += 1.0;
                        k += to_number(r[s]);
                    }
                }
                v = qcollapse::stats::binomial(k, n, *p0, alpha);
            } else {
                const auto g = csv.column("group"), x = csv.column("value");
                std::map<std::string, std::vector<double>> groups;
                for (const auto& r : csv.rows) groups[r[g]].push_back(to_number(r[x]));
                if (groups.size() != 2) throw qcollapse::SchemaError("two-sample test needs exactly two groups");
                v = qcollapse::stats::two_sample(groups.begin()->second, std::next(groups.begin())->second, alpha);
            }
            std::cout << verdict_json(v).dump(2) << '\n';
            return v.pass ? 0 : 1;
        } catch (const qcollapse::SchemaError& err) {
            return fail(exit_schema, "schema", err.what());
        } catch (const qcollapse::Error& err) {
            return fail(exit_schema, "schema", err.what());
        }
    }

    try {
        const auto r = qcollapse::report_transition(M, e, cell_cm);
        json rows = json::array();
        for (const auto& row : r.rows)
            rows.push_back({{"fraction", "1/" + std::to_string(row.fraction)},
                            {"particles", row.particles},
                            {"spread_log10_cells", row.spread_log10_cells},
                            {"side_exact", row.side_exact},
                            {"side_log10_cells", row.side_log10_cells},
                            {"side_log10_cm", row.side_log10_cm},
                            {"side_log10_km", row.side_log10_km}});
        json out = {{"M", r.M}, {"e", r.e}, {"vc_log10", r.vc_log10}, {"cell_log10_cm", r.cell_log10_cm},
                    {"rows", rows}};
        std::cout << out.dump(2) << '\n';
    } catch (const qcollapse::Error& err) {
        return fail(exit_constraint, "constraint", err.what());
    }
    return 0;
}
