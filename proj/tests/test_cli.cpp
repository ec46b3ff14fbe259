#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qcollapse/scenario.hpp"

using namespace qcollapse;
namespace fs = std::filesystem;
namespace qs = qcollapse::scenario;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("qcollapse_cli_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct Invocation {
    int code = -1;
    std::string out, err;
};

Invocation cli(const std::string& args, const fs::path& dir) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(QCOLLAPSE_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

fs::path config(const std::string& name) { return fs::path(QCOLLAPSE_CONFIGS) / name; }

// Small CCQM sawtooth for fast end-to-end runs.
const char* small_sawtooth = R"({
  "model": "ccqm",
  "particles": [{"label": "packet", "mass": 1.0, "cells": 512}],
  "wave_functions": [{"particles": [0], "init": {"kind": "gaussian", "center": 256, "sigma": 3.0}}],
  "f0": 0.03,
  "ccqm": {"v_c": 100, "F": 0.5},
  "schedule": {"dt": 1.0, "steps": 300, "record_every": 5},
  "ensemble": {"trajectories": 3, "master_seed": 5}
})";

std::string body(const std::string& csv) { return csv.substr(csv.find('\n') + 1); }

void write(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
}

}  // namespace

TEST(ParseConfig, ReadsShippedScenarios) {
    for (const char* name : {"sawtooth.json", "grw_two_peak.json", "measurement.json"}) {
        const auto cfg = qs::parse_config(read_file(config(name)));
        EXPECT_NO_THROW(qs::validate(cfg)) << name;
    }
    const auto saw = qs::parse_config(read_file(config("sawtooth.json")));
    EXPECT_EQ(saw.model, Model::ccqm);
    EXPECT_EQ(saw.tick.ccqm.v_c, 200u);
    EXPECT_EQ(saw.tick.ccqm.F, 0.5);
    EXPECT_EQ(saw.particles[0].cells[0], 4096u);
    EXPECT_EQ(saw.tick.ccqm.f0, saw.f0);
}

TEST(ParseConfig, SchemaErrorsNameThePath) {
    try {
        qs::parse_config(read_file(config("malformed.json")));
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find("particles[0].cells"), std::string::npos);
    }
    EXPECT_THROW(qs::parse_config("{not json"), SchemaError);
    EXPECT_THROW(qs::parse_config("[]"), SchemaError);
    try {
        qs::parse_config(R"({"model": "bohm"})");
        FAIL();
    } catch (const SchemaError& e) {
        EXPECT_NE(std::string(e.what()).find("unitary, grw, csl, ccqm"), std::string::npos);
    }
    std::string both = small_sawtooth;
    both.replace(both.find(R"("F": 0.5)"), 8, R"("F": 0.5, "reduction": 0.5)");
    EXPECT_THROW(qs::parse_config(both), SchemaError);
    std::string typed = small_sawtooth;
    typed.replace(typed.find(R"("steps": 300)"), 12, R"("steps": "many")");
    EXPECT_THROW(qs::parse_config(typed), SchemaError);
}

TEST(ParseConfig, ReductionAliasAndDefaults) {
    std::string alias = small_sawtooth;
    alias.replace(alias.find(R"("F": 0.5)"), 8, R"("reduction": 0.25)");
    const auto cfg = qs::parse_config(alias);
    EXPECT_DOUBLE_EQ(cfg.tick.ccqm.F, 0.75);
    EXPECT_FALSE(cfg.tick.ccqm.truncate_below_f0);
    EXPECT_FALSE(cfg.tick.ccqm.scale_vc_with_N);
    EXPECT_EQ(cfg.theta0, 0.0);
}

TEST(Validate, ConstraintsAreNamed) {
    auto expect_constraint = [](const std::string& text, const std::string& name) {
        try {
            qs::validate(qs::parse_config(text));
            FAIL() << name;
        } catch (const ConfigError& e) {
            EXPECT_EQ(e.constraint(), name);
        }
    };
    expect_constraint(read_file(config("unsafe_trigger.json")), "trigger safety");

    std::string budget = small_sawtooth;
    budget.replace(budget.find(R"("F": 0.5)"), 8, R"("F": 0.5, "memory_budget_cells": 100)");
    expect_constraint(budget, "memory budget");

    std::string dt = small_sawtooth;
    dt.replace(dt.find(R"("dt": 1.0)"), 9, R"("dt": 0.0)");
    expect_constraint(dt, "schedule.dt");

    std::string orphan = small_sawtooth;
    orphan.replace(orphan.find(R"("particles": [{"label")"), 22,
                   R"("particles": [{"label": "x", "mass": 1, "cells": 8}, {"label")");
    expect_constraint(orphan, "particle ownership");

    std::string bad_f = small_sawtooth;
    bad_f.replace(bad_f.find(R"("F": 0.5)"), 8, R"("F": 1.5)");
    expect_constraint(bad_f, "ccqm parameters");
}

TEST(Run, SameSeedGivesIdenticalArtifacts) {
    const auto cfg = qs::parse_config(small_sawtooth);
    const auto a = qs::run(cfg), b = qs::run(cfg);
    for (const char* name : {"events.csv", "volume.csv", "entropy.csv"}) EXPECT_EQ(a.files.at(name), b.files.at(name));
    EXPECT_EQ(a.files.at("manifest.json"), b.files.at("manifest.json"));
    auto other = cfg;
    other.master_seed = 6;
    EXPECT_NE(qs::run(other).files.at("events.csv"), a.files.at("events.csv"));
}

TEST(Run, OutputIndependentOfWorkerCount) {
    const auto cfg = qs::parse_config(small_sawtooth);
    const auto one = qs::run(cfg, 1), three = qs::run(cfg, 3);
    EXPECT_EQ(one.files, three.files);
}

TEST(Run, TrajectoryReproducibleInIsolation) {
    const auto cfg = qs::parse_config(small_sawtooth);
    const auto init = qs::validate(cfg);
    const auto full = qs::run(cfg).files.at("events.csv");
    const auto alone = qs::run_trajectory(cfg, init, 2).events;
    ASSERT_FALSE(alone.empty());
    EXPECT_NE(full.find(alone), std::string::npos);
}

TEST(Run, ManifestHashesEveryFile) {
    const auto rr = qs::run(qs::parse_config(small_sawtooth));
    const auto manifest = nlohmann::json::parse(rr.files.at("manifest.json"));
    EXPECT_EQ(manifest.at("master_seed"), 5);
    EXPECT_EQ(manifest.at("config_sha256"), qs::sha256_hex(small_sawtooth));
    for (const auto& [name, content] : rr.files) {
        if (name == "manifest.json") continue;
        EXPECT_EQ(manifest.at("files").at(name), qs::sha256_hex(content)) << name;
    }
    EXPECT_EQ(qs::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Run, SawtoothVolumesStayBelowCap) {
    const auto rr = qs::run(qs::parse_config(small_sawtooth));
    std::istringstream in(body(rr.files.at("volume.csv")));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const auto v = std::stoul(line.substr(line.rfind(',') + 1));
        EXPECT_LT(v, 100u);
        ++rows;
    }
    EXPECT_EQ(rows, 3u * 61u);
    const auto summary = nlohmann::json::parse(rr.files.at("summary.json"));
    EXPECT_GT(summary.at("events").get<int>(), 0);
    EXPECT_LT(summary.at("max_relative_volume").get<int>(), 100);
}

TEST(Run, EntropyColumnsAreConsistent) {
    const auto rr = qs::run(qs::parse_config(small_sawtooth));
    std::istringstream in(body(rr.files.at("entropy.csv")));
    std::string line;
    bool collapse_flag = false;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream s(line);
        for (std::string cell; std::getline(s, cell, ',');) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        ASSERT_EQ(f.size(), 9u);
        EXPECT_NEAR(std::stod(f[5]), std::log(std::stod(f[4])), 1e-12);
        EXPECT_EQ(f[5], f[6]);
        collapse_flag = collapse_flag || f[8] == "collapse";
    }
    EXPECT_TRUE(collapse_flag);
}

TEST(Cli, RunWritesArtifacts) {
    const auto dir = scratch("run");
    write(dir / "cfg.json", small_sawtooth);
    const auto r = cli("run " + (dir / "cfg.json").string() + " --out " + (dir / "out").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* name : {"events.csv", "volume.csv", "entropy.csv", "cost.json", "summary.json", "manifest.json"})
        EXPECT_TRUE(fs::exists(dir / "out" / name)) << name;
    const auto seeded = cli("run " + (dir / "cfg.json").string() + " --seed 5 --out " + (dir / "again").string(), dir);
    ASSERT_EQ(seeded.code, 0);
    EXPECT_EQ(read_file(dir / "out" / "events.csv"), read_file(dir / "again" / "events.csv"));
}

TEST(Cli, ExitCodesAndNoPartialOutput) {
    const auto dir = scratch("exit");
    auto r = cli("run " + config("malformed.json").string() + " --out " + (dir / "a").string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "schema");
    EXPECT_FALSE(fs::exists(dir / "a"));

    r = cli("run " + config("unsafe_trigger.json").string() + " --out " + (dir / "b").string(), dir);
    EXPECT_EQ(r.code, 3);
    EXPECT_EQ(nlohmann::json::parse(r.err).at("constraint"), "trigger safety");
    EXPECT_FALSE(fs::exists(dir / "b"));

    write(dir / "noise.json", R"({
      "model": "csl",
      "particles": [{"label": "p", "mass": 1.0, "cells": 16}],
      "wave_functions": [{"particles": [0], "init": {"kind": "uniform", "lo": 0, "hi": 15}}],
      "csl": {"gamma": 1e9, "alpha": 0.5},
      "schedule": {"dt": 1.0, "steps": 3}
    })");
    r = cli("run " + (dir / "noise.json").string() + " --out " + (dir / "c").string(), dir);
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(nlohmann::json::parse(r.err).at("message").get<std::string>().find("wave function 0"),
              std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "c"));

    r = cli("run " + (dir / "missing.json").string(), dir);
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, StatsVerdicts) {
    const auto dir = scratch("stats");
    {
        std::ofstream f(dir / "uniform.csv");
        f << "observed,expected\n";
        for (int i = 0; i < 10; ++i) f << 1000 + (i % 2 ? 12 : -12) << ",0.1\n";
    }
    auto r = cli("stats chi-square " + (dir / "uniform.csv").string(), dir);
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_TRUE(nlohmann::json::parse(r.out).at("pass").get<bool>());

    {
        // a sampler shifted by one cell against a peaked density
        std::ofstream f(dir / "shifted.csv");
        f << "observed,expected\n";
        const double p[] = {0.05, 0.1, 0.2, 0.3, 0.2, 0.1, 0.05, 0.0};
        for (int i = 0; i < 8; ++i) f << (i > 0 ? p[i - 1] * 1e4 : 0.0) << ',' << p[i] << '\n';
    }
    r = cli("stats chi-square " + (dir / "shifted.csv").string(), dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(nlohmann::json::parse(r.out).at("pass").get<bool>());

    {
        std::ofstream f(dir / "hits.csv");
        f << "success\n";
        for (int i = 0; i < 10000; ++i) f << (i < 6400 ? 1 : 0) << '\n';
    }
    r = cli("stats binomial " + (dir / "hits.csv").string() + " --p0 0.64", dir);
    EXPECT_EQ(r.code, 0);
    EXPECT_NEAR(nlohmann::json::parse(r.out).at("statistic").get<double>(), 0.0, 1e-12);

    {
        std::ofstream f(dir / "groups.csv");
        f << "group,value\n";
        for (int i = 0; i < 200; ++i) f << (i % 2 ? "a" : "b") << ',' << (i % 7) << '\n';
    }
    r = cli("stats two-sample " + (dir / "groups.csv").string(), dir);
    EXPECT_EQ(r.code, 0);

    r = cli("stats chi-square " + (dir / "hits.csv").string(), dir);
    EXPECT_EQ(r.code, 2);
    r = cli("stats binomial " + (dir / "hits.csv").string(), dir);
    EXPECT_EQ(r.code, 2);
}

TEST(Cli, StatsOnEmittedOutcomes) {
    const auto dir = scratch("outcomes");
    std::string text = read_file(config("grw_two_peak.json"));
    text.replace(text.find(R"("trajectories": 10000)"), 21, R"("trajectories": 400)");
    write(dir / "cfg.json", text);
    ASSERT_EQ(cli("run " + (dir / "cfg.json").string() + " --out " + (dir / "out").string(), dir).code, 0);
    const auto r = cli("stats binomial " + (dir / "out" / "outcomes.csv").string() + " --branch left --p0 0.64", dir);
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(nlohmann::json::parse(r.out).at("dof").get<double>(), 400.0);
}

TEST(Cli, ReportTransition) {
    const auto dir = scratch("transition");
    const auto r = cli("report-transition --M 10000 --e 30", dir);
    ASSERT_EQ(r.code, 0);
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j.at("vc_log10"), 300000);
    EXPECT_EQ(j.at("rows")[1].at("side_log10_cm"), 5);
    EXPECT_EQ(j.at("rows")[2].at("side_log10_km"), 10);
    EXPECT_NE(cli("report-transition --M 10000", dir).code, 0);
}

TEST(Stats, ChiSquareMergesSparseBins) {
    const std::vector<double> obs{0, 1, 30, 40, 29, 0}, p{0.001, 0.009, 0.3, 0.4, 0.29, 0.0};
    const auto v = stats::chi_square(obs, p);
    EXPECT_TRUE(v.pass);
    EXPECT_LE(v.dof, 3.0);
    EXPECT_THROW(stats::chi_square(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), DomainError);
}

TEST(Stats, BinomialAndMeans) {
    EXPECT_TRUE(stats::binomial(6400, 10000, 0.64).pass);
    EXPECT_FALSE(stats::binomial(6600, 10000, 0.64).pass);
    EXPECT_THROW(stats::binomial(5, 4, 0.5), DomainError);
    const std::vector<double> pos{0.9, 1.1, 1.0, 0.95, 1.05}, mixed{-1.0, 1.0, -1.0, 1.0};
    EXPECT_TRUE(stats::mean_positive(pos).pass);
    EXPECT_FALSE(stats::mean_positive(mixed).pass);
    EXPECT_FALSE(stats::two_sample(pos, std::vector<double>{2.0, 2.1, 1.9, 2.05, 1.95}).pass);
}
