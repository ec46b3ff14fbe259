#pragma once

// Declarative scenarios: JSON config -> validated ScenarioConfig -> ensemble
// of registry runs -> CSV / JSON artifacts.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "ccqm.hpp"
#include "entropy.hpp"
#include "errors.hpp"
#include "feynman.hpp"
#include "registry.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace qcollapse::scenario {

using json = nlohmann::json;

inline constexpr const char* version = "0.1.0";

struct PacketTerm {
    cplx amplitude{1.0, 0.0};
    std::vector<double> center, momentum, sigma;
};

struct InitialState {
    enum class Kind { gaussian, superposition, uniform } kind = Kind::gaussian;
    std::vector<PacketTerm> terms;
    std::vector<double> lo, hi;
};

struct WaveFunctionConfig {
    std::vector<std::size_t> particles;
    InitialState init;
};

struct ParticleConfig {
    ParticleSpec spec;
    std::vector<std::size_t> cells;
    std::vector<double> cell_size;
    std::vector<double> origin;
};

/// Region test on one particle's marginal; used to classify outcomes.
struct BranchConfig {
    std::string label;
    std::size_t particle = 0;
    std::vector<double> lo, hi;
    std::optional<double> expected;
};

struct ScenarioConfig {
    Model model = Model::unitary;
    Units units;
    std::size_t dims = 1;
    Boundary boundary = Boundary::periodic;
    std::vector<ParticleConfig> particles;
    std::vector<WaveFunctionConfig> wave_functions;
    std::vector<PotentialSpec> potentials;
    TickParams tick;
    double f0 = 0.0;
    double theta0 = 0.0;
    double dt = 1.0;
    std::size_t steps = 0;
    std::size_t record_every = 1;
    std::size_t trajectories = 1;
    std::uint64_t master_seed = 1;
    std::vector<BranchConfig> branches;
    bool entropy = true;
    bool shadow = false;
    bool identical_correction = false;
    double boltzmann = 1.0;
    /// Raw document text, hashed into the manifest.
    std::string source;
};

namespace detail {

inline const json& require(const json& j, const char* key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) throw SchemaError("missing key '" + path + key + "'");
    return j.at(key);
}

inline double number(const json& j, const std::string& path) {
    if (!j.is_number()) throw SchemaError("'" + path + "' must be a number");
    return j.get<double>();
}

inline double number_or(const json& j, const char* key, double fallback, const std::string& path) {
    return j.contains(key) ? number(j.at(key), path + key) : fallback;
}

inline std::uint64_t integer(const json& j, const std::string& path) {
    if (!j.is_number_integer() || (j.is_number_integer() && j.get<std::int64_t>() < 0))
        throw SchemaError("'" + path + "' must be a nonnegative integer");
    return j.get<std::uint64_t>();
}

inline std::uint64_t integer_or(const json& j, const char* key, std::uint64_t fallback, const std::string& path) {
    return j.contains(key) ? integer(j.at(key), path + key) : fallback;
}

inline bool boolean_or(const json& j, const char* key, bool fallback, const std::string& path) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) throw SchemaError("'" + path + key + "' must be a boolean");
    return j.at(key).get<bool>();
}

inline std::string string(const json& j, const std::string& path) {
    if (!j.is_string()) throw SchemaError("'" + path + "' must be a string");
    return j.get<std::string>();
}

/// A scalar broadcast to `n` entries, or a list of exactly `n` numbers.
inline std::vector<double> numbers(const json& j, std::size_t n, const std::string& path) {
    if (j.is_number()) return std::vector<double>(n, j.get<double>());
    if (!j.is_array() || j.size() != n)
        throw SchemaError("'" + path + "' must be a number or a list of " + std::to_string(n) + " numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline std::vector<std::size_t> indices(const json& j, const std::string& path) {
    if (!j.is_array()) throw SchemaError("'" + path + "' must be a list of indices");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(integer(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline cplx amplitude(const json& j, const std::string& path) {
    if (j.is_number()) return {j.get<double>(), 0.0};
    const auto v = numbers(j, 2, path);
    return {v[0], v[1]};
}

template <class E>
E enumeration(const json& j, const std::string& path, std::initializer_list<std::pair<const char*, E>> options) {
    const auto s = string(j, path);
    for (const auto& [name, value] : options)
        if (s == name) return value;
    std::string allowed;
    for (const auto& [name, value] : options) allowed += std::string(allowed.empty() ? "" : ", ") + name;
    throw SchemaError("'" + path + "' must be one of: " + allowed);
}

inline PacketTerm packet_term(const json& j, std::size_t axes, const std::string& path) {
    PacketTerm t;
    if (j.contains("amplitude")) t.amplitude = amplitude(j.at("amplitude"), path + "amplitude");
    t.center = numbers(require(j, "center", path), axes, path + "center");
    t.momentum = j.contains("momentum") ? numbers(j.at("momentum"), axes, path + "momentum")
                                        : std::vector<double>(axes, 0.0);
    t.sigma = numbers(require(j, "sigma", path), axes, path + "sigma");
    return t;
}

}  // namespace detail

/// Parses and validates a config document. Structural problems raise
/// SchemaError; value-range and consistency problems raise ConfigError.
inline ScenarioConfig parse_config(const std::string& text) {
    using namespace detail;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw SchemaError("config must be a JSON object");

    ScenarioConfig cfg;
    cfg.source = text;
    cfg.model = enumeration<Model>(require(doc, "model", ""), "model",
                                   {{"unitary", Model::unitary}, {"grw", Model::grw}, {"csl", Model::csl},
                                    {"ccqm", Model::ccqm}});
    cfg.tick.model = cfg.model;
    if (doc.contains("units")) {
        const auto& u = doc.at("units");
        cfg.units.hbar = number_or(u, "hbar", 1.0, "units.");
        cfg.units.boltzmann = number_or(u, "boltzmann", 1.0, "units.");
        cfg.units.reference_mass = number_or(u, "reference_mass", 1.0, "units.");
    }
    cfg.tick.units = cfg.units;
    cfg.dims = integer_or(doc, "dims_per_particle", 1, "");
    if (doc.contains("boundary"))
        cfg.boundary = enumeration<Boundary>(doc.at("boundary"), "boundary",
                                             {{"periodic", Boundary::periodic}, {"box", Boundary::box}});

    const auto& parts = require(doc, "particles", "");
    if (!parts.is_array() || parts.empty()) throw SchemaError("'particles' must be a nonempty list");
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const std::string path = "particles[" + std::to_string(i) + "].";
        const auto& p = parts[i];
        ParticleConfig pc;
        pc.spec.mass = number(require(p, "mass", path), path + "mass");
        pc.spec.label = p.contains("label") ? string(p.at("label"), path + "label") : "p" + std::to_string(i);
        if (p.contains("identity_class") && !p.at("identity_class").is_null())
            pc.spec.identity_class = string(p.at("identity_class"), path + "identity_class");
        const auto cells = numbers(require(p, "cells", path), cfg.dims, path + "cells");
        for (double c : cells) {
            if (c != std::floor(c)) throw SchemaError("'" + path + "cells' must be integers");
            pc.cells.push_back(static_cast<std::size_t>(c));
        }
        if (p.contains("cell_size")) {
            pc.cell_size = numbers(p.at("cell_size"), cfg.dims, path + "cell_size");
        } else if (p.contains("mean_momentum")) {
            const double mom[] = {number(p.at("mean_momentum"), path + "mean_momentum")};
            const double beta = number_or(p, "beta", 1.0, path);
            try {
                pc.cell_size.assign(cfg.dims, cell_sizes_from_debroglie(mom, beta, cfg.units)[0]);
            } catch (const DomainError& e) {
                throw ConfigError("de Broglie cell size", e.what());
            }
        } else {
            pc.cell_size.assign(cfg.dims, 1.0);
        }
        pc.origin = p.contains("origin") ? numbers(p.at("origin"), cfg.dims, path + "origin")
                                         : std::vector<double>(cfg.dims, 0.0);
        cfg.particles.push_back(std::move(pc));
    }

    const auto& wfs = require(doc, "wave_functions", "");
    if (!wfs.is_array() || wfs.empty()) throw SchemaError("'wave_functions' must be a nonempty list");
    for (std::size_t i = 0; i < wfs.size(); ++i) {
        const std::string path = "wave_functions[" + std::to_string(i) + "].";
        WaveFunctionConfig wc;
        wc.particles = indices(require(wfs[i], "particles", path), path + "particles");
        for (auto p : wc.particles)
            if (p >= cfg.particles.size()) throw SchemaError("'" + path + "particles' refers to an unknown particle");
        const std::size_t axes = wc.particles.size() * cfg.dims;
        const auto& init = require(wfs[i], "init", path);
        const std::string ipath = path + "init.";
        wc.init.kind = enumeration<InitialState::Kind>(require(init, "kind", ipath), ipath + "kind",
                                                       {{"gaussian", InitialState::Kind::gaussian},
                                                        {"superposition", InitialState::Kind::superposition},
                                                        {"uniform", InitialState::Kind::uniform}});
        if (wc.init.kind == InitialState::Kind::gaussian) {
            wc.init.terms.push_back(packet_term(init, axes, ipath));
        } else if (wc.init.kind == InitialState::Kind::superposition) {
            const auto& terms = require(init, "terms", ipath);
            if (!terms.is_array() || terms.empty()) throw SchemaError("'" + ipath + "terms' must be a nonempty list");
            for (std::size_t t = 0; t < terms.size(); ++t)
                wc.init.terms.push_back(packet_term(terms[t], axes, ipath + "terms[" + std::to_string(t) + "]."));
        } else {
            wc.init.lo = numbers(require(init, "lo", ipath), axes, ipath + "lo");
            wc.init.hi = numbers(require(init, "hi", ipath), axes, ipath + "hi");
        }
        cfg.wave_functions.push_back(std::move(wc));
    }

    if (doc.contains("potentials")) {
        const auto& pots = doc.at("potentials");
        if (!pots.is_array()) throw SchemaError("'potentials' must be a list");
        for (std::size_t i = 0; i < pots.size(); ++i) {
            const std::string path = "potentials[" + std::to_string(i) + "].";
            const auto& p = pots[i];
            PotentialSpec ps;
            using K = PotentialSpec::Kind;
            ps.kind = enumeration<K>(require(p, "kind", path), path + "kind",
                                     {{"free", K::free}, {"box", K::box}, {"harmonic", K::harmonic},
                                      {"pair_softened_coulomb", K::pair_softened_coulomb}});
            if (ps.kind != K::free) ps.particles = indices(require(p, "particles", path), path + "particles");
            for (auto id : ps.particles)
                if (id >= cfg.particles.size()) throw SchemaError("'" + path + "particles' refers to an unknown particle");
            if (ps.kind == K::harmonic) {
                ps.omega = number(require(p, "omega", path), path + "omega");
                ps.center = numbers(require(p, "center", path), cfg.dims, path + "center");
            } else if (ps.kind == K::box) {
                ps.lo = numbers(require(p, "lo", path), cfg.dims, path + "lo");
                ps.hi = numbers(require(p, "hi", path), cfg.dims, path + "hi");
                ps.height = number(require(p, "height", path), path + "height");
            } else if (ps.kind == K::pair_softened_coulomb) {
                ps.coupling = number(require(p, "coupling", path), path + "coupling");
                ps.softening = number_or(p, "softening", 1.0, path);
            }
            try {
                ps.validate();
            } catch (const DomainError& e) {
                throw ConfigError("potential", path + ": " + e.what());
            }
            if (ps.kind != K::free) cfg.potentials.push_back(std::move(ps));
        }
    }

    cfg.f0 = number_or(doc, "f0", 0.0, "");
    cfg.theta0 = number_or(doc, "theta0", 0.0, "");
    if (doc.contains("grw")) {
        const auto& g = doc.at("grw");
        cfg.tick.grw.alpha = number_or(g, "alpha", cfg.tick.grw.alpha, "grw.");
        cfg.tick.grw.lambda_rate = number_or(g, "lambda", cfg.tick.grw.lambda_rate, "grw.");
        cfg.tick.grw.mass_proportional = boolean_or(g, "mass_proportional", false, "grw.");
    }
    if (doc.contains("csl")) {
        const auto& c = doc.at("csl");
        cfg.tick.csl.gamma = number_or(c, "gamma", cfg.tick.csl.gamma, "csl.");
        cfg.tick.csl.alpha = number_or(c, "alpha", cfg.tick.csl.alpha, "csl.");
        if (c.contains("variant"))
            cfg.tick.csl.variant = enumeration<csl::Variant>(
                c.at("variant"), "csl.variant",
                {{"number_density", csl::Variant::number_density}, {"mass_density", csl::Variant::mass_density}});
    }
    auto& cp = cfg.tick.ccqm;
    cp.f0 = cfg.f0;
    if (doc.contains("ccqm")) {
        const auto& c = doc.at("ccqm");
        cp.v_c = integer_or(c, "v_c", cp.v_c, "ccqm.");
        if (c.contains("F") && c.contains("reduction")) throw SchemaError("give either 'ccqm.F' or 'ccqm.reduction'");
        cp.F = c.contains("reduction")
                   ? ccqm::CcqmParams::fraction_from_reduction(number(c.at("reduction"), "ccqm.reduction"))
                   : number_or(c, "F", cp.F, "ccqm.");
        cp.scale_vc_with_N = boolean_or(c, "scale_vc_with_N", false, "ccqm.");
        cp.split_coupling = number_or(c, "split_coupling", cp.split_coupling, "ccqm.");
        cp.combine_coupling = number_or(c, "combine_coupling", cp.combine_coupling, "ccqm.");
        cp.symmetric_jump = boolean_or(c, "symmetric_jump", false, "ccqm.");
        cp.truncate_below_f0 = boolean_or(c, "truncate_below_f0", false, "ccqm.");
        cp.memory_budget_cells = integer_or(c, "memory_budget_cells", cp.memory_budget_cells, "ccqm.");
        if (c.contains("candidates"))
            cp.candidates = enumeration<ccqm::SplitCandidates>(
                c.at("candidates"), "ccqm.candidates",
                {{"single_vs_rest", ccqm::SplitCandidates::single_vs_rest},
                 {"all_bipartitions", ccqm::SplitCandidates::all_bipartitions}});
    }

    const auto& sched = require(doc, "schedule", "");
    cfg.dt = number(require(sched, "dt", "schedule."), "schedule.dt");
    cfg.steps = integer(require(sched, "steps", "schedule."), "schedule.steps");
    cfg.record_every = integer_or(sched, "record_every", 1, "schedule.");
    cfg.tick.evolve = boolean_or(sched, "evolve", true, "schedule.");
    if (doc.contains("ensemble")) {
        const auto& e = doc.at("ensemble");
        cfg.trajectories = integer_or(e, "trajectories", 1, "ensemble.");
        cfg.master_seed = integer_or(e, "master_seed", 1, "ensemble.");
    }
    if (doc.contains("branches")) {
        const auto& bs = doc.at("branches");
        if (!bs.is_array()) throw SchemaError("'branches' must be a list");
        for (std::size_t i = 0; i < bs.size(); ++i) {
            const std::string path = "branches[" + std::to_string(i) + "].";
            BranchConfig b;
            b.label = bs[i].contains("label") ? string(bs[i].at("label"), path + "label") : "b" + std::to_string(i);
            b.particle = integer(require(bs[i], "particle", path), path + "particle");
            if (b.particle >= cfg.particles.size()) throw SchemaError("'" + path + "particle' is unknown");
            b.lo = numbers(require(bs[i], "lo", path), cfg.dims, path + "lo");
            b.hi = numbers(require(bs[i], "hi", path), cfg.dims, path + "hi");
            if (bs[i].contains("expected")) b.expected = number(bs[i].at("expected"), path + "expected");
            cfg.branches.push_back(std::move(b));
        }
    }
    if (doc.contains("instrumentation")) {
        const auto& in = doc.at("instrumentation");
        cfg.entropy = boolean_or(in, "entropy", true, "instrumentation.");
        cfg.shadow = boolean_or(in, "shadow", false, "instrumentation.");
        cfg.identical_correction = boolean_or(in, "identical_correction", false, "instrumentation.");
        cfg.boltzmann = number_or(in, "boltzmann", cfg.units.boltzmann, "instrumentation.");
    }
    return cfg;
}

inline LatticeSpec wave_function_lattice(const ScenarioConfig& cfg, const WaveFunctionConfig& wc) {
    LatticeSpec lat;
    lat.particle_count = wc.particles.size();
    lat.dims_per_particle = cfg.dims;
    lat.boundary = cfg.boundary;
    for (auto p : wc.particles) {
        const auto& pc = cfg.particles[p];
        lat.cells_per_axis.insert(lat.cells_per_axis.end(), pc.cells.begin(), pc.cells.end());
        lat.cell_size.insert(lat.cell_size.end(), pc.cell_size.begin(), pc.cell_size.end());
        lat.origin.insert(lat.origin.end(), pc.origin.begin(), pc.origin.end());
    }
    return lat;
}

inline DiscreteWaveFunction initial_state(const ScenarioConfig& cfg, const WaveFunctionConfig& wc) {
    const auto lat = wave_function_lattice(cfg, wc);
    std::vector<ParticleSpec> parts;
    for (auto p : wc.particles) parts.push_back(cfg.particles[p].spec);
    DiscreteWaveFunction psi(lat, parts, cfg.f0, cfg.theta0);
    if (wc.init.kind == InitialState::Kind::uniform) {
        CellIndexer ix(lat);
        for (std::size_t c = 0; c < psi.size(); ++c) {
            bool inside = true;
            for (std::size_t ax = 0; ax < lat.axis_count(); ++ax) {
                const double x = lat.coordinate(ax, ix.coord(c, ax));
                inside = inside && x >= wc.init.lo[ax] && x <= wc.init.hi[ax];
            }
            if (inside) psi[c] = cplx{1.0, 0.0};
        }
        return normalize(std::move(psi));
    }
    for (const auto& t : wc.init.terms) {
        const auto g = gaussian_packet(lat, parts, t.center, t.momentum, t.sigma, cfg.f0, cfg.units);
        for (std::size_t c = 0; c < psi.size(); ++c) psi[c] += t.amplitude * g[c];
    }
    return normalize(std::move(psi));
}

/// Builds the initial states and checks every cross-field constraint.
inline std::vector<DiscreteWaveFunction> validate(const ScenarioConfig& cfg) {
    auto fail = [](const std::string& c, const std::string& m) { throw ConfigError(c, c + ": " + m); };
    if (cfg.dims < 1 || cfg.dims > 3) fail("dims_per_particle", "must be 1, 2 or 3");
    if (!(cfg.dt > 0.0)) fail("schedule.dt", "time step must be positive");
    if (cfg.record_every < 1) fail("schedule.record_every", "must be at least 1");
    if (cfg.trajectories < 1) fail("ensemble.trajectories", "must be at least 1");
    if (!(cfg.f0 >= 0.0) || !(cfg.theta0 >= 0.0)) fail("f0", "base magnitude and phase must be nonnegative");
    if (!(cfg.units.hbar > 0.0) || !(cfg.units.boltzmann > 0.0)) fail("units", "constants must be positive");
    for (const auto& p : cfg.particles) {
        if (!(p.spec.mass > 0.0)) fail("particle.mass", "mass must be positive");
        for (auto n : p.cells)
            if (n < 2) fail("particle.cells", "every axis needs at least two cells");
        for (double a : p.cell_size)
            if (!(a > 0.0)) fail("particle.cell_size", "cell sizes must be positive");
    }
    std::vector<int> owner(cfg.particles.size(), 0);
    for (const auto& wc : cfg.wave_functions)
        for (auto p : wc.particles) ++owner[p];
    for (std::size_t p = 0; p < owner.size(); ++p)
        if (owner[p] != 1)
            fail("particle ownership", "particle " + std::to_string(p) + " must belong to exactly one wave function");
    try {
        switch (cfg.model) {
            case Model::grw: cfg.tick.grw.validate(); break;
            case Model::csl: cfg.tick.csl.validate(); break;
            case Model::ccqm: cfg.tick.ccqm.validate(); break;
            default: break;
        }
    } catch (const DomainError& e) {
        fail(std::string(to_string(cfg.model)) + " parameters", e.what());
    }
    for (const auto& b : cfg.branches)
        if (b.expected && !(*b.expected > 0.0 && *b.expected < 1.0)) fail("branches.expected", "must lie in (0, 1)");

    std::vector<DiscreteWaveFunction> states;
    for (std::size_t i = 0; i < cfg.wave_functions.size(); ++i) {
        const auto& wc = cfg.wave_functions[i];
        try {
            const auto lat = wave_function_lattice(cfg, wc);
            lat.validate();
            if (cfg.model == Model::ccqm && lat.cell_count() > cfg.tick.ccqm.memory_budget_cells)
                fail("memory budget", "wave function " + std::to_string(i) + " exceeds memory_budget_cells");
            states.push_back(initial_state(cfg, wc));
        } catch (const ConfigError&) {
            throw;
        } catch (const Error& e) {
            fail("wave function " + std::to_string(i), e.what());
        }
        if (cfg.model == Model::ccqm) {
            const auto& psi = states.back();
            const auto vc = ccqm::critical_volume(psi, cfg.tick.ccqm);
            if (!ccqm::trigger_safe(vc, cfg.f0, psi.lattice().cell_volume()))
                fail("trigger safety", "v_c must not exceed 0.1 / (f0^2 cell volume) for wave function " +
                                           std::to_string(i));
        }
    }
    if (cfg.model == Model::csl)
        for (const auto& psi : states) {
            try {
                csl::SmearedDensityOperators(psi.lattice(), cfg.tick.csl.alpha, cfg.tick.csl.variant, psi.particles(),
                                             cfg.units);
            } catch (const Error& e) {
                fail("csl lattice", e.what());
            }
        }
    return states;
}

// ---------------------------------------------------------------- output

namespace detail {

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

template <class T>
std::string joined(const std::vector<T>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ';';
        if constexpr (std::is_floating_point_v<T>) s += fmt(xs[i]);
        else s += std::to_string(xs[i]);
    }
    return s;
}

}  // namespace detail

inline const char* events_header = "trajectory,time,mechanism,wave_functions,center,epsilon,v_pre,v_post,delta_e\n";
inline const char* volume_header = "trajectory,step,time,wf_id,particles,v\n";
inline const char* entropy_header = "trajectory,step,time,wf_id,v,S_wf,S_system,S_reference,event_flag\n";
inline const char* outcomes_header = "trajectory,branch,mass,selected\n";

struct TrajectoryResult {
    std::string events, volume, entropy, outcomes;
    std::vector<double> branch_mass;
    std::size_t selected = 0;
    std::size_t max_volume = 0;
    std::size_t event_count = 0;
    std::vector<DiscreteWaveFunction> final_states;
};

/// Mass of particle b.particle's marginal inside [lo, hi] on every axis.
inline double branch_mass(const WaveFunctionRegistry& reg, const BranchConfig& b) {
    const auto owner = reg.owner_of(b.particle);
    if (!owner) return 0.0;
    const auto& m = reg.member(*owner);
    const auto k = *WaveFunctionRegistry::local_index(m, b.particle);
    const auto g = marginal_density(m.psi, k);
    const auto pl = m.psi.lattice().particle_lattice(k);
    const double dv = pl.cell_volume();
    CellIndexer ix(pl);
    double mass = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c) {
        bool inside = true;
        for (std::size_t a = 0; a < pl.axis_count(); ++a) {
            const double x = pl.coordinate(a, ix.coord(c, a));
            inside = inside && x >= b.lo[a] && x <= b.hi[a];
        }
        if (inside) mass += g[c] * dv;
    }
    return mass;
}

inline TrajectoryResult run_trajectory(const ScenarioConfig& cfg, const std::vector<DiscreteWaveFunction>& init,
                                       std::size_t trajectory) {
    using detail::fmt;
    std::vector<ParticleSpec> parts;
    for (const auto& p : cfg.particles) parts.push_back(p.spec);
    WaveFunctionRegistry reg(parts, cfg.potentials);
    for (std::size_t i = 0; i < init.size(); ++i) reg.add(init[i], cfg.wave_functions[i].particles);
    std::optional<WaveFunctionRegistry> shadow;
    auto shadow_tick = cfg.tick;
    shadow_tick.model = Model::unitary;
    if (cfg.shadow) shadow = reg;

    Rng rng(derive_seed(cfg.master_seed, trajectory));
    TrajectoryResult out;
    std::ostringstream ev_out, vol_out, ent_out;
    const auto tj = std::to_string(trajectory) + ",";
    EntropyRecorder rec(cfg.f0, cfg.boltzmann, cfg.identical_correction);

    auto emit = [&](std::size_t step, std::size_t events_before) {
        const auto r = rec.record(reg, events_before, shadow ? &*shadow : nullptr);
        std::string flag = r.post_collapse ? (r.post_split ? "collapse+split" : "collapse") : (r.post_split ? "split" : "");
        std::size_t i = 0;
        for (const auto& [id, m] : reg.members()) {
            const auto v = r.volumes[i];
            out.max_volume = std::max(out.max_volume, v);
            vol_out << tj << step << ',' << fmt(reg.clock()) << ',' << id << ',' << detail::joined(m.particle_ids)
                    << ',' << v << '\n';
            if (cfg.entropy)
                ent_out << tj << step << ',' << fmt(reg.clock()) << ',' << id << ',' << v << ','
                        << fmt(r.entropies[i]) << ',' << fmt(r.system) << ','
                        << (r.reference ? fmt(*r.reference) : std::string()) << ',' << flag << '\n';
            ++i;
        }
    };

    emit(0, 0);
    std::size_t since = 0;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        registry_tick(reg, cfg.tick, cfg.dt, rng);
        if (shadow) registry_tick(*shadow, shadow_tick, cfg.dt, rng);
        if (step % cfg.record_every == 0 || step == cfg.steps) {
            emit(step, since);
            since = reg.events().size();
        }
    }
    for (const auto& e : reg.events())
        ev_out << tj << fmt(e.time) << ',' << to_string(e.mechanism) << ',' << detail::joined(e.wave_functions) << ','
               << detail::joined(e.center) << ',' << fmt(e.epsilon) << ',' << e.v_pre << ',' << e.v_post << ','
               << fmt(e.delta_e) << '\n';
    out.event_count = reg.events().size();

    if (!cfg.branches.empty()) {
        std::ostringstream oc;
        for (const auto& b : cfg.branches) out.branch_mass.push_back(branch_mass(reg, b));
        out.selected = static_cast<std::size_t>(std::max_element(out.branch_mass.begin(), out.branch_mass.end()) -
                                                out.branch_mass.begin());
        for (std::size_t b = 0; b < cfg.branches.size(); ++b)
            oc << tj << cfg.branches[b].label << ',' << fmt(out.branch_mass[b]) << ',' << (b == out.selected ? 1 : 0)
               << '\n';
        out.outcomes = oc.str();
    }
    out.events = ev_out.str();
    out.volume = vol_out.str();
    out.entropy = ent_out.str();
    for (const auto& [id, m] : reg.members()) out.final_states.push_back(m.psi);
    return out;
}

/// Worker count from QCOLLAPSE_WORKERS (default 1).
inline std::size_t worker_count() {
    if (const char* w = std::getenv("QCOLLAPSE_WORKERS")) {
        const long n = std::strtol(w, nullptr, 10);
        if (n > 0) return static_cast<std::size_t>(n);
    }
    return 1;
}

struct RunResult {
    std::map<std::string, std::string> files;  // name -> content
};

inline std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned int i = 0; i < len; ++i) {
        s += hex[md[i] >> 4];
        s += hex[md[i] & 15];
    }
    return s;
}

/// Runs the ensemble (trajectories fan out over workers; results are merged
/// in trajectory order) and renders every artifact in memory.
inline RunResult run(const ScenarioConfig& cfg, std::size_t workers = 1) {
    const auto init = validate(cfg);
    std::vector<TrajectoryResult> results(cfg.trajectories);
    std::vector<std::string> errors(cfg.trajectories);
    std::vector<int> kinds(cfg.trajectories, 0);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k = next++; k < cfg.trajectories; k = next++) {
            try {
                results[k] = run_trajectory(cfg, init, k);
            } catch (const Error& e) {
                errors[k] = e.what();
                kinds[k] = 1;
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, cfg.trajectories));
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (std::size_t k = 0; k < cfg.trajectories; ++k)
        if (kinds[k]) throw NumericalError("trajectory " + std::to_string(k) + ": " + errors[k]);

    RunResult rr;
    std::string events = events_header, volume = volume_header, entropy = entropy_header, outcomes = outcomes_header;
    std::size_t max_volume = 0, event_count = 0;
    for (const auto& r : results) {
        events += r.events;
        volume += r.volume;
        if (cfg.entropy) entropy += r.entropy;
        outcomes += r.outcomes;
        max_volume = std::max(max_volume, r.max_volume);
        event_count += r.event_count;
    }
    rr.files["events.csv"] = events;
    rr.files["volume.csv"] = volume;
    if (cfg.entropy) rr.files["entropy.csv"] = entropy;

    // cost of trajectory 0's final state, explicit-stencil accounting
    {
        const auto& fin = results[0].final_states;
        std::size_t N = 0;
        for (const auto& psi : fin) N += psi.particle_count();
        const auto report = feynman::cost_report(N, fin, cfg.f0);
        double predicted = 0.0;
        for (const auto& psi : fin)
            predicted += static_cast<double>(psi.particle_count()) *
                         static_cast<double>(std::max<std::size_t>(1, relative_volume(psi, cfg.f0)));
        json cost = {{"particle_count", report.particle_count},
                     {"wave_function_count", report.wave_function_count},
                     {"memory_cells", report.memory_cells},
                     {"max_memory_cells", report.max_memory_cells},
                     {"ops_per_step_measured", report.ops_measured},
                     {"ops_per_step_predicted_k1", predicted},
                     {"spin_state_factor_per_particle", 2},
                     {"spin_potential_factor_per_particle", 4}};
        rr.files["cost.json"] = cost.dump(2) + "\n";
    }

    json summary = {{"model", to_string(cfg.model)},
                    {"trajectories", cfg.trajectories},
                    {"steps", cfg.steps},
                    {"max_relative_volume", max_volume},
                    {"events", event_count}};
    if (cfg.model == Model::ccqm) summary["v_c"] = cfg.tick.ccqm.v_c;
    if (!cfg.branches.empty()) {
        rr.files["outcomes.csv"] = outcomes;
        json branches = json::array();
        double residual_max = 0.0;
        for (const auto& r : results)
            for (std::size_t o = 0; o < r.branch_mass.size(); ++o)
                if (o != r.selected) residual_max = std::max(residual_max, r.branch_mass[o]);
        for (std::size_t b = 0; b < cfg.branches.size(); ++b) {
            std::size_t count = 0;
            for (const auto& r : results)
                if (r.selected == b) ++count;
            json jb = {{"label", cfg.branches[b].label},
                       {"count", count},
                       {"frequency", static_cast<double>(count) / static_cast<double>(cfg.trajectories)}};
            if (cfg.branches[b].expected) {
                const auto v = stats::binomial(static_cast<double>(count), static_cast<double>(cfg.trajectories),
                                               *cfg.branches[b].expected);
                jb["expected"] = *cfg.branches[b].expected;
                jb["z"] = v.statistic;
                jb["within_3_sigma"] = std::abs(v.statistic) <= 3.0;
            }
            branches.push_back(jb);
        }
        summary["branches"] = branches;
        summary["max_unselected_branch_mass"] = residual_max;
    }
    rr.files["summary.json"] = summary.dump(2) + "\n";

    json manifest = {{"version", version},
                     {"config_sha256", sha256_hex(cfg.source)},
                     {"master_seed", cfg.master_seed},
                     {"trajectories", cfg.trajectories},
                     {"seed_derivation", "splitmix64(master_seed ^ trajectory)"}};
    json files = json::object();
    for (const auto& [name, content] : rr.files) files[name] = sha256_hex(content);
    manifest["files"] = files;
    rr.files["manifest.json"] = manifest.dump(2) + "\n";
    return rr;
}

inline void write_outputs(const RunResult& rr, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, content] : rr.files) {
        std::ofstream f(dir / name, std::ios::binary);
        f << content;
        if (!f) throw Error("cannot write " + (dir / name).string());
    }
}

}  // namespace qcollapse::scenario
