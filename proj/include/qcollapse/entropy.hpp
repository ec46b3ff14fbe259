#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "registry.hpp"
#include "wavefunction.hpp"

namespace qcollapse {

/// S = k ln v.
inline double wavefunction_entropy(std::size_t relative_vol, double k = 1.0) {
    if (relative_vol == 0) throw VanishedWaveFunction("entropy undefined for zero relative volume");
    return k * std::log(static_cast<double>(relative_vol));
}

inline double wavefunction_entropy(const DiscreteWaveFunction& psi, double f0, double k = 1.0) {
    return wavefunction_entropy(relative_volume(psi, f0), k);
}

/// k ln(N_c!) summed over identical classes.
inline double identical_particle_correction(const std::vector<ParticleSpec>& particles, double k = 1.0) {
    std::map<std::string, std::size_t> counts;
    for (const auto& p : particles)
        if (p.identity_class) ++counts[*p.identity_class];
    double s = 0.0;
    for (const auto& [name, n] : counts) s += std::lgamma(static_cast<double>(n) + 1.0);
    return k * s;
}

inline double system_entropy(const WaveFunctionRegistry& reg, double f0, double k = 1.0,
                             bool identical_correction = false) {
    double s = 0.0;
    for (const auto& [id, m] : reg.members()) s += wavefunction_entropy(m.psi, f0, k);
    if (identical_correction) s -= identical_particle_correction(reg.particles(), k);
    return s;
}

/// S = k ln( V^N (3 m k T)^{3N/2} / ((beta h)^{3N} N!) ), evaluated in the
/// log domain; `stirling` replaces ln N! with N ln N - N.
inline double ideal_gas_entropy(double N, double V, double T, double m, double h, double k, double beta = 1.0,
                                bool stirling = false) {
    if (!(N > 0 && V > 0 && T > 0 && m > 0 && h > 0 && k > 0 && beta > 0))
        throw DomainError("ideal gas entropy needs positive arguments");
    const double log_fact = stirling ? N * std::log(N) - N : std::lgamma(N + 1.0);
    return k * (N * std::log(V) + 1.5 * N * std::log(3.0 * m * k * T) - 3.0 * N * std::log(beta * h) - log_fact);
}

/// kN ln(V_f / V_i).
inline double ideal_gas_delta_volume(double N, double V_i, double V_f, double k = 1.0) {
    return k * N * std::log(V_f / V_i);
}

/// kN ln((T_f / T_i)^{3/2}).
inline double ideal_gas_delta_temperature(double N, double T_i, double T_f, double k = 1.0) {
    return k * N * std::log(std::pow(T_f / T_i, 1.5));
}

struct EntropyRecord {
    double time = 0.0;
    std::vector<std::size_t> wave_functions;
    std::vector<std::size_t> volumes;
    std::vector<double> entropies;
    double system = 0.0;
    std::optional<double> reference;
    bool post_collapse = false;
    bool post_split = false;
};

/// Builds one record per tick from a registry; optionally tracks a shadow
/// copy evolved without collapse and reports k ln of its volume product as
/// the reference entropy.
class EntropyRecorder {
public:
    EntropyRecorder(double f0, double k = 1.0, bool identical_correction = false)
        : f0_(f0), k_(k), correction_(identical_correction) {}

    EntropyRecord record(const WaveFunctionRegistry& reg, std::size_t events_before,
                         const WaveFunctionRegistry* shadow = nullptr) {
        EntropyRecord r;
        r.time = reg.clock();
        for (const auto& [id, m] : reg.members()) {
            const auto v = relative_volume(m.psi, f0_);
            r.wave_functions.push_back(id);
            r.volumes.push_back(v);
            r.entropies.push_back(v ? wavefunction_entropy(v, k_) : 0.0);
            r.system += r.entropies.back();
        }
        if (correction_) r.system -= identical_particle_correction(reg.particles(), k_);
        for (std::size_t e = events_before; e < reg.events().size(); ++e) {
            const auto mech = reg.events()[e].mechanism;
            if (mech == Mechanism::ccqm_split) r.post_split = true;
            else if (mech != Mechanism::combine) r.post_collapse = true;
        }
        if (shadow) r.reference = system_entropy(*shadow, f0_, k_, correction_);
        series_.push_back(r);
        return r;
    }

    const std::vector<EntropyRecord>& series() const { return series_; }

private:
    double f0_, k_;
    bool correction_;
    std::vector<EntropyRecord> series_;
};

/// Runs `ticks` registry ticks and returns one entropy record per tick
/// (plus the initial state).
inline std::vector<EntropyRecord> entropy_timeseries(WaveFunctionRegistry& reg, const TickParams& params, double dt,
                                                     std::size_t ticks, Rng& rng, double k = 1.0,
                                                     bool identical_correction = false) {
    EntropyRecorder rec(params.ccqm.f0, k, identical_correction);
    rec.record(reg, reg.events().size());
    for (std::size_t t = 0; t < ticks; ++t) {
        const auto before = reg.events().size();
        registry_tick(reg, params, dt, rng);
        rec.record(reg, before);
    }
    return rec.series();
}

}  // namespace qcollapse
