#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccqm.hpp"
#include "csl.hpp"
#include "dynamics.hpp"
#include "errors.hpp"
#include "grw.hpp"
#include "kernels.hpp"
#include "rng.hpp"
#include "wavefunction.hpp"

namespace qcollapse {

enum class Model { unitary, grw, csl, ccqm };

inline const char* to_string(Model m) {
    switch (m) {
        case Model::unitary: return "unitary";
        case Model::grw: return "grw";
        case Model::csl: return "csl";
        case Model::ccqm: return "ccqm";
    }
    return "unknown";
}

struct TickParams {
    Model model = Model::ccqm;
    ccqm::CcqmParams ccqm;
    grw::GrwParams grw;
    csl::CslParams csl;
    StepOptions step;
    Units units;
    /// Off for tests that isolate the collapse law from free evolution.
    bool evolve = true;
};

struct RegistryMember {
    std::size_t id = 0;
    DiscreteWaveFunction psi;
    /// Scenario-global particle ids, in the order of psi's particles.
    std::vector<std::size_t> particle_ids;
};

/// The currently separate wave functions of a scenario together with the
/// potentials that couple them, the clock and the event log.
class WaveFunctionRegistry {
public:
    WaveFunctionRegistry() = default;
    explicit WaveFunctionRegistry(std::vector<ParticleSpec> particles, std::vector<PotentialSpec> potentials = {})
        : particles_(std::move(particles)), potentials_(std::move(potentials)) {
        for (const auto& p : potentials_) {
            p.validate();
            for (auto id : p.particles)
                if (id >= particles_.size()) throw DomainError("potential refers to an unknown particle");
        }
    }

    std::size_t add(DiscreteWaveFunction psi, std::vector<std::size_t> particle_ids) {
        if (particle_ids.size() != psi.particle_count())
            throw DomainError("particle id list does not match the wave function");
        for (auto id : particle_ids) {
            if (id >= particles_.size()) throw DomainError("unknown particle id");
            if (owner_of(id)) throw DomainError("particle already belongs to a wave function");
        }
        const auto id = next_id_++;
        members_.emplace(id, RegistryMember{id, std::move(psi), std::move(particle_ids)});
        return id;
    }

    void remove(std::size_t id) {
        members_.erase(id);
        csl_ops_.erase(id);
    }

    const std::map<std::size_t, RegistryMember>& members() const { return members_; }
    RegistryMember& member(std::size_t id) { return members_.at(id); }
    const RegistryMember& member(std::size_t id) const { return members_.at(id); }
    std::size_t size() const { return members_.size(); }

    const std::vector<ParticleSpec>& particles() const { return particles_; }
    const std::vector<PotentialSpec>& potentials() const { return potentials_; }

    double clock() const { return clock_; }
    void advance_clock(double dt) { clock_ += dt; }
    const std::vector<CollapseEvent>& events() const { return events_; }
    void record(CollapseEvent ev) { events_.push_back(std::move(ev)); }
    std::size_t refused_combinations() const { return refused_; }
    void note_refused() { ++refused_; }

    std::optional<std::size_t> owner_of(std::size_t particle) const {
        for (const auto& [id, m] : members_)
            if (std::find(m.particle_ids.begin(), m.particle_ids.end(), particle) != m.particle_ids.end()) return id;
        return std::nullopt;
    }

    /// Every scenario particle belongs to exactly one wave function.
    bool particles_conserved() const {
        std::vector<int> seen(particles_.size(), 0);
        for (const auto& [id, m] : members_)
            for (auto p : m.particle_ids) ++seen[p];
        return std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; });
    }

    /// Hamiltonian of one member: external potentials on its particles, pair
    /// potentials inside it, and mean fields from pairs reaching other members.
    Hamiltonian hamiltonian(std::size_t id, const Units& units = {}) const {
        const auto& m = members_.at(id);
        const auto& lat = m.psi.lattice();
        std::vector<double> v(lat.cell_count(), 0.0);
        auto add = [&](const std::vector<double>& w) {
            for (std::size_t c = 0; c < v.size(); ++c) v[c] += w[c];
        };
        for (const auto& p : potentials_) {
            using K = PotentialSpec::Kind;
            if (p.kind == K::harmonic || p.kind == K::box) {
                const auto k = local_index(m, p.particles[0]);
                if (!k) continue;
                if (p.kind == K::harmonic)
                    add(harmonic_potential(lat, *k, m.psi.particles()[*k].mass, p.omega, p.center));
                else
                    add(box_potential(lat, *k, p.lo, p.hi, p.height));
            } else if (p.kind == K::pair_softened_coulomb) {
                for (int swap = 0; swap < 2; ++swap) {
                    const auto a = p.particles[swap], b = p.particles[1 - swap];
                    const auto ka = local_index(m, a);
                    if (!ka) continue;
                    if (const auto kb = local_index(m, b)) {
                        if (swap == 0) add(pair_potential(lat, *ka, *kb, p));
                    } else {
                        const auto& other = members_.at(*owner_of(b));
                        add(mean_field_potential(m.psi, *ka, other.psi, *local_index(other, b), p));
                    }
                }
            }
        }
        return make_hamiltonian(m.psi, std::move(v), units);
    }

    /// |sum of E[V] over pair potentials linking members a and b|, each
    /// evaluated under the two particles' marginals.
    double interaction_strength(std::size_t a, std::size_t b) const {
        const auto& ma = members_.at(a);
        const auto& mb = members_.at(b);
        double total = 0.0;
        for (const auto& p : potentials_) {
            if (p.kind != PotentialSpec::Kind::pair_softened_coulomb) continue;
            for (int swap = 0; swap < 2; ++swap) {
                const auto ka = local_index(ma, p.particles[swap]);
                const auto kb = local_index(mb, p.particles[1 - swap]);
                if (!ka || !kb) continue;
                const auto v = mean_field_potential(ma.psi, *ka, mb.psi, *kb, p);
                const double dv = ma.psi.lattice().cell_volume();
                double acc = 0.0;
                for (std::size_t c = 0; c < v.size(); ++c) acc += v[c] * std::norm(ma.psi[c]) * dv;
                total += acc;
            }
        }
        return std::abs(total);
    }

    /// Pair potentials internal to a member, rewritten with local indices.
    std::vector<PotentialSpec> local_pairs(std::size_t id) const {
        const auto& m = members_.at(id);
        std::vector<PotentialSpec> out;
        for (const auto& p : potentials_) {
            if (p.kind != PotentialSpec::Kind::pair_softened_coulomb) continue;
            const auto a = local_index(m, p.particles[0]), b = local_index(m, p.particles[1]);
            if (!a || !b) continue;
            auto q = p;
            q.particles = {*a, *b};
            out.push_back(std::move(q));
        }
        return out;
    }

    /// Sum of relative volumes over members (memory in support cells).
    std::uint64_t total_volume(double f0) const {
        std::uint64_t v = 0;
        for (const auto& [id, m] : members_) v += relative_volume(m.psi, f0);
        return v;
    }

    std::size_t max_volume(double f0) const {
        std::size_t v = 0;
        for (const auto& [id, m] : members_) v = std::max(v, relative_volume(m.psi, f0));
        return v;
    }

    const csl::SmearedDensityOperators& csl_operators(std::size_t id, const csl::CslParams& params,
                                                      const Units& units) {
        auto it = csl_ops_.find(id);
        if (it == csl_ops_.end()) {
            const auto& m = members_.at(id);
            it = csl_ops_
                     .emplace(id, std::make_shared<csl::SmearedDensityOperators>(
                                      m.psi.lattice(), params.alpha, params.variant, m.psi.particles(), units))
                     .first;
        }
        return *it->second;
    }

    static std::optional<std::size_t> local_index(const RegistryMember& m, std::size_t particle) {
        const auto it = std::find(m.particle_ids.begin(), m.particle_ids.end(), particle);
        if (it == m.particle_ids.end()) return std::nullopt;
        return static_cast<std::size_t>(it - m.particle_ids.begin());
    }

private:
    std::vector<ParticleSpec> particles_;
    std::vector<PotentialSpec> potentials_;
    std::map<std::size_t, RegistryMember> members_;
    std::map<std::size_t, std::shared_ptr<csl::SmearedDensityOperators>> csl_ops_;
    std::vector<CollapseEvent> events_;
    std::size_t next_id_ = 0;
    std::size_t refused_ = 0;
    double clock_ = 0.0;
};

namespace detail {

template <class Fn>
auto with_context(std::size_t id, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const NumericalError& e) {
        throw NumericalError("wave function " + std::to_string(id) + ": " + e.what());
    } catch (const VanishedWaveFunction& e) {
        throw VanishedWaveFunction("wave function " + std::to_string(id) + ": " + e.what());
    } catch (const WidthSearchFailed& e) {
        throw WidthSearchFailed("wave function " + std::to_string(id) + ": " + e.what());
    } catch (const DegenerateCollapse& e) {
        throw DegenerateCollapse("wave function " + std::to_string(id) + ": " + e.what());
    }
}

inline void ccqm_resolve(WaveFunctionRegistry& reg, std::size_t id, const TickParams& params,
                         const std::map<std::size_t, Hamiltonian>& hs, double time, Rng& rng) {
    std::vector<std::size_t> queue{id};
    std::size_t guard = 0;
    while (!queue.empty()) {
        const auto cur = queue.back();
        queue.pop_back();
        while (ccqm::check_trigger(reg.member(cur).psi, params.ccqm)) {
            if (++guard > 4096) throw NumericalError("trigger handling did not terminate");
            auto& m = reg.member(cur);
            const auto pairs = reg.local_pairs(cur);
            auto split = ccqm::try_split(m.psi, params.ccqm, rng, pairs);
            if (split.event) {
                auto ev = *split.event;
                ev.time = time;
                ev.wave_functions = {cur};
                const auto ids = m.particle_ids;
                reg.remove(cur);
                for (std::size_t p = 0; p < split.parts.size(); ++p) {
                    std::vector<std::size_t> pids;
                    for (auto k : split.particle_sets[p]) pids.push_back(ids[k]);
                    const auto nid = reg.add(std::move(split.parts[p]), std::move(pids));
                    ev.wave_functions.push_back(nid);
                    queue.push_back(nid);
                }
                reg.record(std::move(ev));
                break;
            }
            const auto h = hs.find(cur);
            auto [out, ev] = with_context(cur, [&] {
                return ccqm::ccqm_localize(m.psi, params.ccqm, rng, h != hs.end() ? &h->second : nullptr);
            });
            ev.time = time;
            ev.wave_functions = {cur};
            m.psi = std::move(out);
            reg.record(std::move(ev));
        }
    }
}

}  // namespace detail

/// One tick: (1) mean-field Hamiltonians, (2) evolve every member (CSL noise
/// included; GRW hits sampled within the tick), (3) CCQM combinations,
/// (4) CCQM trigger handling, split first else localize, (5) events logged.
inline void registry_tick(WaveFunctionRegistry& reg, const TickParams& params, double dt, Rng& rng) {
    if (!(dt > 0.0)) throw DomainError("tick length must be positive");
    const double t0 = reg.clock();
    const double t1 = t0 + dt;

    std::map<std::size_t, Hamiltonian> hs;
    for (const auto& [id, m] : reg.members()) hs.emplace(id, reg.hamiltonian(id, params.units));

    std::vector<std::size_t> ids;
    for (const auto& [id, m] : reg.members()) ids.push_back(id);

    for (auto id : ids) {
        auto& m = reg.member(id);
        const auto& h = hs.at(id);
        detail::with_context(id, [&] {
            if (params.model == Model::csl) {
                auto cp = params.csl;
                cp.dt = dt;
                const auto& ops = reg.csl_operators(id, cp, params.units);
                m.psi = csl::csl_step(m.psi, params.evolve ? &h : nullptr, cp, ops, rng);
            } else if (params.evolve) {
                m.psi = step_unitary(m.psi, h, dt, params.step);
            }
            return 0;
        });
        if (params.model == Model::grw) {
            double t = 0.0;
            while (true) {
                const auto hit = grw::sample_hit(m.psi, params.grw, rng, params.units);
                t += hit.wait_time;
                if (t > dt) break;
                auto [out, ev] = detail::with_context(
                    id, [&] { return grw::sample_and_hit(m.psi, hit.particle, params.grw, rng, &h); });
                ev.time = t0 + t;
                ev.wave_functions = {id};
                m.psi = std::move(out);
                reg.record(std::move(ev));
            }
        }
    }

    if (params.model != Model::ccqm) {
        reg.advance_clock(dt);
        return;
    }

    if (params.ccqm.combine_coupling > 0.0) {
        std::vector<std::size_t> cur;
        for (const auto& [id, m] : reg.members()) cur.push_back(id);
        std::vector<bool> used(cur.size(), false);
        for (std::size_t i = 0; i < cur.size(); ++i)
            for (std::size_t j = i + 1; j < cur.size(); ++j) {
                if (used[i] || used[j]) continue;
                const double I = reg.interaction_strength(cur[i], cur[j]);
                if (I == 0.0) continue;
                const auto& a = reg.member(cur[i]);
                const auto& b = reg.member(cur[j]);
                std::optional<DiscreteWaveFunction> joint;
                try {
                    joint = ccqm::try_combine(a.psi, b.psi, params.ccqm, I, dt, rng);
                } catch (const CombineRefused&) {
                    reg.note_refused();
                    continue;
                }
                if (!joint) continue;
                auto pids = a.particle_ids;
                pids.insert(pids.end(), b.particle_ids.begin(), b.particle_ids.end());
                CollapseEvent ev;
                ev.time = t1;
                ev.mechanism = Mechanism::combine;
                ev.wave_functions = {cur[i], cur[j]};
                ev.v_pre = relative_volume(a.psi, params.ccqm.f0) * relative_volume(b.psi, params.ccqm.f0);
                ev.v_post = relative_volume(*joint, params.ccqm.f0);
                reg.remove(cur[i]);
                reg.remove(cur[j]);
                const auto nid = reg.add(std::move(*joint), std::move(pids));
                ev.wave_functions.push_back(nid);
                hs.emplace(nid, reg.hamiltonian(nid, params.units));
                reg.record(std::move(ev));
                used[i] = used[j] = true;
            }
    }

    ids.clear();
    for (const auto& [id, m] : reg.members()) ids.push_back(id);
    for (auto id : ids)
        if (reg.members().count(id)) detail::ccqm_resolve(reg, id, params, hs, t1, rng);

    for (const auto& [id, m] : reg.members())
        if (ccqm::check_trigger(m.psi, params.ccqm))
            throw NumericalError("volume cap violated after tick by wave function " + std::to_string(id));
    reg.advance_clock(dt);
}

}  // namespace qcollapse
