#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dynamics.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "rng.hpp"
#include "wavefunction.hpp"

namespace qcollapse::ccqm {

enum class SplitCandidates { single_vs_rest, all_bipartitions };

struct CcqmParams {
    std::uint64_t v_c = 1000;
    /// Post-collapse volume is about F times the pre-collapse volume.
    double F = 0.5;
    double f0 = 0.0;
    bool scale_vc_with_N = false;
    double split_coupling = 1.0;    // g in p_split = exp(-g I)
    double combine_coupling = 0.0;  // c in p_combine = 1 - exp(-c I dt)
    bool symmetric_jump = false;
    /// Discrete-physics mode: zero cells at or below f0 after a localization.
    /// Off by default; the hard edge rings under later evolution.
    bool truncate_below_f0 = false;
    SplitCandidates candidates = SplitCandidates::single_vs_rest;
    std::size_t memory_budget_cells = std::size_t{1} << 22;

    void validate() const {
        if (!(v_c > 1)) throw DomainError("critical relative volume must exceed 1");
        if (!(F > 0.0 && F < 1.0)) throw DomainError("collapse fraction F must lie in (0, 1)");
        if (!(f0 >= 0.0)) throw DomainError("base magnitude must be nonnegative");
        if (!(split_coupling >= 0.0) || !(combine_coupling >= 0.0))
            throw DomainError("split and combine couplings must be nonnegative");
    }

    /// Alias for the "reduce by fraction" reading: F = 1 - reduction.
    static double fraction_from_reduction(double reduction) { return 1.0 - reduction; }
};

inline constexpr double trigger_safety_eta = 0.1;

/// v_c <= eta / (f0^2 dV): collapse must fire before a spreading packet
/// drops below f0 everywhere.
inline bool trigger_safe(std::uint64_t v_c, double f0, double cell_volume, double eta = trigger_safety_eta) {
    if (f0 == 0.0) return true;
    return static_cast<double>(v_c) <= eta / (f0 * f0 * cell_volume);
}

inline std::uint64_t critical_volume(const DiscreteWaveFunction& psi, const CcqmParams& params) {
    return params.scale_vc_with_N ? params.v_c * psi.particle_count() : params.v_c;
}

inline bool check_trigger(std::size_t relative_vol, std::size_t particles, const CcqmParams& params) {
    const auto vc = params.scale_vc_with_N ? params.v_c * particles : params.v_c;
    return relative_vol >= vc;
}

inline bool check_trigger(const DiscreteWaveFunction& psi, const CcqmParams& params) {
    return check_trigger(relative_volume(psi, params.f0), psi.particle_count(), params);
}

/// P(x') = || j(x' - x) psi ||^2 over configuration-space cells, with j the
/// configuration-space Gaussian of inverse squared width eps.
inline std::vector<double> ccqm_center_density(const DiscreteWaveFunction& psi, double eps) {
    if (!(eps > 0.0)) throw DomainError("jump width parameter must be positive");
    std::vector<double> rho(psi.size());
    for (std::size_t c = 0; c < rho.size(); ++c) rho[c] = std::norm(psi[c]);
    return gaussian_convolve(psi.lattice(), std::move(rho), eps);
}

/// Provisional eps0 = (F^{-2/D} - 1) / s^2 where s^2 = L^2 / 12 is the
/// per-axis variance of a hypercube holding the current relative volume
/// (side L = v^{1/D} cells). For a Gaussian state this is the width that
/// shrinks each axis by F^{1/D}.
inline double provisional_epsilon(const DiscreteWaveFunction& psi, const CcqmParams& params) {
    const auto& lat = psi.lattice();
    const double D = static_cast<double>(lat.axis_count());
    const double v = std::max<double>(1.0, static_cast<double>(relative_volume(psi, params.f0)));
    double log_a = 0.0;
    for (double a : lat.cell_size) log_a += std::log(a);
    const double a_mean = std::exp(log_a / D);
    const double side = std::pow(v, 1.0 / D) * a_mean;
    const double s2 = side * side / 12.0;
    return (std::pow(params.F, -2.0 / D) - 1.0) / s2;
}

/// Permutations of particle indices that only exchange identical particles
/// (identity included, first).
inline std::vector<std::vector<std::size_t>> identical_permutations(const std::vector<ParticleSpec>& particles) {
    std::map<std::string, std::vector<std::size_t>> classes;
    for (std::size_t k = 0; k < particles.size(); ++k)
        if (particles[k].identity_class) classes[*particles[k].identity_class].push_back(k);
    std::vector<std::size_t> id(particles.size());
    std::iota(id.begin(), id.end(), std::size_t{0});
    std::vector<std::vector<std::size_t>> perms{id};
    for (const auto& [name, members] : classes) {
        if (members.size() < 2) continue;
        std::vector<std::vector<std::size_t>> next;
        auto order = members;
        do {
            for (const auto& p : perms) {
                auto q = p;
                for (std::size_t i = 0; i < members.size(); ++i) q[members[i]] = p[order[i]];
                next.push_back(std::move(q));
            }
        } while (std::next_permutation(order.begin(), order.end()));
        perms = std::move(next);
    }
    return perms;
}

/// Evaluates |j(x' - x)|^2 up to a constant for every cell, for the plain or
/// symmetrized configuration-space jump factor.
class JumpProfile {
public:
    JumpProfile(const DiscreteWaveFunction& psi, std::span<const double> center, bool symmetric) {
        const auto& lat = psi.lattice();
        if (center.size() != lat.axis_count()) throw DomainError("center needs one coordinate per axis");
        const auto d = lat.dims_per_particle;
        perms_ = symmetric ? identical_permutations(psi.particles())
                           : std::vector<std::vector<std::size_t>>{[&] {
                                 std::vector<std::size_t> id(psi.particle_count());
                                 std::iota(id.begin(), id.end(), std::size_t{0});
                                 return id;
                             }()};
        const std::size_t n = psi.size();
        r2_.assign(perms_.size() * n, 0.0);
        CellIndexer ix(lat);
        for (std::size_t p = 0; p < perms_.size(); ++p)
            for (std::size_t c = 0; c < n; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < psi.particle_count(); ++k)
                    for (std::size_t a = 0; a < d; ++a) {
                        const auto ax = k * d + a;
                        const auto cx = perms_[p][k] * d + a;
                        const double dx = lat.displacement(ax, lat.coordinate(ax, ix.coord(c, ax)), center[cx]);
                        acc += dx * dx;
                    }
                r2_[p * n + c] = acc;
            }
        n_ = n;
        // Shift by the closest supported cell so narrow kernels cannot underflow
        // everywhere; the constant factor cancels on normalization.
        double shift = INFINITY;
        for (std::size_t p = 0; p < perms_.size(); ++p)
            for (std::size_t c = 0; c < n; ++c)
                if (psi[c] != cplx{}) shift = std::min(shift, r2_[p * n + c]);
        if (std::isfinite(shift))
            for (auto& r : r2_) r = std::max(0.0, r - shift);
    }

    /// Real jump amplitude at cell c, up to a constant factor.
    double amplitude(std::size_t c, double eps) const {
        double acc = 0.0;
        for (std::size_t p = 0; p < perms_.size(); ++p) acc += std::exp(-0.5 * eps * r2_[p * n_ + c]);
        return acc;
    }

private:
    std::vector<std::vector<std::size_t>> perms_;
    std::vector<double> r2_;
    std::size_t n_ = 0;
};

/// Relative volume of normalize(j psi) thresholded at f0.
inline std::size_t post_collapse_volume(const DiscreteWaveFunction& psi, const JumpProfile& jump, double eps,
                                        double f0) {
    const std::size_t n = psi.size();
    std::vector<double> w(n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        const double j = jump.amplitude(c, eps);
        w[c] = std::norm(psi[c]) * j * j;
        z += w[c];
    }
    if (!(z > 0.0)) return 0;
    const double thr = f0 * f0 * z / psi.lattice().cell_volume();
    std::size_t v = 0;
    for (double x : w)
        if (f0 > 0.0 ? x > thr : x > 0.0) ++v;
    return v;
}

struct EpsilonChoice {
    double epsilon = 0.0;
    std::size_t v_post = 0;
    std::size_t iterations = 0;
};

/// Bisects log(eps) so the post-collapse relative volume is the largest value
/// not exceeding ceil(F v_pre).
inline EpsilonChoice choose_epsilon(const DiscreteWaveFunction& psi, std::span<const double> center,
                                    const CcqmParams& params, double eps_lo = 0.0, double eps_hi = 0.0) {
    params.validate();
    const auto& lat = psi.lattice();
    const std::size_t v_pre = relative_volume(psi, params.f0);
    const auto target = static_cast<std::size_t>(std::ceil(params.F * static_cast<double>(v_pre) - 1e-9));
    const JumpProfile jump(psi, center, params.symmetric_jump && psi.particle_count() > 1);
    double a_min = INFINITY;
    for (double a : lat.cell_size) a_min = std::min(a_min, a);
    if (eps_hi <= 0.0) eps_hi = 1e4 / (a_min * a_min);
    if (eps_lo <= 0.0) eps_lo = 1e-8 * provisional_epsilon(psi, params);

    EpsilonChoice out;
    std::size_t v_lo = post_collapse_volume(psi, jump, eps_lo, params.f0);
    if (v_lo <= target) return {eps_lo, v_lo, 0};
    std::size_t v_hi = post_collapse_volume(psi, jump, eps_hi, params.f0);
    if (v_hi > target)
        throw WidthSearchFailed("no jump width reaches the target volume; widen the bracket");
    double lo = eps_lo, hi = eps_hi;
    std::size_t it = 0;
    for (; it < 64 && v_lo > v_hi + 1; ++it) {
        const double mid = std::sqrt(lo * hi);
        const std::size_t v = post_collapse_volume(psi, jump, mid, params.f0);
        if (v <= target) {
            hi = mid;
            v_hi = v;
        } else {
            lo = mid;
            v_lo = v;
        }
        if (hi / lo - 1.0 < 1e-13) break;
    }
    return {hi, v_hi, it};
}

/// Multiplies by the (optionally symmetrized) jump factor and renormalizes;
/// in discrete-physics mode also zeroes cells at or below f0 and renormalizes again.
inline DiscreteWaveFunction apply_ccqm_jump(const DiscreteWaveFunction& psi, std::span<const double> center, double eps,
                                            const CcqmParams& params) {
    const JumpProfile jump(psi, center, params.symmetric_jump && psi.particle_count() > 1);
    DiscreteWaveFunction out = psi;
    for (std::size_t c = 0; c < out.size(); ++c) out[c] *= jump.amplitude(c, eps);
    if (!(norm_squared(out) >= 1e-300)) throw DegenerateCollapse("jump factor annihilated the wave function");
    out = normalize(std::move(out));
    if (params.f0 > 0.0 && relative_volume(out, params.f0) == 0)
        throw VanishedWaveFunction("no cell above f0 after localization; configuration violates trigger safety");
    if (params.f0 > 0.0 && params.truncate_below_f0) {
        const double f02 = params.f0 * params.f0;
        for (auto& z : out.amplitudes())
            if (std::norm(z) <= f02) z = cplx{};
        out = normalize(std::move(out));
    }
    return out;
}

/// Samples a configuration-space center at the provisional width, fixes it,
/// chooses eps, and localizes.
inline std::pair<DiscreteWaveFunction, CollapseEvent> ccqm_localize(const DiscreteWaveFunction& psi,
                                                                    const CcqmParams& params, Rng& rng,
                                                                    const Hamiltonian* h = nullptr) {
    params.validate();
    const double eps0 = provisional_epsilon(psi, params);
    const auto density = ccqm_center_density(psi, eps0);
    const auto center = cell_coordinates(psi.lattice(), DiscreteSampler(density)(rng));
    const auto choice = choose_epsilon(psi, center, params);
    auto out = apply_ccqm_jump(psi, center, choice.epsilon, params);

    const Hamiltonian free_h = h ? Hamiltonian{} : make_hamiltonian(psi);
    const Hamiltonian& hh = h ? *h : free_h;
    CollapseEvent ev;
    ev.mechanism = Mechanism::ccqm_localize;
    ev.center = center;
    ev.epsilon = choice.epsilon;
    ev.v_pre = relative_volume(psi, params.f0);
    ev.v_post = relative_volume(out, params.f0);
    ev.delta_e = energy_expectation(out, hh) - energy_expectation(psi, hh);
    return {std::move(out), std::move(ev)};
}

/// Joint lattice of a subset of particles, in the listed order.
inline LatticeSpec sub_lattice(const LatticeSpec& lat, std::span<const std::size_t> subset) {
    LatticeSpec out = lat.particle_lattice(subset[0]);
    for (std::size_t i = 1; i < subset.size(); ++i) out = product_lattice(out, lat.particle_lattice(subset[i]));
    return out;
}

/// State of `part` whose density is the part's exact marginal and whose phase
/// is read off by contracting the complement against its amplitude profile at
/// the most probable configuration of `part`. Exact (up to a global phase)
/// when psi factorizes across the cut.
inline DiscreteWaveFunction marginal_part(const DiscreteWaveFunction& psi, std::span<const std::size_t> part) {
    const auto& lat = psi.lattice();
    const auto d = lat.dims_per_particle;
    std::vector<std::size_t> rest;
    for (std::size_t k = 0; k < psi.particle_count(); ++k)
        if (std::find(part.begin(), part.end(), k) == part.end()) rest.push_back(k);

    const auto part_lat = sub_lattice(lat, part);
    const auto g = subsystem_density(psi, part);
    std::vector<ParticleSpec> parts;
    for (auto k : part) parts.push_back(psi.particles()[k]);
    DiscreteWaveFunction out(part_lat, parts, psi.base_magnitude(), psi.base_phase());
    if (rest.empty()) {
        for (std::size_t s = 0; s < g.size(); ++s) out[s] = psi[s];
        return normalize(std::move(out));
    }
    const auto rest_lat = sub_lattice(lat, rest);

    // flat index of the part / rest coordinates of every configuration cell
    CellIndexer ix(lat);
    const auto ps = part_lat.strides();
    const auto rs = rest_lat.strides();
    std::vector<std::size_t> pidx(psi.size()), ridx(psi.size());
    for (std::size_t c = 0; c < psi.size(); ++c) {
        std::size_t p = 0, r = 0;
        for (std::size_t i = 0; i < part.size(); ++i)
            for (std::size_t a = 0; a < d; ++a) p += ix.coord(c, part[i] * d + a) * ps[i * d + a];
        for (std::size_t i = 0; i < rest.size(); ++i)
            for (std::size_t a = 0; a < d; ++a) r += ix.coord(c, rest[i] * d + a) * rs[i * d + a];
        pidx[c] = p;
        ridx[c] = r;
    }
    const std::size_t s_star = static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
    std::vector<cplx> ref(rest_lat.cell_count(), cplx{});
    for (std::size_t c = 0; c < psi.size(); ++c)
        if (pidx[c] == s_star) ref[ridx[c]] = psi[c];
    std::vector<cplx> overlap(part_lat.cell_count(), cplx{});
    for (std::size_t c = 0; c < psi.size(); ++c) overlap[pidx[c]] += psi[c] * std::conj(ref[ridx[c]]);
    for (std::size_t s = 0; s < g.size(); ++s) {
        const double mag = std::sqrt(g[s]);
        const double ov = std::abs(overlap[s]);
        out[s] = ov > 0.0 ? mag * overlap[s] / ov : cplx{mag, 0.0};
    }
    return normalize(std::move(out));
}

/// Candidate cuts as the particle subsets split off from the rest.
inline std::vector<std::vector<std::size_t>> candidate_cuts(std::size_t n, SplitCandidates mode) {
    std::vector<std::vector<std::size_t>> cuts;
    if (n < 2) return cuts;
    if (mode == SplitCandidates::single_vs_rest) {
        const std::size_t count = n == 2 ? 1 : n;
        for (std::size_t k = 0; k < count; ++k) cuts.push_back({k});
        return cuts;
    }
    if (n > 4) throw DomainError("full bipartition enumeration is limited to four particles");
    // subsets containing particle 0, excluding the full set
    for (std::uint32_t mask = 1; mask < (1u << n) - 1; ++mask) {
        if (!(mask & 1u)) continue;
        std::vector<std::size_t> s;
        for (std::size_t k = 0; k < n; ++k)
            if (mask & (1u << k)) s.push_back(k);
        cuts.push_back(std::move(s));
    }
    return cuts;
}

/// Interaction estimate across a cut: | sum over pair potentials straddling
/// the cut of E[V] under the two particles' marginals |. Pair specs use
/// local particle indices.
inline double cut_interaction(const DiscreteWaveFunction& psi, std::span<const std::size_t> part,
                              std::span<const PotentialSpec> pairs) {
    auto in_part = [&](std::size_t k) { return std::find(part.begin(), part.end(), k) != part.end(); };
    double total = 0.0;
    for (const auto& p : pairs) {
        if (p.kind != PotentialSpec::Kind::pair_softened_coulomb) continue;
        const auto i = p.particles[0], j = p.particles[1];
        if (in_part(i) == in_part(j)) continue;
        // V averaged over particle j's marginal, then over the joint density
        const auto v = mean_field_potential(psi, i, psi, j, p);
        const double dv = psi.lattice().cell_volume();
        double acc = 0.0;
        for (std::size_t c = 0; c < psi.size(); ++c) acc += v[c] * std::norm(psi[c]) * dv;
        total += acc;
    }
    return std::abs(total);
}

struct SplitOutcome {
    /// One entry when no split fired (the input state), otherwise the parts.
    std::vector<DiscreteWaveFunction> parts;
    /// Local particle indices of each part.
    std::vector<std::vector<std::size_t>> particle_sets;
    std::optional<CollapseEvent> event;
};

/// Tries each candidate cut in order; the first that fires (probability
/// exp(-g I)) splits psi into marginal-product parts.
template <class InteractionFn>
SplitOutcome try_split_by(const DiscreteWaveFunction& psi, const CcqmParams& params, Rng& rng,
                       InteractionFn&& interaction) {
    params.validate();
    SplitOutcome out;
    const auto n = psi.particle_count();
    for (const auto& cut : candidate_cuts(n, params.candidates)) {
        const double I = interaction(cut);
        const double p = std::exp(-params.split_coupling * I);
        if (!(uniform01(rng) < p)) continue;
        std::vector<std::size_t> rest;
        for (std::size_t k = 0; k < n; ++k)
            if (std::find(cut.begin(), cut.end(), k) == cut.end()) rest.push_back(k);
        out.parts.push_back(marginal_part(psi, cut));
        out.parts.push_back(marginal_part(psi, rest));
        out.particle_sets = {cut, rest};
        CollapseEvent ev;
        ev.mechanism = Mechanism::ccqm_split;
        ev.v_pre = relative_volume(psi, params.f0);
        ev.v_post = relative_volume(out.parts[0], params.f0) + relative_volume(out.parts[1], params.f0);
        out.event = ev;
        return out;
    }
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    out.parts.push_back(psi);
    out.particle_sets.push_back(std::move(all));
    return out;
}

inline SplitOutcome try_split(const DiscreteWaveFunction& psi, const CcqmParams& params, Rng& rng,
                              std::span<const PotentialSpec> local_pairs = {}) {
    return try_split_by(psi, params, rng,
                        [&](const std::vector<std::size_t>& cut) { return cut_interaction(psi, cut, local_pairs); });
}

/// Symmetrizes over exchanges of identical particles (bosonic sum) and
/// renormalizes. Returns psi unchanged when no identical pairs exist.
inline DiscreteWaveFunction symmetrize(const DiscreteWaveFunction& psi) {
    const auto perms = identical_permutations(psi.particles());
    if (perms.size() == 1) return psi;
    DiscreteWaveFunction out = psi;
    for (auto& z : out.amplitudes()) z = cplx{};
    for (const auto& p : perms) {
        const auto q = permute_particles(psi, p);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += q[c];
    }
    return normalize(std::move(out));
}

/// Joint state of two wave functions: plain product for distinguishable
/// particles, symmetrized product when identical classes meet.
inline DiscreteWaveFunction combine(const DiscreteWaveFunction& a, const DiscreteWaveFunction& b,
                                    std::size_t memory_budget_cells) {
    const long double cells = static_cast<long double>(a.size()) * static_cast<long double>(b.size());
    if (cells > static_cast<long double>(memory_budget_cells))
        throw CombineRefused("joint lattice exceeds the memory budget");
    bool meet = false;
    for (const auto& pa : a.particles())
        for (const auto& pb : b.particles()) meet = meet || identical(pa, pb);
    auto joint = normalize(tensor_product(a, b));
    return meet ? symmetrize(joint) : joint;
}

/// Fires with probability 1 - exp(-c I dt).
inline std::optional<DiscreteWaveFunction> try_combine(const DiscreteWaveFunction& a, const DiscreteWaveFunction& b,
                                                       const CcqmParams& params, double interaction, double dt,
                                                       Rng& rng) {
    const double p = 1.0 - std::exp(-params.combine_coupling * interaction * dt);
    if (!(uniform01(rng) < p)) return std::nullopt;
    return combine(a, b, params.memory_budget_cells);
}

}  // namespace qcollapse::ccqm
