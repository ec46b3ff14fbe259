#pragma once

#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "dynamics.hpp"
#include "errors.hpp"
#include "kernels.hpp"
#include "rng.hpp"
#include "wavefunction.hpp"

namespace qcollapse::grw {

/// GRW constants. The physical defaults (lambda = 1e-16 / s, 1/sqrt(alpha) =
/// 1e-5 cm) are config-level values; desk-scale runs override them.
struct GrwParams {
    double alpha = 1e10;  // cm^-2
    double lambda_rate = 1e-16;  // s^-1 per particle
    bool mass_proportional = false;

    void validate() const {
        if (!(alpha > 0.0)) throw DomainError("GRW alpha must be positive");
        if (!(lambda_rate > 0.0)) throw DomainError("GRW rate must be positive");
    }

    /// lambda_m = (m / m0) lambda when mass-proportional.
    double rate_for(const ParticleSpec& p, const Units& units = {}) const {
        return mass_proportional ? p.mass / units.reference_mass * lambda_rate : lambda_rate;
    }
};

struct Hit {
    double wait_time = 0.0;
    std::size_t particle = 0;
};

/// Mean waiting time between hits for n particles at a common rate.
inline double mean_wait_time(double particle_count, double lambda_rate) { return 1.0 / (particle_count * lambda_rate); }

inline std::vector<double> particle_rates(const DiscreteWaveFunction& psi, const GrwParams& params,
                                          const Units& units = {}) {
    std::vector<double> rates;
    for (const auto& p : psi.particles()) rates.push_back(params.rate_for(p, units));
    return rates;
}

/// Next hit: exponential wait at the total rate, particle chosen in
/// proportion to its own rate.
inline Hit sample_hit(const DiscreteWaveFunction& psi, const GrwParams& params, Rng& rng, const Units& units = {}) {
    params.validate();
    if (psi.particle_count() == 0) throw DomainError("GRW hit needs at least one particle");
    const auto rates = particle_rates(psi, params, units);
    const double total = std::accumulate(rates.begin(), rates.end(), 0.0);
    Hit h;
    h.wait_time = exponential(rng, total);
    h.particle = DiscreteSampler(rates)(rng);
    return h;
}

/// P_k(x) = || j(x - x_k) psi ||^2 over particle k's position lattice,
/// computed as the marginal of particle k convolved with j^2.
inline std::vector<double> collapse_center_density(const DiscreteWaveFunction& psi, std::size_t k, double alpha) {
    if (!(alpha > 0.0)) throw DomainError("GRW alpha must be positive");
    const auto lat = psi.lattice().particle_lattice(k);
    return gaussian_convolve(lat, marginal_density(psi, k), alpha);
}

/// Samples a center cell from a center density (cells of the given lattice).
inline std::vector<double> sample_center(const LatticeSpec& lat, std::span<const double> density, Rng& rng) {
    std::vector<double> w(density.begin(), density.end());
    return cell_coordinates(lat, DiscreteSampler(w)(rng));
}

/// psi' = j(x' - x_k) psi / ||.||, with the event recording volumes and the
/// energy change under `h` (free kinetic Hamiltonian when null).
inline std::pair<DiscreteWaveFunction, CollapseEvent> grw_hit(const DiscreteWaveFunction& psi, std::size_t k,
                                                              std::span<const double> center, double alpha,
                                                              const Hamiltonian* h = nullptr) {
    if (!(alpha > 0.0)) throw DomainError("GRW alpha must be positive");
    const auto& lat = psi.lattice();
    const auto d = lat.dims_per_particle;
    if (k >= psi.particle_count()) throw DomainError("hit particle index out of range");
    if (center.size() != d) throw DomainError("hit center needs one coordinate per dimension");
    std::vector<std::size_t> axes(d);
    std::iota(axes.begin(), axes.end(), k * d);

    DiscreteWaveFunction out = psi;
    apply_gaussian_jump(out, axes, center, alpha);
    const double n2 = norm_squared(out);
    if (!(n2 >= 1e-300)) throw DegenerateCollapse("GRW hit centred where the wave function vanishes");
    out = normalize(std::move(out));

    const Hamiltonian free_h = h ? Hamiltonian{} : make_hamiltonian(psi);
    const Hamiltonian& hh = h ? *h : free_h;
    CollapseEvent ev;
    ev.mechanism = Mechanism::grw_hit;
    ev.center.assign(center.begin(), center.end());
    ev.epsilon = alpha;
    ev.v_pre = relative_volume(psi, psi.base_magnitude());
    ev.v_post = relative_volume(out, psi.base_magnitude());
    ev.delta_e = energy_expectation(out, hh) - energy_expectation(psi, hh);
    return {std::move(out), std::move(ev)};
}

/// Samples a center for particle k from the exact density and applies the hit.
inline std::pair<DiscreteWaveFunction, CollapseEvent> sample_and_hit(const DiscreteWaveFunction& psi, std::size_t k,
                                                                     const GrwParams& params, Rng& rng,
                                                                     const Hamiltonian* h = nullptr) {
    const auto density = collapse_center_density(psi, k, params.alpha);
    const auto center = sample_center(psi.lattice().particle_lattice(k), density, rng);
    return grw_hit(psi, k, center, params.alpha, h);
}

}  // namespace qcollapse::grw
