#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "dynamics.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "wavefunction.hpp"

namespace qcollapse::csl {

enum class Variant { number_density, mass_density };

struct CslParams {
    double gamma = 1.0;
    double alpha = 1.0;
    Variant variant = Variant::number_density;
    double dt = 0.01;

    void validate() const {
        if (!(gamma >= 0.0)) throw DomainError("CSL gamma must be nonnegative");
        if (!(alpha > 0.0)) throw DomainError("CSL alpha must be positive");
        if (!(dt > 0.0)) throw DomainError("CSL time step must be positive");
    }
};

/// Coupling matched to a GRW rate: gamma = lambda (4 pi / alpha)^{-d/2}.
inline double gamma_from_grw(double lambda_rate, double alpha, std::size_t dims = 3) {
    return lambda_rate * std::pow(4.0 * std::numbers::pi / alpha, -0.5 * static_cast<double>(dims));
}

/// The family A_x of smeared density operators, one per site x of the common
/// position lattice. Each A_x is diagonal in the configuration basis:
///   A_x(y) = sum_k c_k (alpha / 2 pi)^{d/2} exp(-alpha/2 |y_k - x|^2)
/// with c_k = 1 (number density) or m_k / m0 (mass density).
class SmearedDensityOperators {
public:
    SmearedDensityOperators(const LatticeSpec& lat, double alpha, Variant variant,
                            const std::vector<ParticleSpec>& particles, const Units& units = {})
        : lattice_(lat), sites_(lat.particle_lattice(0)), strides_(lat.strides()), site_strides_(sites_.strides()) {
        if (!(alpha > 0.0)) throw DomainError("CSL alpha must be positive");
        if (particles.size() != lat.particle_count) throw LatticeError("particle list does not match lattice");
        for (std::size_t k = 1; k < lat.particle_count; ++k)
            if (!(lat.particle_lattice(k) == sites_))
                throw LatticeError("smeared density operators need all particles on one position lattice");
        for (const auto& p : particles)
            coeffs_.push_back(variant == Variant::mass_density ? p.mass / units.reference_mass : 1.0);

        const std::size_t s = sites_.cell_count();
        const auto d = sites_.dims_per_particle;
        const double norm = std::pow(alpha / (2.0 * std::numbers::pi), 0.5 * static_cast<double>(d));
        kernel_.assign(s * s, 0.0);
        CellIndexer ix(sites_);
        for (std::size_t x = 0; x < s; ++x)
            for (std::size_t y = 0; y < s; ++y) {
                double r2 = 0.0;
                for (std::size_t a = 0; a < d; ++a) {
                    const double dx = sites_.displacement(a, sites_.coordinate(a, ix.coord(y, a)),
                                                          sites_.coordinate(a, ix.coord(x, a)));
                    r2 += dx * dx;
                }
                kernel_[x * s + y] = norm * std::exp(-0.5 * alpha * r2);
            }
        gram_.assign(s * s, 0.0);
        for (std::size_t u = 0; u < s; ++u)
            for (std::size_t v = 0; v < s; ++v) {
                double acc = 0.0;
                for (std::size_t x = 0; x < s; ++x) acc += kernel_[x * s + u] * kernel_[x * s + v];
                gram_[u * s + v] = acc;
            }
    }

    std::size_t site_count() const { return sites_.cell_count(); }
    const LatticeSpec& site_lattice() const { return sites_; }
    const LatticeSpec& lattice() const { return lattice_; }

    /// Single-particle kernel (alpha/2pi)^{d/2} exp(-alpha/2 |site_y - site_x|^2).
    double kernel(std::size_t x, std::size_t site_y) const { return kernel_[x * site_count() + site_y]; }

    /// Site index of particle k in configuration cell c.
    std::size_t particle_site(std::size_t c, std::size_t k) const {
        const auto d = lattice_.dims_per_particle;
        std::size_t o = 0;
        for (std::size_t a = 0; a < d; ++a)
            o += ((c / strides_[k * d + a]) % lattice_.cells_per_axis[k * d + a]) * site_strides_[a];
        return o;
    }

    /// Diagonal entry of A_x at configuration cell c.
    double entry(std::size_t x, std::size_t c) const {
        double acc = 0.0;
        for (std::size_t k = 0; k < coeffs_.size(); ++k) acc += coeffs_[k] * kernel(x, particle_site(c, k));
        return acc;
    }

    /// A_x as a vector over configuration cells.
    std::vector<double> diagonal(std::size_t x) const {
        std::vector<double> out(lattice_.cell_count());
        for (std::size_t c = 0; c < out.size(); ++c) out[c] = entry(x, c);
        return out;
    }

    /// sum_x A_x(c) dB_x for every configuration cell c.
    std::vector<double> noise_exponent(std::span<const double> increments) const {
        const std::size_t s = site_count();
        std::vector<double> smoothed(s, 0.0);
        for (std::size_t x = 0; x < s; ++x)
            for (std::size_t y = 0; y < s; ++y) smoothed[y] += kernel_[x * s + y] * increments[x];
        std::vector<double> out(lattice_.cell_count(), 0.0);
        for (std::size_t c = 0; c < out.size(); ++c)
            for (std::size_t k = 0; k < coeffs_.size(); ++k) out[c] += coeffs_[k] * smoothed[particle_site(c, k)];
        return out;
    }

    /// sum_x A_x(c)^2 for every configuration cell c.
    std::vector<double> squared_sum() const {
        const std::size_t s = site_count();
        std::vector<double> out(lattice_.cell_count(), 0.0);
        std::vector<std::size_t> site(coeffs_.size());
        for (std::size_t c = 0; c < out.size(); ++c) {
            for (std::size_t k = 0; k < coeffs_.size(); ++k) site[k] = particle_site(c, k);
            double acc = 0.0;
            for (std::size_t k = 0; k < coeffs_.size(); ++k)
                for (std::size_t l = 0; l < coeffs_.size(); ++l)
                    acc += coeffs_[k] * coeffs_[l] * gram_[site[k] * s + site[l]];
            out[c] = acc;
        }
        return out;
    }

    /// Vector (A_x(c))_x for one configuration cell.
    std::vector<double> column(std::size_t c) const {
        std::vector<double> out(site_count());
        for (std::size_t x = 0; x < out.size(); ++x) out[x] = entry(x, c);
        return out;
    }

private:
    LatticeSpec lattice_;
    LatticeSpec sites_;
    std::vector<std::size_t> strides_;
    std::vector<std::size_t> site_strides_;
    std::vector<double> coeffs_;
    std::vector<double> kernel_;
    std::vector<double> gram_;
};

inline SmearedDensityOperators smeared_density_operators(const LatticeSpec& lat, double alpha, Variant variant,
                                                         const std::vector<ParticleSpec>& particles,
                                                         const Units& units = {}) {
    return SmearedDensityOperators(lat, alpha, variant, particles, units);
}

/// Raw white-noise increments dB_x ~ N(0, gamma dt).
inline std::vector<double> sample_raw_increments(const SmearedDensityOperators& ops, const CslParams& params, Rng& rng) {
    std::vector<double> db(ops.site_count());
    const double sd = std::sqrt(params.gamma * params.dt);
    for (auto& v : db) v = sd * standard_normal(rng);
    return db;
}

/// Increments drawn from the cooked law P_raw ||psi_w||^2 for one step. For
/// diagonal A_x the cooked density is a mixture over configuration cells c
/// (weight |psi(c)|^2 dV) of Gaussians N(2 gamma dt A_x(c), gamma dt).
inline std::vector<double> sample_cooked_increments(const DiscreteWaveFunction& psi, const SmearedDensityOperators& ops,
                                                    const CslParams& params, Rng& rng) {
    std::vector<double> w(psi.size());
    for (std::size_t c = 0; c < w.size(); ++c) w[c] = std::norm(psi[c]);
    const std::size_t cell = DiscreteSampler(w)(rng);
    auto db = sample_raw_increments(ops, params, rng);
    const auto mean = ops.column(cell);
    for (std::size_t x = 0; x < db.size(); ++x) db[x] += 2.0 * params.gamma * params.dt * mean[x];
    return db;
}

/// Applies one step with given increments: unitary Cayley step under `h`
/// (skipped when null, i.e. H = 0), then the exact diagonal factor
/// exp(sum_x A_x dB_x - gamma dt sum_x A_x^2). Returns the unnormalized state.
inline DiscreteWaveFunction apply_increments(const DiscreteWaveFunction& psi, const Hamiltonian* h,
                                             const CslParams& params, const SmearedDensityOperators& ops,
                                             std::span<const double> increments) {
    DiscreteWaveFunction out = h ? step_unitary(psi, *h, params.dt) : psi;
    if (params.gamma == 0.0) return out;
    const auto expo = ops.noise_exponent(increments);
    const auto sq = ops.squared_sum();
    for (std::size_t c = 0; c < out.size(); ++c) out[c] *= std::exp(expo[c] - params.gamma * params.dt * sq[c]);
    return out;
}

inline DiscreteWaveFunction normalize_checked(DiscreteWaveFunction psi) {
    const double n2 = norm_squared(psi);
    if (!(n2 >= 1e-12) || !std::isfinite(n2))
        throw NumericalError("CSL step collapsed the norm; reduce the step size");
    return normalize(std::move(psi));
}

/// One stochastic step under the cooked law, returning the normalized state.
inline DiscreteWaveFunction csl_step(const DiscreteWaveFunction& psi, const Hamiltonian* h, const CslParams& params,
                                     const SmearedDensityOperators& ops, Rng& rng,
                                     std::vector<double>* increments_out = nullptr) {
    params.validate();
    auto db = params.gamma > 0.0 ? sample_cooked_increments(psi, ops, params, rng)
                                 : std::vector<double>(ops.site_count(), 0.0);
    auto out = normalize_checked(apply_increments(psi, h, params, ops, db));
    if (increments_out) *increments_out = std::move(db);
    return out;
}

/// One step of the linear equation under raw noise; the norm is kept so the
/// martingale E ||psi||^2 = const can be observed.
inline DiscreteWaveFunction csl_step_raw(const DiscreteWaveFunction& psi, const Hamiltonian* h, const CslParams& params,
                                         const SmearedDensityOperators& ops, Rng& rng) {
    params.validate();
    const auto db = sample_raw_increments(ops, params, rng);
    return apply_increments(psi, h, params, ops, db);
}

/// sum_x Var_psi(A_x) for a single state.
inline double summed_variance(const DiscreteWaveFunction& psi, const SmearedDensityOperators& ops) {
    const double n2 = norm_squared(psi);
    const double dv = psi.lattice().cell_volume();
    const auto sq = ops.squared_sum();
    double second = 0.0;
    std::vector<double> mean(ops.site_count(), 0.0);
    for (std::size_t c = 0; c < psi.size(); ++c) {
        const double p = std::norm(psi[c]) * dv / n2;
        if (p == 0.0) continue;
        second += p * sq[c];
        for (std::size_t x = 0; x < mean.size(); ++x) mean[x] += p * ops.entry(x, c);
    }
    double first = 0.0;
    for (double m : mean) first += m * m;
    return std::max(0.0, second - first);
}

/// Summed eigenvalue variance along a recorded trajectory.
inline std::vector<double> csl_variance_track(std::span<const DiscreteWaveFunction> trajectory,
                                              const SmearedDensityOperators& ops) {
    std::vector<double> out;
    out.reserve(trajectory.size());
    for (const auto& psi : trajectory) out.push_back(summed_variance(psi, ops));
    return out;
}

}  // namespace qcollapse::csl
