#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "lattice.hpp"

namespace qcollapse {

using cplx = std::complex<double>;

/// Physical constants of the unit system. Defaults are natural units.
struct Units {
    double hbar = 1.0;
    double boltzmann = 1.0;
    double reference_mass = 1.0;  // m0, the nucleon mass

    double planck() const { return 2.0 * std::numbers::pi * hbar; }
};

struct ParticleSpec {
    double mass = 1.0;
    std::string label;
    /// Particles sharing a class are identical.
    std::optional<std::string> identity_class;

    void validate() const {
        if (!(mass > 0.0) || !std::isfinite(mass)) throw DomainError("particle mass must be positive: " + label);
    }

    friend bool operator==(const ParticleSpec&, const ParticleSpec&) = default;
};

inline bool identical(const ParticleSpec& a, const ParticleSpec& b) {
    return a.identity_class && b.identity_class && *a.identity_class == *b.identity_class;
}

/// Complex amplitudes on a configuration-space lattice together with the
/// base magnitude f0 (support threshold) and base phase theta0 (0 = phase
/// not quantized).
class DiscreteWaveFunction {
public:
    DiscreteWaveFunction() = default;

    DiscreteWaveFunction(LatticeSpec lattice, std::vector<ParticleSpec> particles, double f0 = 0.0,
                         double theta0 = 0.0)
        : lattice_(std::move(lattice)), particles_(std::move(particles)), f0_(f0), theta0_(theta0) {
        check();
        amps_.assign(lattice_.cell_count(), cplx{});
    }

    DiscreteWaveFunction(LatticeSpec lattice, std::vector<ParticleSpec> particles, std::vector<cplx> amps,
                         double f0 = 0.0, double theta0 = 0.0)
        : lattice_(std::move(lattice)), amps_(std::move(amps)), particles_(std::move(particles)), f0_(f0),
          theta0_(theta0) {
        check();
        if (amps_.size() != lattice_.cell_count())
            throw LatticeError("amplitude count does not match lattice cell count");
    }

    const LatticeSpec& lattice() const { return lattice_; }
    const std::vector<ParticleSpec>& particles() const { return particles_; }
    std::size_t particle_count() const { return particles_.size(); }
    std::size_t size() const { return amps_.size(); }

    std::span<const cplx> amplitudes() const { return amps_; }
    std::span<cplx> amplitudes() { return amps_; }
    const cplx& operator[](std::size_t i) const { return amps_[i]; }
    cplx& operator[](std::size_t i) { return amps_[i]; }

    double magnitude(std::size_t i) const { return std::abs(amps_[i]); }

    /// Phase in [0, 2 pi).
    double phase(std::size_t i) const {
        double t = std::arg(amps_[i]);
        return t < 0.0 ? t + 2.0 * std::numbers::pi : t;
    }

    double base_magnitude() const { return f0_; }
    double base_phase() const { return theta0_; }
    void set_base_magnitude(double f0) {
        if (!(f0 >= 0.0)) throw DomainError("base magnitude must be nonnegative");
        f0_ = f0;
    }

private:
    void check() const {
        lattice_.validate();
        if (particles_.size() != lattice_.particle_count)
            throw LatticeError("particle list does not match lattice particle count");
        for (const auto& p : particles_) p.validate();
        if (!(f0_ >= 0.0)) throw DomainError("base magnitude must be nonnegative");
        if (!(theta0_ >= 0.0)) throw DomainError("base phase must be nonnegative");
    }

    LatticeSpec lattice_;
    std::vector<cplx> amps_;
    std::vector<ParticleSpec> particles_;
    double f0_ = 0.0;
    double theta0_ = 0.0;
};

/// Cell side a_i = beta * h / p_i for each particle.
inline std::vector<double> cell_sizes_from_debroglie(std::span<const double> mean_momenta, double beta,
                                                     const Units& units = {}) {
    if (!(beta > 0.0 && beta <= 1.0)) throw DomainError("beta must lie in (0, 1]");
    std::vector<double> out;
    out.reserve(mean_momenta.size());
    for (double p : mean_momenta) {
        if (!(p > 0.0)) throw DomainError("de Broglie length diverges for nonpositive momentum");
        out.push_back(beta * units.planck() / p);
    }
    return out;
}

inline double norm_squared(const DiscreteWaveFunction& psi) {
    double s = 0.0;
    for (const auto& z : psi.amplitudes()) s += std::norm(z);
    return s * psi.lattice().cell_volume();
}

inline DiscreteWaveFunction normalize(DiscreteWaveFunction psi) {
    const double n2 = norm_squared(psi);
    if (!(n2 > 0.0) || !std::isfinite(n2)) throw VanishedWaveFunction("cannot normalize a vanished wave function");
    const double s = 1.0 / std::sqrt(n2);
    for (auto& z : psi.amplitudes()) z *= s;
    return psi;
}

namespace detail {

inline double wrap_phase(double t) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    t = std::fmod(t, two_pi);
    return t < 0.0 ? t + two_pi : t;
}

// Nearest allowed phase n * theta0 with n * theta0 < 2 pi, circular distance.
inline double nearest_phase(double t, double theta0) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double steps = std::floor(t / theta0);
    double best = 0.0;
    double best_d = std::min(t, two_pi - t);
    for (double n : {steps, steps + 1.0}) {
        const double c = n * theta0;
        if (c >= two_pi) continue;
        const double d = std::abs(t - c);
        const double dd = std::min(d, two_pi - d);
        if (dd < best_d) {
            best_d = dd;
            best = c;
        }
    }
    return best;
}

inline double floor_multiple(double f, double f0) {
    const double r = f / f0;
    double n = std::floor(r);
    if (r - n > 1.0 - 1e-9) n += 1.0;
    return n * f0;
}

}  // namespace detail

/// Maps each magnitude to floor(f / f0) * f0 and, when theta0 > 0, each
/// phase to the nearest multiple of theta0. Does not renormalize.
inline DiscreteWaveFunction quantize(DiscreteWaveFunction psi, double f0, double theta0) {
    if (!(f0 >= 0.0) || !(theta0 >= 0.0)) throw DomainError("quantization bases must be nonnegative");
    for (auto& z : psi.amplitudes()) {
        const double f = std::abs(z);
        const double fq = f0 > 0.0 ? detail::floor_multiple(f, f0) : f;
        if (fq == 0.0) {
            z = cplx{};
            continue;
        }
        const double t = detail::wrap_phase(std::arg(z));
        const double tq = theta0 > 0.0 ? detail::nearest_phase(t, theta0) : t;
        const double dt = std::abs(t - tq);
        const bool phase_ok = std::min(dt, 2.0 * std::numbers::pi - dt) <= 1e-12;
        // Cells already on the grid are left bit-identical.
        if (std::abs(f - fq) <= 1e-12 * fq && phase_ok) continue;
        z = std::polar(fq, tq);
    }
    return psi;
}

/// Number of cells with magnitude strictly above f0.
inline std::size_t relative_volume(const DiscreteWaveFunction& psi, double f0) {
    std::size_t v = 0;
    const double f02 = f0 * f0;
    for (const auto& z : psi.amplitudes())
        if (f0 > 0.0 ? std::norm(z) > f02 : z != cplx{}) ++v;
    return v;
}

/// 2^spin_half_count times the relative volume.
inline std::uint64_t state_complexity(const DiscreteWaveFunction& psi, std::size_t spin_half_count, double f0) {
    if (spin_half_count > psi.particle_count())
        throw DomainError("spin-half count exceeds particle count");
    return (std::uint64_t{1} << spin_half_count) * relative_volume(psi, f0);
}

/// Probability density over the joint position lattice of a subset of
/// particles (in the listed order). Integrates to the squared norm.
inline std::vector<double> subsystem_density(const DiscreteWaveFunction& psi, std::span<const std::size_t> keep) {
    const auto& lat = psi.lattice();
    const auto d = lat.dims_per_particle;
    std::vector<std::size_t> keep_axes;
    for (auto k : keep) {
        if (k >= psi.particle_count()) throw DomainError("particle index out of range");
        for (std::size_t j = 0; j < d; ++j) keep_axes.push_back(k * d + j);
    }
    std::size_t out_size = 1;
    std::vector<std::size_t> out_strides(keep_axes.size(), 1);
    for (std::size_t i = keep_axes.size(); i-- > 0;) {
        out_strides[i] = out_size;
        out_size *= lat.cells_per_axis[keep_axes[i]];
    }
    double kept_vol = 1.0;
    for (auto ax : keep_axes) kept_vol *= lat.cell_size[ax];
    const double weight = lat.cell_volume() / kept_vol;

    std::vector<double> g(out_size, 0.0);
    CellIndexer ix(lat);
    const auto& strides = ix.strides();
    const auto& dims = ix.dims();
    for (std::size_t c = 0; c < psi.size(); ++c) {
        std::size_t o = 0;
        for (std::size_t i = 0; i < keep_axes.size(); ++i)
            o += ((c / strides[keep_axes[i]]) % dims[keep_axes[i]]) * out_strides[i];
        g[o] += std::norm(psi[c]) * weight;
    }
    return g;
}

/// g(x_k): density of particle k over its own position lattice.
inline std::vector<double> marginal_density(const DiscreteWaveFunction& psi, std::size_t k) {
    const std::size_t keep[] = {k};
    return subsystem_density(psi, keep);
}

/// psi_a (x) psi_b on the product lattice; a's particles come first.
inline DiscreteWaveFunction tensor_product(const DiscreteWaveFunction& a, const DiscreteWaveFunction& b) {
    auto lat = product_lattice(a.lattice(), b.lattice());
    auto parts = a.particles();
    parts.insert(parts.end(), b.particles().begin(), b.particles().end());
    std::vector<cplx> amps;
    amps.reserve(a.size() * b.size());
    for (const auto& za : a.amplitudes())
        for (const auto& zb : b.amplitudes()) amps.push_back(za * zb);
    return DiscreteWaveFunction(std::move(lat), std::move(parts), std::move(amps), a.base_magnitude(),
                                a.base_phase());
}

/// Relabels particles: result(x_0, ..., x_{N-1}) = psi(y) with
/// y_{perm[k]} = x_k. Permuted particles must share a position grid.
inline DiscreteWaveFunction permute_particles(const DiscreteWaveFunction& psi, std::span<const std::size_t> perm) {
    const auto& lat = psi.lattice();
    const auto n = psi.particle_count();
    const auto d = lat.dims_per_particle;
    if (perm.size() != n) throw DomainError("permutation length must equal particle count");
    for (std::size_t k = 0; k < n; ++k)
        if (!(lat.particle_lattice(k) == lat.particle_lattice(perm[k])))
            throw LatticeError("permuted particles must share a position lattice");
    DiscreteWaveFunction out = psi;
    CellIndexer ix(lat);
    std::vector<std::size_t> idx, src(lat.axis_count());
    for (std::size_t c = 0; c < psi.size(); ++c) {
        ix.unflatten(c, idx);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < d; ++j) src[perm[k] * d + j] = idx[k * d + j];
        out[c] = psi[ix.flat(src)];
    }
    return out;
}

/// ||psi - P_ij psi|| / ||psi|| for the exchange of particles i and j.
inline double symmetry_defect(const DiscreteWaveFunction& psi, std::size_t i, std::size_t j) {
    std::vector<std::size_t> perm(psi.particle_count());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::swap(perm[i], perm[j]);
    const auto swapped = permute_particles(psi, perm);
    double num = 0.0, den = 0.0;
    for (std::size_t c = 0; c < psi.size(); ++c) {
        num += std::norm(psi[c] - swapped[c]);
        den += std::norm(psi[c]);
    }
    return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

/// Largest exchange-symmetry defect over all identical pairs (0 if none).
inline double max_symmetry_defect(const DiscreteWaveFunction& psi) {
    double worst = 0.0;
    const auto& ps = psi.particles();
    for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t j = i + 1; j < ps.size(); ++j)
            if (identical(ps[i], ps[j])) worst = std::max(worst, symmetry_defect(psi, i, j));
    return worst;
}

}  // namespace qcollapse
