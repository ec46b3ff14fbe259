#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dynamics.hpp"
#include "errors.hpp"
#include "registry.hpp"
#include "wavefunction.hpp"

namespace qcollapse::feynman {

enum class Growth { linear, polynomial, exponential };

inline const char* to_string(Growth g) {
    switch (g) {
        case Growth::linear: return "linear";
        case Growth::polynomial: return "polynomial";
        case Growth::exponential: return "exponential";
    }
    return "unknown";
}

enum class ScalingMode { single_wavefunction, ccqm_registry };

/// Exact multiply-add groups of one explicit-stencil step.
inline std::uint64_t measure_step_cost(const DiscreteWaveFunction& psi, const Hamiltonian& h,
                                       StepScheme scheme = StepScheme::explicit_stencil) {
    if (scheme != StepScheme::explicit_stencil)
        throw NotMeasurable("implicit steps are not instrumented; use the predicted cost");
    OpCounter counter;
    (void)step_explicit(psi, h, 1e-3, &counter);
    return counter.multiply_adds;
}

/// Closed-form stencil count: each active cell costs one diagonal group plus
/// one per existing neighbour (2 per axis on a periodic lattice).
inline std::uint64_t stencil_cost_formula(const DiscreteWaveFunction& psi) {
    const auto& lat = psi.lattice();
    const bool periodic = lat.boundary == Boundary::periodic;
    const double f02 = psi.base_magnitude() * psi.base_magnitude();
    CellIndexer ix(lat);
    std::uint64_t ops = 0;
    for (std::size_t c = 0; c < psi.size(); ++c) {
        const bool active = psi.base_magnitude() > 0.0 ? std::norm(psi[c]) > f02 : psi[c] != cplx{};
        if (!active) continue;
        if (periodic) {
            ops += 2 * lat.axis_count() + 1;
            continue;
        }
        ops += 1;
        for (std::size_t ax = 0; ax < lat.axis_count(); ++ax) {
            const auto i = ix.coord(c, ax);
            ops += (i > 0) + (i + 1 < lat.cells_per_axis[ax]);
        }
    }
    return ops;
}

/// Spin and potential-matrix factors are counted, not executed.
inline double spin_state_factor(std::size_t spin_half_count) { return std::ldexp(1.0, static_cast<int>(spin_half_count)); }
inline double spin_potential_factor(std::size_t spin_half_count) {
    return std::ldexp(1.0, 2 * static_cast<int>(spin_half_count));
}

struct CostReport {
    std::size_t particle_count = 0;
    std::size_t wave_function_count = 0;
    std::uint64_t memory_cells = 0;
    std::uint64_t max_memory_cells = 0;
    std::uint64_t ops_measured = 0;
    double ops_predicted = 0.0;
    Growth classification = Growth::linear;
};

struct Fit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

inline Fit least_squares(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("fit needs at least two points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
        syy += y[i] * y[i];
    }
    const double vx = sxx - sx * sx / n, vy = syy - sy * sy / n, cxy = sxy - sx * sy / n;
    if (!(vx > 0.0)) throw DomainError("fit needs at least two distinct abscissae");
    Fit f;
    f.slope = cxy / vx;
    f.intercept = (sy - f.slope * sx) / n;
    f.r2 = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;
    return f;
}

struct GrowthFit {
    /// d ln(memory) / d ln(N).
    double exponent = 0.0;
    /// exp(d ln(memory) / dN): per-particle geometric ratio.
    double ratio = 0.0;
    Growth classification = Growth::linear;
};

/// Exponential when the per-particle ratio is at least 2 and the
/// log-linear fit beats the log-log fit; linear when the log-log exponent
/// is at most 1.2; polynomial otherwise.
inline GrowthFit classify_growth(std::span<const double> N, std::span<const double> values) {
    std::vector<double> ln_n, ln_v;
    for (std::size_t i = 0; i < N.size(); ++i) {
        if (!(values[i] > 0.0)) throw DomainError("growth fit needs positive values");
        ln_n.push_back(std::log(N[i]));
        ln_v.push_back(std::log(values[i]));
    }
    const auto power = least_squares(ln_n, ln_v);
    const auto expo = least_squares(N, ln_v);
    GrowthFit g;
    g.exponent = power.slope;
    g.ratio = std::exp(expo.slope);
    if (g.ratio >= 2.0 && expo.r2 >= power.r2) g.classification = Growth::exponential;
    else if (g.exponent <= 1.2) g.classification = Growth::linear;
    else g.classification = Growth::polynomial;
    return g;
}

struct ScalingStudy {
    ScalingMode mode = ScalingMode::single_wavefunction;
    std::vector<CostReport> reports;
    GrowthFit memory_fit;
    GrowthFit ops_fit;
    /// k in the N (k v)^N dynamic-complexity form, fitted over all points.
    double order_constant = 0.0;
};

/// Cost of the wave functions that make up one system of N particles.
inline CostReport cost_report(std::size_t N, std::span<const DiscreteWaveFunction> wfs, double f0) {
    CostReport r;
    r.particle_count = N;
    r.wave_function_count = wfs.size();
    for (const auto& psi : wfs) {
        const auto mem = state_complexity(psi, 0, f0);
        r.memory_cells += mem;
        r.max_memory_cells = std::max<std::uint64_t>(r.max_memory_cells, mem);
        auto q = psi;
        q.set_base_magnitude(f0);
        r.ops_measured += measure_step_cost(q, make_hamiltonian(q));
    }
    return r;
}

/// Runs `family(N)` for each N (it returns the wave functions present when
/// the system is measured), then fits growth and the order constant k.
template <class Family>
ScalingStudy scaling_study(std::span<const std::size_t> Ns, ScalingMode mode, Family&& family, double f0 = 0.0) {
    if (Ns.size() < 2) throw DomainError("scaling study needs at least two particle counts");
    ScalingStudy s;
    s.mode = mode;
    std::vector<double> n, mem, ops;
    std::vector<std::vector<DiscreteWaveFunction>> systems;
    for (auto N : Ns) {
        systems.push_back(family(N));
        s.reports.push_back(cost_report(N, systems.back(), f0));
        n.push_back(static_cast<double>(N));
        mem.push_back(static_cast<double>(s.reports.back().memory_cells));
        ops.push_back(static_cast<double>(s.reports.back().ops_measured));
    }
    s.memory_fit = classify_growth(n, mem);
    s.ops_fit = classify_growth(n, ops);

    // Prediction sum_w N_w (k v_w)^{N_w} with v_w the per-particle volume
    // V_w^{1/N_w}; k minimizes the squared log residual (golden section).
    auto predict = [&](std::size_t i, double k) {
        double pred = 0.0;
        for (const auto& psi : systems[i]) {
            const double Nw = static_cast<double>(psi.particle_count());
            const double V = static_cast<double>(std::max<std::size_t>(1, relative_volume(psi, f0)));
            pred += Nw * std::pow(k, Nw) * V;
        }
        return pred;
    };
    auto loss = [&](double lk) {
        double acc = 0.0;
        for (std::size_t i = 0; i < systems.size(); ++i) {
            const double r = std::log(ops[i]) - std::log(predict(i, std::exp(lk)));
            acc += r * r;
        }
        return acc;
    };
    double lo = -10.0, hi = 10.0;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 200; ++it) {
        const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
        if (loss(a) < loss(b)) hi = b;
        else lo = a;
    }
    s.order_constant = std::exp(0.5 * (lo + hi));
    for (std::size_t i = 0; i < systems.size(); ++i) {
        s.reports[i].ops_predicted = predict(i, s.order_constant);
        s.reports[i].classification = s.memory_fit.classification;
    }
    return s;
}

/// N-fold product of identical 1D top-hat states with `support` nonzero
/// cells each, on `cells` cells per axis.
inline DiscreteWaveFunction top_hat_product(std::size_t N, std::size_t support, std::size_t cells) {
    if (support == 0 || support > cells) throw DomainError("support must fit the lattice");
    const auto lat1 = uniform_lattice(1, 1, cells, 1.0);
    DiscreteWaveFunction one(lat1, {ParticleSpec{1.0, "p0", std::nullopt}});
    const std::size_t start = (cells - support) / 2;
    for (std::size_t i = 0; i < support; ++i) one[start + i] = cplx{1.0, 0.0};
    one = normalize(std::move(one));
    DiscreteWaveFunction out = one;
    for (std::size_t k = 1; k < N; ++k) {
        DiscreteWaveFunction next(lat1, {ParticleSpec{1.0, "p" + std::to_string(k), std::nullopt}});
        for (std::size_t i = 0; i < cells; ++i) next[i] = one[i];
        out = tensor_product(out, next);
    }
    return out;
}

struct RegistryFamily {
    std::size_t cells = 64;
    double sigma0 = 2.0;
    double coupling = 1e-3;
    double softening = 2.0;
    double dt = 1.0;
    std::size_t ticks = 40;
    std::uint64_t seed = 1;
    TickParams params;
};

/// N particles on separate 1D rings, neighbours coupled by a weak pair
/// potential, evolved under CCQM; returns the final wave functions.
inline std::vector<DiscreteWaveFunction> run_registry_family(std::size_t N, const RegistryFamily& fam) {
    std::vector<ParticleSpec> parts;
    for (std::size_t k = 0; k < N; ++k) parts.push_back({1.0, "p" + std::to_string(k), std::nullopt});
    std::vector<PotentialSpec> pots;
    for (std::size_t k = 0; k + 1 < N; ++k) {
        PotentialSpec p;
        p.kind = PotentialSpec::Kind::pair_softened_coulomb;
        p.particles = {k, k + 1};
        p.coupling = fam.coupling;
        p.softening = fam.softening;
        pots.push_back(p);
    }
    WaveFunctionRegistry reg(parts, pots);
    const auto lat = uniform_lattice(1, 1, fam.cells, 1.0);
    for (std::size_t k = 0; k < N; ++k) {
        const double center[] = {static_cast<double>(fam.cells) / 2.0};
        const double mom[] = {0.0};
        reg.add(gaussian_packet(lat, {parts[k]}, center, mom, fam.sigma0, fam.params.ccqm.f0), {k});
    }
    Rng rng(derive_seed(fam.seed, N));
    for (std::size_t t = 0; t < fam.ticks; ++t) registry_tick(reg, fam.params, fam.dt, rng);
    std::vector<DiscreteWaveFunction> out;
    for (const auto& [id, m] : reg.members()) out.push_back(m.psi);
    return out;
}

}  // namespace qcollapse::feynman
