#pragma once

#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <iostream>
#include <span>
#include <sstream>
#include <vector>

#include "errors.hpp"
#include "lattice.hpp"
#include "wavefunction.hpp"

namespace qcollapse {

/// Lattice Hamiltonian: second-difference kinetic term per axis plus a local
/// potential. kinetic[ax] = hbar^2 / (2 m a^2) for the particle owning ax.
struct Hamiltonian {
    std::vector<double> kinetic;
    std::vector<double> potential;
    double hbar = 1.0;

    void validate(const LatticeSpec& lat) const {
        if (kinetic.size() != lat.axis_count()) throw DomainError("kinetic coefficient count must equal axis count");
        for (double k : kinetic)
            if (!(k > 0.0) || !std::isfinite(k)) throw DomainError("kinetic coefficients must be positive");
        if (potential.size() != lat.cell_count()) throw DomainError("potential must have one value per cell");
        for (double v : potential)
            if (!std::isfinite(v)) throw DomainError("potential values must be finite");
    }
};

inline Hamiltonian make_hamiltonian(const DiscreteWaveFunction& psi, std::vector<double> potential = {},
                                    const Units& units = {}) {
    const auto& lat = psi.lattice();
    Hamiltonian h;
    h.hbar = units.hbar;
    for (std::size_t ax = 0; ax < lat.axis_count(); ++ax) {
        const double m = psi.particles()[ax / lat.dims_per_particle].mass;
        const double a = lat.cell_size[ax];
        h.kinetic.push_back(units.hbar * units.hbar / (2.0 * m * a * a));
    }
    h.potential = potential.empty() ? std::vector<double>(lat.cell_count(), 0.0) : std::move(potential);
    h.validate(lat);
    return h;
}

struct PotentialSpec {
    enum class Kind { free, box, harmonic, pair_softened_coulomb, mean_field };

    Kind kind = Kind::free;
    /// One particle for external kinds, two for pair kinds (scenario-global ids).
    std::vector<std::size_t> particles;
    double omega = 0.0;
    std::vector<double> center;
    /// Box: zero inside [lo, hi] on every axis of the particle, `height` outside.
    std::vector<double> lo, hi;
    double height = 0.0;
    /// Softened pair interaction coupling / sqrt(r^2 + s^2).
    double coupling = 0.0;
    double softening = 1.0;
    std::size_t source_wave_function = 0;

    void validate() const {
        switch (kind) {
            case Kind::pair_softened_coulomb:
                if (particles.size() != 2 || particles[0] == particles[1])
                    throw DomainError("pair potential needs two distinct particles");
                if (!(softening > 0.0)) throw DomainError("softened pair potential needs softening length > 0");
                break;
            case Kind::harmonic:
                if (particles.size() != 1) throw DomainError("harmonic potential acts on one particle");
                if (!(omega > 0.0)) throw DomainError("harmonic frequency must be positive");
                break;
            case Kind::box:
                if (particles.size() != 1) throw DomainError("box potential acts on one particle");
                if (lo.size() != hi.size()) throw DomainError("box bounds must have matching lengths");
                break;
            default:
                break;
        }
    }

    double pair_value(double r) const { return coupling / std::sqrt(r * r + softening * softening); }
};

/// V(x_k) evaluated on the joint lattice for a function of particle k's
/// position.
template <class Fn>
std::vector<double> single_particle_potential(const LatticeSpec& lat, std::size_t k, Fn&& fn) {
    const auto d = lat.dims_per_particle;
    std::vector<double> out(lat.cell_count());
    CellIndexer ix(lat);
    std::vector<double> x(d);
    for (std::size_t c = 0; c < out.size(); ++c) {
        for (std::size_t j = 0; j < d; ++j) x[j] = lat.coordinate(k * d + j, ix.coord(c, k * d + j));
        out[c] = fn(std::span<const double>(x));
    }
    return out;
}

inline std::vector<double> harmonic_potential(const LatticeSpec& lat, std::size_t k, double mass, double omega,
                                              std::span<const double> center) {
    const auto d = lat.dims_per_particle;
    if (center.size() != d) throw DomainError("harmonic center needs one coordinate per dimension");
    return single_particle_potential(lat, k, [&](std::span<const double> x) {
        double r2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dx = lat.displacement(k * d + j, x[j], center[j]);
            r2 += dx * dx;
        }
        return 0.5 * mass * omega * omega * r2;
    });
}

inline std::vector<double> box_potential(const LatticeSpec& lat, std::size_t k, std::span<const double> lo,
                                         std::span<const double> hi, double height) {
    const auto d = lat.dims_per_particle;
    if (lo.size() != d || hi.size() != d) throw DomainError("box bounds need one value per dimension");
    return single_particle_potential(lat, k, [&](std::span<const double> x) {
        for (std::size_t j = 0; j < d; ++j)
            if (x[j] < lo[j] || x[j] > hi[j]) return height;
        return 0.0;
    });
}

/// Distance between particle i and particle j positions on one lattice.
inline double pair_distance(const LatticeSpec& lat, std::size_t i, std::size_t j, const CellIndexer& ix,
                            std::size_t cell) {
    const auto d = lat.dims_per_particle;
    double r2 = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        const double xi = lat.coordinate(i * d + a, ix.coord(cell, i * d + a));
        const double xj = lat.coordinate(j * d + a, ix.coord(cell, j * d + a));
        const double dx = lat.displacement(i * d + a, xi, xj);
        r2 += dx * dx;
    }
    return std::sqrt(r2);
}

/// Pair interaction between particles i and j of the same wave function.
inline std::vector<double> pair_potential(const LatticeSpec& lat, std::size_t i, std::size_t j,
                                          const PotentialSpec& spec) {
    spec.validate();
    std::vector<double> out(lat.cell_count());
    CellIndexer ix(lat);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = spec.pair_value(pair_distance(lat, i, j, ix, c));
    return out;
}

namespace detail {

// Visits every line along `axis`: fn(base, stride, n).
template <class Fn>
void for_each_line(const LatticeSpec& lat, const std::vector<std::size_t>& strides, std::size_t axis, Fn&& fn) {
    const std::size_t n = lat.cells_per_axis[axis];
    const std::size_t s = strides[axis];
    const std::size_t total = lat.cell_count();
    for (std::size_t block = 0; block < total; block += n * s)
        for (std::size_t inner = 0; inner < s; ++inner) fn(block + inner, s, n);
}

}  // namespace detail

/// out = H in.
inline void apply_hamiltonian(const Hamiltonian& h, const LatticeSpec& lat, std::span<const cplx> in,
                              std::span<cplx> out) {
    const auto strides = lat.strides();
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = h.potential[c] * in[c];
    const bool periodic = lat.boundary == Boundary::periodic;
    for (std::size_t ax = 0; ax < lat.axis_count(); ++ax) {
        const double k = h.kinetic[ax];
        detail::for_each_line(lat, strides, ax, [&](std::size_t base, std::size_t s, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t c = base + i * s;
                cplx lap = 2.0 * in[c];
                if (i + 1 < n) lap -= in[c + s];
                else if (periodic) lap -= in[base];
                if (i > 0) lap -= in[c - s];
                else if (periodic) lap -= in[base + (n - 1) * s];
                out[c] += k * lap;
            }
        });
    }
}

/// <psi|H|psi> / <psi|psi> including any imaginary residue.
inline cplx energy_expectation_complex(const DiscreteWaveFunction& psi, const Hamiltonian& h) {
    std::vector<cplx> hpsi(psi.size());
    apply_hamiltonian(h, psi.lattice(), psi.amplitudes(), hpsi);
    cplx num{};
    double den = 0.0;
    for (std::size_t c = 0; c < psi.size(); ++c) {
        num += std::conj(psi[c]) * hpsi[c];
        den += std::norm(psi[c]);
    }
    if (!(den > 0.0)) throw VanishedWaveFunction("energy of a vanished wave function");
    return num / den;
}

inline double energy_expectation(const DiscreteWaveFunction& psi, const Hamiltonian& h) {
    const cplx e = energy_expectation_complex(psi, h);
    if (std::abs(e.imag()) > 1e-10 * std::max(1.0, std::abs(e.real())))
        throw NumericalError("energy expectation has an imaginary residue");
    return e.real();
}

/// Normalized Gaussian product packet with mean momentum encoded as a phase
/// gradient. `sigma` is the position standard deviation of |psi|^2 per axis.
inline DiscreteWaveFunction gaussian_packet(const LatticeSpec& lat, std::vector<ParticleSpec> particles,
                                            std::span<const double> center, std::span<const double> momentum,
                                            std::span<const double> sigma, double f0 = 0.0,
                                            const Units& units = {}) {
    const auto axes = lat.axis_count();
    if (center.size() != axes || momentum.size() != axes || sigma.size() != axes)
        throw DomainError("packet center, momentum and sigma need one entry per axis");
    for (std::size_t ax = 0; ax < axes; ++ax)
        if (!(sigma[ax] >= 2.0 * lat.cell_size[ax]))
            throw ResolutionError("packet width must be at least two cells on every axis");
    DiscreteWaveFunction psi(lat, std::move(particles), f0);
    std::vector<std::vector<cplx>> factors(axes);
    for (std::size_t ax = 0; ax < axes; ++ax) {
        factors[ax].resize(lat.cells_per_axis[ax]);
        for (std::size_t i = 0; i < factors[ax].size(); ++i) {
            const double dx = lat.displacement(ax, lat.coordinate(ax, i), center[ax]);
            factors[ax][i] = std::exp(cplx{-dx * dx / (4.0 * sigma[ax] * sigma[ax]), momentum[ax] * dx / units.hbar});
        }
    }
    CellIndexer ix(lat);
    for (std::size_t c = 0; c < psi.size(); ++c) {
        cplx z{1.0, 0.0};
        for (std::size_t ax = 0; ax < axes; ++ax) z *= factors[ax][ix.coord(c, ax)];
        psi[c] = z;
    }
    return normalize(std::move(psi));
}

inline DiscreteWaveFunction gaussian_packet(const LatticeSpec& lat, std::vector<ParticleSpec> particles,
                                            std::span<const double> center, std::span<const double> momentum,
                                            double sigma, double f0 = 0.0, const Units& units = {}) {
    std::vector<double> s(lat.axis_count(), sigma);
    return gaussian_packet(lat, std::move(particles), center, momentum, s, f0, units);
}

enum class StepScheme { implicit_cayley, explicit_stencil };

struct StepOptions {
    StepScheme scheme = StepScheme::implicit_cayley;
    double tolerance = 1e-13;
    std::size_t max_iterations = 2000;
};

/// Counts complex multiply-add groups issued by instrumented kernels.
struct OpCounter {
    std::uint64_t multiply_adds = 0;
};

/// Largest step that keeps the explicit stencil well inside its stability
/// region: a_min^2 m_min / hbar.
inline double cfl_bound(const DiscreteWaveFunction& psi, const Units& units = {}) {
    double a2 = INFINITY, m = INFINITY;
    for (double a : psi.lattice().cell_size) a2 = std::min(a2, a * a);
    for (const auto& p : psi.particles()) m = std::min(m, p.mass);
    return a2 * m / units.hbar;
}

namespace detail {

// Solves (1 + i tau H) x = rhs along a single line with direct elimination.
// Periodic lines use the Sherman-Morrison correction.
inline void solve_cayley_line(const Hamiltonian& h, std::size_t axis, std::size_t base, std::size_t stride,
                              std::size_t n, bool periodic, double tau, std::span<const cplx> rhs,
                              std::span<cplx> x) {
    const cplx itau{0.0, tau};
    const double k = h.kinetic[axis];
    std::vector<cplx> diag(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        diag[i] = 1.0 + itau * (2.0 * k + h.potential[base + i * stride]);
        b[i] = rhs[base + i * stride];
    }
    const cplx off = -itau * k;

    auto thomas = [&](std::vector<cplx> d, std::vector<cplx> r) {
        // constant off-diagonals
        std::vector<cplx> c(n);
        c[0] = off / d[0];
        r[0] /= d[0];
        for (std::size_t i = 1; i < n; ++i) {
            const cplx m = d[i] - off * c[i - 1];
            c[i] = off / m;
            r[i] = (r[i] - off * r[i - 1]) / m;
        }
        for (std::size_t i = n - 1; i-- > 0;) r[i] -= c[i] * r[i + 1];
        return r;
    };

    std::vector<cplx> sol;
    if (n == 2) {
        const cplx o = periodic ? 2.0 * off : off;
        const cplx det = diag[0] * diag[1] - o * o;
        sol = {(b[0] * diag[1] - o * b[1]) / det, (diag[0] * b[1] - o * b[0]) / det};
    } else if (!periodic) {
        sol = thomas(diag, b);
    } else {
        // A = T + u v^T with u = (gamma, 0, ..., off), v = (1, 0, ..., off / gamma)
        const cplx gamma = -diag[0];
        auto t = diag;
        t[0] -= gamma;
        t[n - 1] -= off * off / gamma;
        const auto y = thomas(t, b);
        std::vector<cplx> u(n, cplx{});
        u[0] = gamma;
        u[n - 1] = off;
        const auto z = thomas(t, u);
        const cplx vy = y[0] + off / gamma * y[n - 1];
        const cplx vz = z[0] + off / gamma * z[n - 1];
        const cplx f = vy / (1.0 + vz);
        sol.resize(n);
        for (std::size_t i = 0; i < n; ++i) sol[i] = y[i] - f * z[i];
    }
    for (std::size_t i = 0; i < n; ++i) x[base + i * stride] = sol[i];
}

inline void warn_cfl_once(double dt, double bound) {
    static std::atomic<bool> warned{false};
    if (std::abs(dt) > bound && !warned.exchange(true))
        std::clog << "qcollapse: time step " << dt << " exceeds a^2 m / hbar = " << bound << "\n";
}

}  // namespace detail

/// Explicit forward stencil psi - i dt H psi / hbar, sourced only from cells
/// above the base magnitude (all nonzero cells when f0 = 0). Not unitary;
/// used for locality checks and operation counting.
inline DiscreteWaveFunction step_explicit(const DiscreteWaveFunction& psi, const Hamiltonian& h, double dt,
                                          OpCounter* counter = nullptr) {
    const auto& lat = psi.lattice();
    h.validate(lat);
    DiscreteWaveFunction out = psi;
    const cplx factor{0.0, -dt / h.hbar};
    const auto strides = lat.strides();
    const bool periodic = lat.boundary == Boundary::periodic;
    const double f02 = psi.base_magnitude() * psi.base_magnitude();
    CellIndexer ix(lat);
    std::uint64_t ops = 0;
    for (std::size_t c = 0; c < psi.size(); ++c) {
        const cplx z = psi[c];
        const bool active = psi.base_magnitude() > 0.0 ? std::norm(z) > f02 : z != cplx{};
        if (!active) continue;
        double diag = h.potential[c];
        for (double k : h.kinetic) diag += 2.0 * k;
        out[c] += factor * diag * z;
        ++ops;
        for (std::size_t ax = 0; ax < lat.axis_count(); ++ax) {
            const std::size_t n = lat.cells_per_axis[ax];
            const std::size_t i = ix.coord(c, ax);
            const cplx contrib = factor * (-h.kinetic[ax]) * z;
            if (i + 1 < n) { out[c + strides[ax]] += contrib; ++ops; }
            else if (periodic) { out[c - (n - 1) * strides[ax]] += contrib; ++ops; }
            if (i > 0) { out[c - strides[ax]] += contrib; ++ops; }
            else if (periodic) { out[c + (n - 1) * strides[ax]] += contrib; ++ops; }
        }
    }
    if (counter) counter->multiply_adds += ops;
    return out;
}

/// One Cayley step (1 + i dt H / 2 hbar)^-1 (1 - i dt H / 2 hbar). Negative dt
/// steps backwards and inverts a forward step exactly.
inline DiscreteWaveFunction step_unitary(const DiscreteWaveFunction& psi, const Hamiltonian& h, double dt,
                                         const StepOptions& opts = {}) {
    if (opts.scheme == StepScheme::explicit_stencil) return step_explicit(psi, h, dt);
    if (dt == 0.0 || !std::isfinite(dt)) throw DomainError("time step must be finite and nonzero");
    const auto& lat = psi.lattice();
    h.validate(lat);
    {
        double a2 = INFINITY;
        for (double a : lat.cell_size) a2 = std::min(a2, a * a);
        double kmax = 0.0;
        for (double k : h.kinetic) kmax = std::max(kmax, k);
        // a^2 m / hbar == hbar / (2 kinetic)
        detail::warn_cfl_once(dt, h.hbar / (2.0 * kmax));
    }
    const double tau = dt / (2.0 * h.hbar);
    const std::size_t n = psi.size();

    std::vector<cplx> hpsi(n), rhs(n);
    apply_hamiltonian(h, lat, psi.amplitudes(), hpsi);
    for (std::size_t c = 0; c < n; ++c) rhs[c] = psi[c] - cplx{0.0, tau} * hpsi[c];

    DiscreteWaveFunction out = psi;
    auto x = out.amplitudes();
    const bool periodic = lat.boundary == Boundary::periodic;
    if (lat.axis_count() == 1) {
        detail::solve_cayley_line(h, 0, 0, 1, lat.cells_per_axis[0], periodic, tau, rhs, x);
        return out;
    }

    // Conjugate gradients on the normal equations (1 + tau^2 H^2) x = (1 - i tau H) rhs.
    auto apply_m = [&](std::span<const cplx> v, std::span<cplx> mv, bool adjoint) {
        apply_hamiltonian(h, lat, v, mv);
        const cplx f{0.0, adjoint ? -tau : tau};
        for (std::size_t c = 0; c < n; ++c) mv[c] = v[c] + f * mv[c];
    };
    std::vector<cplx> b(n), r(n), p(n), q(n), t(n);
    apply_m(rhs, b, true);
    std::copy(rhs.begin(), rhs.end(), x.begin());
    apply_m(x, t, false);
    apply_m(t, q, true);
    double bnorm = 0.0, rr = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        r[c] = b[c] - q[c];
        p[c] = r[c];
        bnorm += std::norm(b[c]);
        rr += std::norm(r[c]);
    }
    const double target = opts.tolerance * opts.tolerance * std::max(bnorm, 1e-300);
    std::size_t it = 0;
    while (rr > target) {
        if (it++ >= opts.max_iterations) {
            std::ostringstream msg;
            msg << "Cayley solve did not converge: " << opts.max_iterations << " iterations, relative residual "
                << std::sqrt(rr / bnorm) << ", dt " << dt;
            throw NumericalError(msg.str());
        }
        apply_m(p, t, false);
        double pq = 0.0;
        for (std::size_t c = 0; c < n; ++c) pq += std::norm(t[c]);  // <p, M^H M p> = |M p|^2
        const double alpha = rr / pq;
        apply_m(t, q, true);
        double rr_new = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            x[c] += alpha * p[c];
            r[c] -= alpha * q[c];
            rr_new += std::norm(r[c]);
        }
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t c = 0; c < n; ++c) p[c] = r[c] + beta * p[c];
    }
    return out;
}

/// Potential felt by particle `target_k` of psi_a from particle `source_k` of
/// psi_b through a pair interaction: V(x) = sum_y V_pair(|x - y|) g_b(y) dV.
/// Returned over psi_a's full lattice (constant along other axes).
inline std::vector<double> mean_field_potential(const DiscreteWaveFunction& target, std::size_t target_k,
                                                const DiscreteWaveFunction& source, std::size_t source_k,
                                                const PotentialSpec& pair) {
    pair.validate();
    const auto tl = target.lattice().particle_lattice(target_k);
    const auto sl = source.lattice().particle_lattice(source_k);
    if (tl.dims_per_particle != sl.dims_per_particle)
        throw LatticeError("mean field needs particles of equal dimensionality");
    const auto g = marginal_density(source, source_k);
    const double dv = sl.cell_volume();
    const auto d = tl.dims_per_particle;
    CellIndexer tix(tl), six(sl);

    std::vector<double> local(tl.cell_count(), 0.0);
    if (tl == sl) {
        // Shared grid: the kernel depends only on the index offset, so tabulate it.
        const bool periodic = tl.boundary == Boundary::periodic;
        std::vector<std::size_t> span(d), stride(d, 1);
        for (std::size_t a = 0; a < d; ++a) span[a] = periodic ? tl.cells_per_axis[a] : 2 * tl.cells_per_axis[a] - 1;
        for (std::size_t a = d; a-- > 1;) stride[a - 1] = stride[a] * span[a];
        std::vector<double> kernel(stride[0] * span[0]);
        for (std::size_t t = 0; t < kernel.size(); ++t) {
            double r2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                const auto o = static_cast<double>((t / stride[a]) % span[a]);
                const double shift = periodic ? o : o - static_cast<double>(tl.cells_per_axis[a] - 1);
                const double dx = tl.displacement(a, shift * tl.cell_size[a], 0.0);
                r2 += dx * dx;
            }
            kernel[t] = pair.pair_value(std::sqrt(r2)) * dv;
        }
        std::vector<std::size_t> yi, yn;
        std::vector<double> gy;
        for (std::size_t y = 0; y < sl.cell_count(); ++y) {
            if (g[y] == 0.0) continue;
            for (std::size_t a = 0; a < d; ++a) yi.push_back(six.coord(y, a));
            gy.push_back(g[y]);
        }
        for (std::size_t a = 0; a < d; ++a) yn.push_back(tl.cells_per_axis[a]);
        for (std::size_t x = 0; x < tl.cell_count(); ++x) {
            std::size_t xi[3];
            for (std::size_t a = 0; a < d; ++a) xi[a] = tix.coord(x, a);
            double acc = 0.0;
            for (std::size_t y = 0; y < gy.size(); ++y) {
                std::size_t t = 0;
                for (std::size_t a = 0; a < d; ++a) {
                    const auto n = yn[a], yv = yi[y * d + a];
                    const std::size_t o = periodic ? (xi[a] + n - yv) % n : xi[a] + n - 1 - yv;
                    t += o * stride[a];
                }
                acc += kernel[t] * gy[y];
            }
            local[x] = acc;
        }
    } else {
        std::vector<double> sx(sl.cell_count() * d);
        for (std::size_t y = 0; y < sl.cell_count(); ++y)
            for (std::size_t a = 0; a < d; ++a) sx[y * d + a] = sl.coordinate(a, six.coord(y, a));
        for (std::size_t x = 0; x < tl.cell_count(); ++x) {
            double xc[3];
            for (std::size_t a = 0; a < d; ++a) xc[a] = tl.coordinate(a, tix.coord(x, a));
            double acc = 0.0;
            for (std::size_t y = 0; y < sl.cell_count(); ++y) {
                if (g[y] == 0.0) continue;
                double r2 = 0.0;
                for (std::size_t a = 0; a < d; ++a) {
                    const double dx = tl.displacement(a, xc[a], sx[y * d + a]);
                    r2 += dx * dx;
                }
                acc += pair.pair_value(std::sqrt(r2)) * g[y] * dv;
            }
            local[x] = acc;
        }
    }

    const auto& lat = target.lattice();
    std::vector<double> out(lat.cell_count());
    CellIndexer ix(lat);
    const auto ts = tl.strides();
    for (std::size_t c = 0; c < out.size(); ++c) {
        std::size_t o = 0;
        for (std::size_t a = 0; a < d; ++a) o += ix.coord(c, target_k * d + a) * ts[a];
        out[c] = local[o];
    }
    return out;
}

}  // namespace qcollapse
