#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "lattice.hpp"
#include "wavefunction.hpp"

namespace qcollapse {

enum class Mechanism { grw_hit, csl, ccqm_localize, ccqm_split, combine };

inline const char* to_string(Mechanism m) {
    switch (m) {
        case Mechanism::grw_hit: return "grw_hit";
        case Mechanism::csl: return "csl";
        case Mechanism::ccqm_localize: return "ccqm_localize";
        case Mechanism::ccqm_split: return "ccqm_split";
        case Mechanism::combine: return "combine";
    }
    return "unknown";
}

/// Record of a localization, split or combination.
struct CollapseEvent {
    double time = 0.0;
    Mechanism mechanism = Mechanism::ccqm_localize;
    std::vector<std::size_t> wave_functions;
    /// Configuration-space (or single-particle for GRW) center; empty for splits.
    std::vector<double> center;
    double epsilon = 0.0;
    std::size_t v_pre = 0;
    std::size_t v_post = 0;
    double delta_e = 0.0;
};

namespace detail {

// Per-offset weights sqrt(eps / pi) exp(-eps dx^2) * a along one axis; offset
// o is the cell distance (minimum image when periodic).
inline std::vector<double> gaussian_weights(const LatticeSpec& lat, std::size_t axis, double eps) {
    const std::size_t n = lat.cells_per_axis[axis];
    const double a = lat.cell_size[axis];
    std::vector<double> w(n, 0.0);
    const double norm = std::sqrt(eps / std::numbers::pi) * a;
    for (std::size_t o = 0; o < n; ++o) {
        double dx = static_cast<double>(o) * a;
        if (lat.boundary == Boundary::periodic) dx = std::min(dx, lat.extent(axis) - dx);
        const double e = eps * dx * dx;
        w[o] = e > 745.0 ? 0.0 : norm * std::exp(-e);
    }
    return w;
}

}  // namespace detail

/// Discrete convolution of a density on `lat` with the normalized Gaussian
/// prod_a sqrt(eps/pi) exp(-eps dx_a^2) along every axis, weighted by cell
/// sizes so sums approximate integrals.
inline std::vector<double> gaussian_convolve(const LatticeSpec& lat, std::vector<double> density, double eps) {
    const auto strides = lat.strides();
    std::vector<double> line, out;
    for (std::size_t ax = 0; ax < lat.axis_count(); ++ax) {
        const auto w = detail::gaussian_weights(lat, ax, eps);
        std::size_t reach = 0;
        for (std::size_t o = 0; o < w.size(); ++o)
            if (w[o] > 0.0) reach = o;
        const std::size_t n = lat.cells_per_axis[ax];
        const std::size_t s = strides[ax];
        const bool periodic = lat.boundary == Boundary::periodic;
        line.resize(n);
        out.resize(n);
        for (std::size_t block = 0; block < density.size(); block += n * s)
            for (std::size_t inner = 0; inner < s; ++inner) {
                const std::size_t base = block + inner;
                for (std::size_t i = 0; i < n; ++i) line[i] = density[base + i * s];
                for (std::size_t i = 0; i < n; ++i) {
                    double acc = 0.0;
                    if (periodic && 2 * reach + 1 >= n) {
                        for (std::size_t j = 0; j < n; ++j) acc += line[j] * w[i > j ? i - j : j - i];
                    } else {
                        const std::size_t lo = i >= reach ? i - reach : 0;
                        const std::size_t hi = std::min(n - 1, i + reach);
                        for (std::size_t j = lo; j <= hi; ++j) acc += line[j] * w[i > j ? i - j : j - i];
                        if (periodic) {
                            // wrapped neighbours
                            for (std::size_t o = 1; o <= reach; ++o) {
                                if (i + o >= n) acc += line[i + o - n] * w[o];
                                if (i < o) acc += line[i + n - o] * w[o];
                            }
                        }
                    }
                    out[i] = acc;
                }
                for (std::size_t i = 0; i < n; ++i) density[base + i * s] = out[i];
            }
    }
    return density;
}

/// Multiplies psi by the Gaussian jump factor (eps/pi)^{D/4} exp(-eps r^2 / 2)
/// centred at `center`, where r runs over the listed axes.
inline void apply_gaussian_jump(DiscreteWaveFunction& psi, std::span<const std::size_t> axes,
                                std::span<const double> center, double eps) {
    const auto& lat = psi.lattice();
    std::vector<std::vector<double>> factors(axes.size());
    const double norm_per_axis = std::pow(eps / std::numbers::pi, 0.25);
    for (std::size_t i = 0; i < axes.size(); ++i) {
        const auto ax = axes[i];
        factors[i].resize(lat.cells_per_axis[ax]);
        for (std::size_t c = 0; c < factors[i].size(); ++c) {
            const double dx = lat.displacement(ax, lat.coordinate(ax, c), center[i]);
            factors[i][c] = norm_per_axis * std::exp(-0.5 * eps * dx * dx);
        }
    }
    CellIndexer ix(lat);
    for (std::size_t c = 0; c < psi.size(); ++c) {
        double f = 1.0;
        for (std::size_t i = 0; i < axes.size(); ++i) f *= factors[i][ix.coord(c, axes[i])];
        psi[c] *= f;
    }
}

/// Coordinates of a flat cell index.
inline std::vector<double> cell_coordinates(const LatticeSpec& lat, std::size_t cell) {
    CellIndexer ix(lat);
    std::vector<double> x(lat.axis_count());
    for (std::size_t ax = 0; ax < x.size(); ++ax) x[ax] = lat.coordinate(ax, ix.coord(cell, ax));
    return x;
}

}  // namespace qcollapse
