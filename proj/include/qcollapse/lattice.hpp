#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"

namespace qcollapse {

enum class Boundary { periodic, box };

inline constexpr std::size_t max_lattice_cells = std::size_t{1} << 31;

/// Configuration-space lattice. Particle k owns axes
/// [k * dims_per_particle, (k + 1) * dims_per_particle). Cells are stored
/// row-major with axis 0 varying slowest.
struct LatticeSpec {
    std::size_t particle_count = 1;
    std::size_t dims_per_particle = 1;
    std::vector<std::size_t> cells_per_axis;
    std::vector<double> cell_size;
    std::vector<double> origin;
    Boundary boundary = Boundary::periodic;

    std::size_t axis_count() const { return cells_per_axis.size(); }

    std::size_t cell_count() const {
        std::size_t n = 1;
        for (auto c : cells_per_axis) n *= c;
        return n;
    }

    /// Volume of one configuration-space cell (product over all axes).
    double cell_volume() const {
        double v = 1.0;
        for (auto a : cell_size) v *= a;
        return v;
    }

    double particle_cell_volume(std::size_t k) const {
        double v = 1.0;
        for (std::size_t ax = k * dims_per_particle; ax < (k + 1) * dims_per_particle; ++ax) v *= cell_size[ax];
        return v;
    }

    std::vector<std::size_t> strides() const {
        std::vector<std::size_t> s(axis_count(), 1);
        for (std::size_t ax = axis_count(); ax-- > 1;) s[ax - 1] = s[ax] * cells_per_axis[ax];
        return s;
    }

    double coordinate(std::size_t axis, std::size_t i) const {
        return origin[axis] + static_cast<double>(i) * cell_size[axis];
    }

    double extent(std::size_t axis) const {
        return static_cast<double>(cells_per_axis[axis]) * cell_size[axis];
    }

    /// Displacement x - y along one axis, minimum image when periodic.
    double displacement(std::size_t axis, double x, double y) const {
        double d = x - y;
        if (boundary == Boundary::periodic) {
            const double L = extent(axis);
            d -= L * std::round(d / L);
        }
        return d;
    }

    /// Single-particle position lattice of particle k.
    LatticeSpec particle_lattice(std::size_t k) const {
        LatticeSpec out;
        out.particle_count = 1;
        out.dims_per_particle = dims_per_particle;
        out.boundary = boundary;
        const auto b = k * dims_per_particle;
        const auto e = b + dims_per_particle;
        out.cells_per_axis.assign(cells_per_axis.begin() + b, cells_per_axis.begin() + e);
        out.cell_size.assign(cell_size.begin() + b, cell_size.begin() + e);
        out.origin.assign(origin.begin() + b, origin.begin() + e);
        return out;
    }

    void validate() const {
        if (particle_count < 1) throw LatticeError("lattice needs at least one particle");
        if (dims_per_particle < 1 || dims_per_particle > 3)
            throw LatticeError("dims_per_particle must be 1, 2 or 3");
        const auto axes = particle_count * dims_per_particle;
        if (cells_per_axis.size() != axes || cell_size.size() != axes || origin.size() != axes)
            throw LatticeError("lattice axis lists must have particle_count * dims_per_particle entries");
        long double total = 1;
        for (auto c : cells_per_axis) {
            if (c < 2) throw LatticeError("every axis needs at least 2 cells");
            total *= c;
        }
        if (total > static_cast<long double>(max_lattice_cells))
            throw LatticeError("lattice exceeds 2^31 cells");
        for (auto a : cell_size)
            if (!(a > 0.0) || !std::isfinite(a)) throw LatticeError("cell sizes must be positive");
        for (std::size_t k = 0; k < particle_count; ++k)
            for (std::size_t j = 1; j < dims_per_particle; ++j)
                if (cell_size[k * dims_per_particle + j] != cell_size[k * dims_per_particle])
                    throw LatticeError("axes of one particle must share a cell size");
    }

    friend bool operator==(const LatticeSpec&, const LatticeSpec&) = default;
};

/// Lattice with `particles` particles that all use the same position grid.
inline LatticeSpec uniform_lattice(std::size_t particles, std::size_t dims, std::size_t cells,
                                   double cell_size, double origin = 0.0,
                                   Boundary boundary = Boundary::periodic) {
    LatticeSpec l;
    l.particle_count = particles;
    l.dims_per_particle = dims;
    l.cells_per_axis.assign(particles * dims, cells);
    l.cell_size.assign(particles * dims, cell_size);
    l.origin.assign(particles * dims, origin);
    l.boundary = boundary;
    l.validate();
    return l;
}

/// Joint lattice of two disjoint particle sets; a's axes come first.
inline LatticeSpec product_lattice(const LatticeSpec& a, const LatticeSpec& b) {
    if (a.dims_per_particle != b.dims_per_particle)
        throw LatticeError("cannot join lattices with different dimensionality");
    if (a.boundary != b.boundary) throw LatticeError("cannot join lattices with different boundaries");
    LatticeSpec out = a;
    out.particle_count += b.particle_count;
    out.cells_per_axis.insert(out.cells_per_axis.end(), b.cells_per_axis.begin(), b.cells_per_axis.end());
    out.cell_size.insert(out.cell_size.end(), b.cell_size.begin(), b.cell_size.end());
    out.origin.insert(out.origin.end(), b.origin.begin(), b.origin.end());
    return out;
}

/// Multi-index <-> flat index conversion over a lattice.
class CellIndexer {
public:
    explicit CellIndexer(const LatticeSpec& l) : dims_(l.cells_per_axis), strides_(l.strides()) {}

    std::size_t flat(const std::vector<std::size_t>& idx) const {
        std::size_t f = 0;
        for (std::size_t ax = 0; ax < idx.size(); ++ax) f += idx[ax] * strides_[ax];
        return f;
    }

    void unflatten(std::size_t f, std::vector<std::size_t>& idx) const {
        idx.resize(dims_.size());
        for (std::size_t ax = 0; ax < dims_.size(); ++ax) {
            idx[ax] = f / strides_[ax];
            f %= strides_[ax];
        }
    }

    std::size_t coord(std::size_t f, std::size_t axis) const { return (f / strides_[axis]) % dims_[axis]; }

    const std::vector<std::size_t>& strides() const { return strides_; }
    const std::vector<std::size_t>& dims() const { return dims_; }

private:
    std::vector<std::size_t> dims_;
    std::vector<std::size_t> strides_;
};

}  // namespace qcollapse
