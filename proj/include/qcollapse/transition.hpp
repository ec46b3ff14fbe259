#pragma once

#include <cstdint>
#include <vector>

#include "errors.hpp"

namespace qcollapse {

/// Quantum-to-classical transition arithmetic in integer log10 units.
/// With M particles confined to 10^e cells each, the trigger sits at
/// v_c = 10^{eM}. A wave function of M/f particles reaches it only once each
/// particle's support is 10^{f e} cells.
struct TransitionRow {
    std::int64_t fraction = 1;           // wave function holds M / fraction particles
    std::int64_t particles = 0;
    std::int64_t spread_log10_cells = 0;  // per-particle support at trigger
    /// Side of the spread cube in cells and in cm; exact only when
    /// fraction * e is divisible by the dimension.
    bool side_exact = true;
    std::int64_t side_log10_cells = 0;
    std::int64_t side_log10_cm = 0;
    std::int64_t side_log10_km = 0;
};

struct TransitionReport {
    std::int64_t M = 0;
    std::int64_t e = 0;
    std::int64_t vc_log10 = 0;
    std::int64_t cell_log10_cm = -15;
    std::vector<TransitionRow> rows;
};

inline constexpr std::int64_t cm_per_km_log10 = 5;

inline TransitionReport report_transition(std::int64_t M, std::int64_t e, std::int64_t cell_log10_cm = -15,
                                          std::int64_t max_fraction = 3, std::int64_t dims = 3) {
    if (M < 1 || e < 1 || max_fraction < 1 || dims < 1) throw DomainError("transition inputs must be positive");
    TransitionReport r;
    r.M = M;
    r.e = e;
    r.vc_log10 = M * e;
    r.cell_log10_cm = cell_log10_cm;
    for (std::int64_t f = 1; f <= max_fraction; ++f) {
        TransitionRow row;
        row.fraction = f;
        row.particles = M / f;
        row.spread_log10_cells = f * e;
        row.side_exact = (f * e) % dims == 0;
        row.side_log10_cells = (f * e) / dims;
        row.side_log10_cm = row.side_log10_cells + cell_log10_cm;
        row.side_log10_km = row.side_log10_cm - cm_per_km_log10;
        r.rows.push_back(row);
    }
    return r;
}

/// particles * per_particle >= vc in log10 units: the trigger condition for
/// a product of equal per-particle supports.
inline bool log10_trigger(std::int64_t particles, std::int64_t per_particle_log10, std::int64_t vc_log10) {
    return particles * per_particle_log10 >= vc_log10;
}

}  // namespace qcollapse
