#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "qcollapse/ccqm.hpp"
#include "qcollapse/stats.hpp"
#include "qcollapse/transition.hpp"

using namespace qcollapse;
using namespace qcollapse::ccqm;

namespace {

ParticleSpec particle(const char* label = "p", std::optional<std::string> cls = std::nullopt) {
    return {1.0, label, std::move(cls)};
}

// Equal magnitudes on [lo, hi) of a 1D lattice.
DiscreteWaveFunction top_hat(std::size_t cells, std::size_t lo, std::size_t hi, Boundary b = Boundary::periodic) {
    const auto lat = uniform_lattice(1, 1, cells, 1.0, 0.0, b);
    DiscreteWaveFunction psi(lat, {particle()});
    for (std::size_t i = lo; i < hi; ++i) psi[i] = 1.0;
    return normalize(std::move(psi));
}

DiscreteWaveFunction two_peak(double sigma = 3.0) {
    const auto lat = uniform_lattice(1, 1, 128, 1.0);
    const double cl[] = {32.0}, cr[] = {96.0}, p[] = {0.0};
    const auto l = gaussian_packet(lat, {particle()}, cl, p, sigma), r = gaussian_packet(lat, {particle()}, cr, p, sigma);
    DiscreteWaveFunction psi(lat, {particle()});
    for (std::size_t i = 0; i < 128; ++i) psi[i] = 0.8 * l[i] + 0.6 * r[i];
    return normalize(std::move(psi));
}

double weight_below(const DiscreteWaveFunction& psi, std::size_t split) {
    double w = 0.0;
    for (std::size_t i = 0; i < split; ++i) w += std::norm(psi[i]);
    return w * psi.lattice().cell_volume();
}

double overlap(const DiscreteWaveFunction& a, const DiscreteWaveFunction& b) {
    cplx s{};
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return std::abs(s) * a.lattice().cell_volume();
}

CcqmParams params_with(double F, double f0, std::uint64_t vc = 1000) {
    CcqmParams p;
    p.F = F;
    p.f0 = f0;
    p.v_c = vc;
    return p;
}

}  // namespace

TEST(Trigger, ThresholdExamples) {
    CcqmParams p;
    p.v_c = 32;
    EXPECT_TRUE(check_trigger(33, 1, p));
    EXPECT_TRUE(check_trigger(32, 1, p));
    EXPECT_FALSE(check_trigger(16, 1, p));
    p.scale_vc_with_N = true;
    EXPECT_FALSE(check_trigger(33, 2, p));
    EXPECT_TRUE(check_trigger(64, 2, p));
}

TEST(Trigger, OnWaveFunction) {
    const auto psi = top_hat(64, 10, 43);
    auto p = params_with(0.5, 0.01, 32);
    EXPECT_TRUE(check_trigger(psi, p));
    p.v_c = 34;
    EXPECT_FALSE(check_trigger(psi, p));
}

TEST(Trigger, SafetyBound) {
    EXPECT_TRUE(trigger_safe(1000, 0.01, 1.0));
    EXPECT_FALSE(trigger_safe(1001, 0.01, 1.0));
    EXPECT_TRUE(trigger_safe(1u << 30, 0.0, 1.0));
}

TEST(Params, Validation) {
    EXPECT_THROW(params_with(1.0, 0.0).validate(), DomainError);
    EXPECT_THROW(params_with(0.0, 0.0).validate(), DomainError);
    EXPECT_THROW(params_with(0.5, 0.0, 1).validate(), DomainError);
    EXPECT_DOUBLE_EQ(CcqmParams::fraction_from_reduction(0.25), 0.75);
}

TEST(CenterDensity, DeltaGivesSquaredGaussian) {
    const auto lat = uniform_lattice(2, 1, 16, 1.0);
    DiscreteWaveFunction psi(lat, {particle("a"), particle("b")});
    CellIndexer ix(lat);
    psi[ix.flat({4, 11})] = 1.0;
    psi = normalize(std::move(psi));
    const double eps = 0.3;
    const auto P = ccqm_center_density(psi, eps);
    const double peak = P[ix.flat({4, 11})];
    for (std::size_t c = 0; c < P.size(); ++c) {
        const double d0 = lat.displacement(0, double(ix.coord(c, 0)), 4.0);
        const double d1 = lat.displacement(1, double(ix.coord(c, 1)), 11.0);
        EXPECT_NEAR(P[c], peak * std::exp(-eps * (d0 * d0 + d1 * d1)), 1e-15);
    }
}

TEST(CenterDensity, UniformStaysUniform) {
    const auto psi = top_hat(50, 0, 50);
    const auto P = ccqm_center_density(psi, 0.02);
    for (double x : P) EXPECT_NEAR(x, P[0], 1e-14);
}

TEST(CenterDensity, PointerBranchRatio) {
    const auto lat = uniform_lattice(2, 1, 48, 1.0);
    const std::vector parts{particle("p0"), particle("p1")};
    const double cl[] = {12.0, 12.0}, cr[] = {36.0, 36.0}, p[] = {0.0, 0.0};
    const auto l = gaussian_packet(lat, parts, cl, p, 2.0), r = gaussian_packet(lat, parts, cr, p, 2.0);
    DiscreteWaveFunction psi(lat, parts);
    for (std::size_t c = 0; c < psi.size(); ++c) psi[c] = 0.8 * l[c] + 0.6 * r[c];
    psi = normalize(std::move(psi));
    const auto P = ccqm_center_density(psi, 0.1);
    CellIndexer ix(lat);
    double left = 0.0, total = 0.0;
    for (std::size_t c = 0; c < P.size(); ++c) {
        total += P[c];
        if (ix.coord(c, 0) < 24) left += P[c];
    }
    EXPECT_NEAR(left / total, 0.64, 1e-3);
}

TEST(ChooseEpsilon, UniformHundredCellsHalves) {
    const auto psi = top_hat(200, 50, 150);
    const std::vector center{100.0};
    for (double f0 : {1e-6, 0.05}) {
        const auto p = params_with(0.5, f0);
        const auto choice = choose_epsilon(psi, center, p);
        EXPECT_LE(choice.v_post, 50u);
        EXPECT_GE(choice.v_post, 49u);
        EXPECT_LE(choice.iterations, 64u);

        // exhaustive log-grid scan: smallest eps reaching <= 50 cells
        const JumpProfile jump(psi, center, false);
        double first = 0.0;
        for (double le = -12.0; le <= 4.0; le += 1e-3) {
            const double eps = std::pow(10.0, le);
            if (post_collapse_volume(psi, jump, eps, f0) <= 50) {
                first = eps;
                break;
            }
        }
        ASSERT_GT(first, 0.0);
        EXPECT_NEAR(std::log10(choice.epsilon), std::log10(first), 2e-3) << "f0 " << f0;
        const auto out = apply_ccqm_jump(psi, center, choice.epsilon, p);
        EXPECT_EQ(relative_volume(out, f0), choice.v_post);
    }
}

TEST(ChooseEpsilon, FractionNearOneKeepsVolume) {
    const auto psi = top_hat(200, 50, 150);
    const std::vector center{100.0};
    const auto p = params_with(0.999, 0.05);
    const auto choice = choose_epsilon(psi, center, p);
    EXPECT_EQ(choice.v_post, 100u);
    EXPECT_LT(choice.epsilon, 1e-7);
}

TEST(ChooseEpsilon, KeepsOnlyTheNearBranch) {
    auto psi = top_hat(200, 20, 40);
    for (std::size_t i = 140; i < 160; ++i) psi[i] = psi[20];
    psi = normalize(std::move(psi));
    const auto p = params_with(0.5, 0.05);
    ASSERT_EQ(relative_volume(psi, p.f0), 40u);
    const std::vector center{30.0};
    const auto choice = choose_epsilon(psi, center, p);
    EXPECT_GE(choice.v_post, 19u);
    EXPECT_LE(choice.v_post, 20u);
    const auto out = apply_ccqm_jump(psi, center, choice.epsilon, p);
    for (std::size_t i = 100; i < 200; ++i) EXPECT_LE(std::abs(out[i]), p.f0);
    auto discrete = p;
    discrete.truncate_below_f0 = true;
    const auto cut = apply_ccqm_jump(psi, center, choice.epsilon, discrete);
    double far = 0.0;
    for (std::size_t i = 100; i < 200; ++i) far += std::norm(cut[i]);
    EXPECT_EQ(far, 0.0);
    EXPECT_NEAR(norm_squared(cut), 1.0, 1e-12);
}

TEST(ChooseEpsilon, FailsWhenBracketTooNarrow) {
    const auto psi = top_hat(200, 50, 150);
    const std::vector center{100.0};
    EXPECT_THROW(choose_epsilon(psi, center, params_with(0.5, 0.05), 1e-9, 1e-8), WidthSearchFailed);
}

TEST(ChooseEpsilon, NarrowCenterOffSupportStaysFinite) {
    const auto psi = top_hat(64, 10, 20);
    const std::vector center{40.0};
    const auto p = params_with(0.2, 0.05);
    const auto choice = choose_epsilon(psi, center, p);
    const auto out = apply_ccqm_jump(psi, center, choice.epsilon, p);
    EXPECT_NEAR(norm_squared(out), 1.0, 1e-12);
    EXPECT_LE(relative_volume(out, p.f0), 2u);
}

TEST(Localize, ContractOnSpreadPacket) {
    const auto lat = uniform_lattice(1, 1, 512, 1.0);
    const double c[] = {256.0}, mom[] = {0.0};
    const auto psi = gaussian_packet(lat, {particle()}, c, mom, 30.0);
    const auto p = params_with(0.5, 0.01);
    const auto v_pre = relative_volume(psi, p.f0);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto [out, ev] = ccqm_localize(psi, p, rng);
        EXPECT_EQ(ev.v_pre, v_pre);
        EXPECT_LE(double(ev.v_post), p.F * double(v_pre) + 1.0);
        EXPECT_NEAR(norm_squared(out), 1.0, 1e-12);
        EXPECT_EQ(ev.mechanism, Mechanism::ccqm_localize);
    }
}

TEST(Localize, RingShellCollapsesToOneSegment) {
    const std::size_t n = 256;
    const auto lat = uniform_lattice(1, 1, n, 1.0);
    DiscreteWaveFunction psi(lat, {particle()});
    for (std::size_t i = 0; i < n; ++i) psi[i] = std::polar(1.0, 0.3 * double(i));
    psi = normalize(std::move(psi));
    const auto p = params_with(0.5, 0.02);
    ASSERT_EQ(relative_volume(psi, p.f0), n);
    Rng rng(17);
    for (int t = 0; t < 20; ++t) {
        const auto [out, ev] = ccqm_localize(psi, p, rng);
        EXPECT_NEAR(double(ev.v_post), 0.5 * n, 1.0);
        // cyclic contiguity: exactly one rising edge of the support indicator
        std::size_t edges = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool cur = std::norm(out[i]) > p.f0 * p.f0, prev = std::norm(out[(i + n - 1) % n]) > p.f0 * p.f0;
            edges += cur && !prev;
        }
        EXPECT_EQ(edges, 1u);
    }
}

TEST(Localize, BornStatisticsAndCenterHistogram) {
    const auto psi = two_peak();
    const auto p = params_with(0.3, 0.01);
    const double eps0 = provisional_epsilon(psi, p);
    const auto density = ccqm_center_density(psi, eps0);
    Rng rng(2718);
    const int n = 10000;
    int left = 0;
    std::vector<double> hist(psi.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        const auto [out, ev] = ccqm_localize(psi, p, rng);
        const double wl = weight_below(out, 64);
        EXPECT_TRUE(wl < 1e-6 || wl > 1.0 - 1e-6) << wl;
        left += wl > 0.5;
        hist[static_cast<std::size_t>(std::lround(ev.center[0]))] += 1.0;
    }
    const auto b = stats::binomial(left, n, 0.64);
    EXPECT_TRUE(b.pass) << left << " z " << b.statistic;
    const auto chi = stats::chi_square(hist, density);
    EXPECT_TRUE(chi.pass) << "chi2 " << chi.statistic << " p " << chi.p_value;
}

TEST(Localize, MeanEnergyIncreases) {
    const auto lat = uniform_lattice(1, 1, 256, 1.0);
    const double c[] = {128.0}, mom[] = {0.0};
    const auto psi = gaussian_packet(lat, {particle()}, c, mom, 12.0);
    const auto p = params_with(0.5, 0.01);
    Rng rng(10);
    std::vector<double> de;
    for (int i = 0; i < 10000; ++i) de.push_back(ccqm_localize(psi, p, rng).second.delta_e);
    EXPECT_TRUE(stats::mean_positive(de).pass);
}

TEST(Localize, SymmetricJumpPreservesExchangeSymmetry) {
    const auto lat = uniform_lattice(2, 1, 40, 1.0);
    const std::vector parts{particle("e0", "electron"), particle("e1", "electron")};
    const double lr[] = {10.0, 28.0}, rl[] = {28.0, 10.0}, mom[] = {0.0, 0.0};
    const auto a = gaussian_packet(lat, parts, lr, mom, 3.0), b = gaussian_packet(lat, parts, rl, mom, 3.0);
    DiscreteWaveFunction psi(lat, parts);
    for (std::size_t c = 0; c < psi.size(); ++c) psi[c] = a[c] + b[c];
    psi = normalize(std::move(psi));
    ASSERT_LT(max_symmetry_defect(psi), 1e-14);

    auto p = params_with(0.5, 0.005);
    Rng rng(1);
    p.symmetric_jump = true;
    for (int i = 0; i < 10; ++i) EXPECT_LE(max_symmetry_defect(ccqm_localize(psi, p, rng).first), 1e-10);
    p.symmetric_jump = false;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) worst = std::max(worst, max_symmetry_defect(ccqm_localize(psi, p, rng).first));
    EXPECT_GT(worst, 1e-3);
}

TEST(Permutations, OnlyExchangeIdenticalParticles) {
    const std::vector parts{particle("a", "x"), particle("b"), particle("c", "x"), particle("d", "x")};
    const auto perms = identical_permutations(parts);
    EXPECT_EQ(perms.size(), 6u);
    for (const auto& p : perms) EXPECT_EQ(p[1], 1u);
    EXPECT_EQ(perms.front(), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(Split, CandidateCuts) {
    EXPECT_EQ(candidate_cuts(1, SplitCandidates::single_vs_rest).size(), 0u);
    EXPECT_EQ(candidate_cuts(2, SplitCandidates::single_vs_rest).size(), 1u);
    EXPECT_EQ(candidate_cuts(5, SplitCandidates::single_vs_rest).size(), 5u);
    const auto all = candidate_cuts(3, SplitCandidates::all_bipartitions);
    EXPECT_EQ(all.size(), 3u);
    EXPECT_EQ(candidate_cuts(4, SplitCandidates::all_bipartitions).size(), 7u);
    EXPECT_THROW(candidate_cuts(5, SplitCandidates::all_bipartitions), DomainError);
}

TEST(Split, ProductStateSplitsIntoExactFactors) {
    const auto l1 = uniform_lattice(1, 1, 24, 1.0);
    const double c1[] = {8.0}, c2[] = {15.0}, p1[] = {0.4}, p2[] = {-0.7};
    const auto a = gaussian_packet(l1, {particle("a")}, c1, p1, 2.5);
    const auto b = gaussian_packet(l1, {particle("b")}, c2, p2, 3.0);
    const auto joint = tensor_product(a, b);
    auto p = params_with(0.5, 0.01);
    p.split_coupling = 5.0;
    Rng rng(4);
    const auto out = try_split(joint, p, rng);
    ASSERT_EQ(out.parts.size(), 2u);
    ASSERT_TRUE(out.event.has_value());
    EXPECT_EQ(out.event->mechanism, Mechanism::ccqm_split);
    EXPECT_NEAR(overlap(out.parts[0], a), 1.0, 1e-12);
    EXPECT_NEAR(overlap(out.parts[1], b), 1.0, 1e-12);
    EXPECT_EQ(out.particle_sets[0], std::vector<std::size_t>{0});
    EXPECT_EQ(out.particle_sets[1], std::vector<std::size_t>{1});
    EXPECT_LT(out.event->v_post, out.event->v_pre);
}

TEST(Split, InfiniteCouplingNeverSplits) {
    const auto lat = uniform_lattice(2, 1, 16, 1.0);
    const double c[] = {4.0, 11.0}, mom[] = {0.0, 0.0};
    const auto psi = gaussian_packet(lat, {particle("a"), particle("b")}, c, mom, 2.0);
    PotentialSpec pair;
    pair.kind = PotentialSpec::Kind::pair_softened_coulomb;
    pair.particles = {0, 1};
    pair.coupling = 1.0;
    const std::vector pairs{pair};
    auto p = params_with(0.5, 0.01);
    p.split_coupling = INFINITY;
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const auto out = try_split(psi, p, rng, pairs);
        ASSERT_EQ(out.parts.size(), 1u);
        EXPECT_FALSE(out.event.has_value());
    }
}

TEST(Split, CutInteractionOfPointCharges) {
    const auto lat = uniform_lattice(2, 1, 20, 1.0);
    DiscreteWaveFunction psi(lat, {particle("a"), particle("b")});
    CellIndexer ix(lat);
    psi[ix.flat({3, 9})] = 1.0;
    psi = normalize(std::move(psi));
    PotentialSpec pair;
    pair.kind = PotentialSpec::Kind::pair_softened_coulomb;
    pair.particles = {0, 1};
    pair.coupling = -2.0;
    pair.softening = 1.0;
    const std::vector pairs{pair};
    const std::vector<std::size_t> cut{0};
    EXPECT_NEAR(cut_interaction(psi, cut, pairs), 2.0 / std::sqrt(37.0), 1e-14);
}

TEST(Split, AnticorrelatedPairEndsDiametricallyOpposite) {
    const std::size_t n = 32;
    const auto lat = uniform_lattice(2, 1, n, 1.0);
    DiscreteWaveFunction psi(lat, {particle("a"), particle("b")});
    CellIndexer ix(lat);
    for (std::size_t c = 0; c < psi.size(); ++c) {
        const double d = lat.displacement(0, double(ix.coord(c, 0)), double(ix.coord(c, 1)) + n / 2.0);
        psi[c] = std::exp(-d * d / 4.0);
    }
    psi = normalize(std::move(psi));
    auto p = params_with(0.05, 0.002);
    p.split_coupling = 1.0;
    Rng rng(6);
    for (int t = 0; t < 5; ++t) {
        const auto [local, ev] = ccqm_localize(psi, p, rng);
        const auto out = try_split(local, p, rng);
        ASSERT_EQ(out.parts.size(), 2u);
        auto peak = [](const DiscreteWaveFunction& q) {
            std::size_t best = 0;
            for (std::size_t i = 0; i < q.size(); ++i)
                if (std::norm(q[i]) > std::norm(q[best])) best = i;
            return double(best);
        };
        const double sep = std::abs(lat.displacement(0, peak(out.parts[0]), peak(out.parts[1])));
        EXPECT_NEAR(sep, n / 2.0, 2.0);
    }
}

TEST(Combine, ZeroCouplingNeverCombines) {
    const auto a = top_hat(8, 0, 4), b = top_hat(8, 4, 8);
    const auto p = params_with(0.5, 0.0);
    Rng rng(7);
    for (int i = 0; i < 100; ++i) EXPECT_FALSE(try_combine(a, b, p, 10.0, 1.0, rng).has_value());
}

TEST(Combine, DistinguishableProductKeepsMarginals) {
    const auto l1 = uniform_lattice(1, 1, 16, 1.0);
    const double c1[] = {5.0}, c2[] = {9.0}, mom[] = {0.2};
    const auto a = gaussian_packet(l1, {particle("a")}, c1, mom, 2.0);
    const auto b = gaussian_packet(l1, {particle("b")}, c2, mom, 3.0);
    auto p = params_with(0.5, 0.0);
    p.combine_coupling = 1e6;
    Rng rng(8);
    const auto joint = try_combine(a, b, p, 1.0, 1.0, rng);
    ASSERT_TRUE(joint.has_value());
    const auto ma = marginal_density(*joint, 0), mb = marginal_density(*joint, 1);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_NEAR(ma[i], std::norm(a[i]), 1e-14);
        EXPECT_NEAR(mb[i], std::norm(b[i]), 1e-14);
    }
    EXPECT_EQ(relative_volume(*joint, 0.0), relative_volume(a, 0.0) * relative_volume(b, 0.0));
}

TEST(Combine, SupportVolumeMultiplies) {
    const auto a = top_hat(20, 2, 7), b = top_hat(20, 3, 10);
    const auto joint = combine(a, b, 1000);
    EXPECT_EQ(relative_volume(joint, 0.01), 35u);
}

TEST(Combine, IdenticalOverlapIsSymmetrized) {
    const auto l1 = uniform_lattice(1, 1, 20, 1.0);
    const double c1[] = {8.0}, c2[] = {11.0}, mom[] = {0.0};
    const auto a = gaussian_packet(l1, {particle("e0", "electron")}, c1, mom, 2.0);
    const auto b = gaussian_packet(l1, {particle("e1", "electron")}, c2, mom, 2.5);
    const auto joint = combine(a, b, 1000);
    EXPECT_LE(max_symmetry_defect(joint), 1e-10);
    // permutation-sum oracle
    DiscreteWaveFunction ref(joint.lattice(), joint.particles());
    CellIndexer ix(joint.lattice());
    for (std::size_t c = 0; c < ref.size(); ++c) {
        const auto i = ix.coord(c, 0), j = ix.coord(c, 1);
        ref[c] = a[i] * b[j] + a[j] * b[i];
    }
    ref = normalize(std::move(ref));
    for (std::size_t c = 0; c < ref.size(); ++c) EXPECT_NEAR(std::abs(joint[c] - ref[c]), 0.0, 1e-14);
}

TEST(Combine, RefusedOverBudget) {
    const auto a = top_hat(64, 0, 4), b = top_hat(64, 4, 8);
    EXPECT_THROW(combine(a, b, 4095), CombineRefused);
    EXPECT_NO_THROW(combine(a, b, 4096));
}

TEST(Transition, MacroscopicArithmetic) {
    const auto r = report_transition(10000, 30);
    EXPECT_EQ(r.vc_log10, 300000);
    ASSERT_EQ(r.rows.size(), 3u);
    EXPECT_EQ(r.rows[1].particles, 5000);
    EXPECT_EQ(r.rows[1].spread_log10_cells, 60);
    EXPECT_TRUE(r.rows[1].side_exact);
    EXPECT_EQ(r.rows[1].side_log10_cm, 5);
    EXPECT_EQ(r.rows[2].spread_log10_cells, 90);
    EXPECT_EQ(r.rows[2].side_log10_km, 10);
    EXPECT_FALSE(report_transition(10, 1, -15, 2).rows[0].side_exact);
    EXPECT_THROW(report_transition(0, 30), DomainError);
}

TEST(Transition, TriggerNeedsTheFullSpreadOnlyForLargeFractions) {
    // Whole system: 10^30 per particle reaches 10^{30 M}; half the system
    // must spread to 10^60 per particle.
    EXPECT_TRUE(log10_trigger(10000, 30, 300000));
    EXPECT_FALSE(log10_trigger(5000, 30, 300000));
    EXPECT_TRUE(log10_trigger(5000, 60, 300000));
    EXPECT_FALSE(log10_trigger(3333, 90, 300000));
    EXPECT_TRUE(log10_trigger(3334, 90, 300000));
}
