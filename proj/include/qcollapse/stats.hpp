#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "errors.hpp"

namespace qcollapse::stats {

struct Verdict {
    std::string kind;
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
    double alpha = 0.01;
    bool pass = true;
};

/// Pearson chi-square of observed counts against expected probabilities.
/// Adjacent bins are merged (in order) until each expected count is at
/// least `min_expected`; a remainder below it joins the last merged bin.
inline Verdict chi_square(std::span<const double> observed, std::span<const double> probabilities,
                          double alpha = 0.01, double min_expected = 5.0) {
    if (observed.size() != probabilities.size() || observed.empty())
        throw DomainError("chi-square needs matching, nonempty observed and expected bins");
    double n = 0.0, ptot = 0.0;
    for (double o : observed) n += o;
    for (double p : probabilities) {
        if (!(p >= 0.0)) throw DomainError("expected probabilities must be nonnegative");
        ptot += p;
    }
    if (!(n > 0.0) || !(ptot > 0.0)) throw DomainError("chi-square needs positive totals");
    std::vector<double> O, E;
    double o_acc = 0.0, e_acc = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        o_acc += observed[i];
        e_acc += n * probabilities[i] / ptot;
        if (e_acc >= min_expected) {
            O.push_back(o_acc);
            E.push_back(e_acc);
            o_acc = e_acc = 0.0;
        }
    }
    if (o_acc > 0.0 || e_acc > 0.0) {
        if (E.empty()) {
            O.push_back(o_acc);
            E.push_back(e_acc);
        } else {
            O.back() += o_acc;
            E.back() += e_acc;
        }
    }
    Verdict v;
    v.kind = "chi-square";
    v.alpha = alpha;
    v.dof = static_cast<double>(E.size()) - 1.0;
    for (std::size_t i = 0; i < E.size(); ++i) {
        if (E[i] == 0.0) {
            if (O[i] > 0.0) v.statistic = INFINITY;
            continue;
        }
        v.statistic += (O[i] - E[i]) * (O[i] - E[i]) / E[i];
    }
    if (v.dof < 1.0) {
        v.p_value = 1.0;
    } else if (!std::isfinite(v.statistic)) {
        v.p_value = 0.0;
    } else {
        v.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(v.dof), v.statistic));
    }
    v.pass = v.p_value >= alpha;
    return v;
}

/// Two-sided normal-approximation binomial test; `statistic` is the z score
/// and `pass` additionally requires |z| <= max_sigma.
inline Verdict binomial(double successes, double trials, double p0, double alpha = 0.01, double max_sigma = 3.0) {
    if (!(trials > 0.0) || !(p0 > 0.0 && p0 < 1.0) || successes < 0.0 || successes > trials)
        throw DomainError("binomial test needs 0 <= k <= n, n > 0 and 0 < p0 < 1");
    Verdict v;
    v.kind = "binomial";
    v.alpha = alpha;
    v.dof = trials;
    v.statistic = (successes - trials * p0) / std::sqrt(trials * p0 * (1.0 - p0));
    v.p_value = std::erfc(std::abs(v.statistic) / std::sqrt(2.0));
    v.pass = std::abs(v.statistic) <= max_sigma && v.p_value >= alpha;
    return v;
}

/// Welch two-sample t test of equal means.
inline Verdict two_sample(std::span<const double> a, std::span<const double> b, double alpha = 0.01) {
    if (a.size() < 2 || b.size() < 2) throw DomainError("two-sample test needs at least two values per sample");
    auto moments = [](std::span<const double> x) {
        double m = 0.0;
        for (double v : x) m += v;
        m /= static_cast<double>(x.size());
        double s = 0.0;
        for (double v : x) s += (v - m) * (v - m);
        return std::pair{m, s / static_cast<double>(x.size() - 1)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double se2 = va / na + vb / nb;
    Verdict v;
    v.kind = "two-sample";
    v.alpha = alpha;
    if (se2 == 0.0) {
        v.statistic = ma == mb ? 0.0 : INFINITY;
        v.dof = na + nb - 2.0;
        v.p_value = ma == mb ? 1.0 : 0.0;
    } else {
        v.statistic = (ma - mb) / std::sqrt(se2);
        v.dof = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
        v.p_value = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(v.dof),
                                                                    std::abs(v.statistic)));
    }
    v.pass = v.p_value >= alpha;
    return v;
}

/// One-sided test that the mean of `x` exceeds zero; passes when the lower
/// confidence bound at level 1 - alpha is positive.
inline Verdict mean_positive(std::span<const double> x, double alpha = 0.01) {
    if (x.size() < 2) throw DomainError("mean test needs at least two values");
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    s /= static_cast<double>(x.size() - 1);
    Verdict v;
    v.kind = "mean-positive";
    v.alpha = alpha;
    v.dof = static_cast<double>(x.size() - 1);
    v.statistic = s > 0.0 ? m / std::sqrt(s / static_cast<double>(x.size())) : (m > 0.0 ? INFINITY : 0.0);
    v.p_value = std::isfinite(v.statistic)
                    ? boost::math::cdf(boost::math::complement(boost::math::students_t(v.dof), v.statistic))
                    : (m > 0.0 ? 0.0 : 1.0);
    v.pass = v.p_value < alpha;
    return v;
}

}  // namespace qcollapse::stats
