#include "factforge/stats.hpp"

#include <algorithm>
#include <functional>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace factforge::stats {

namespace {

double tail_p(double stat, Alternative alternative,
              const std::function<double(double)>& cdf) {
    switch (alternative) {
        case Alternative::Greater: return 1.0 - cdf(stat);
        case Alternative::Less: return cdf(stat);
        case Alternative::TwoSided: return 2.0 * (1.0 - cdf(std::abs(stat)));
    }
    return 1.0;
}

double z_critical(double confidence) {
    boost::math::normal_distribution<double> dist;
    return boost::math::quantile(dist, 0.5 + confidence / 2.0);
}

} // namespace

double mean(std::span<const double> xs) {
    if (xs.empty()) throw DegenerateSample("mean of empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) throw DegenerateSample("variance needs >= 2 observations");
    double mu = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - mu) * (x - mu);
    return s / static_cast<double>(xs.size() - 1);
}

double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

double quantile(std::vector<double> xs, double q) {
    if (xs.empty()) throw DegenerateSample("quantile of empty sample");
    std::sort(xs.begin(), xs.end());
    double pos = q * static_cast<double>(xs.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, xs.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

double normal_cdf(double z) {
    boost::math::normal_distribution<double> dist;
    return boost::math::cdf(dist, z);
}

double student_t_cdf(double t, double dof) {
    boost::math::students_t_distribution<double> dist(dof);
    return boost::math::cdf(dist, t);
}

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b,
                         Alternative alternative) {
    if (a.size() < 2 || b.size() < 2) {
        throw DegenerateSample("welch t-test needs >= 2 observations per sample");
    }
    double va = sample_variance(a), vb = sample_variance(b);
    double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double sa = va / na, sb = vb / nb;
    if (sa + sb <= 0.0) throw DegenerateSample("welch t-test: zero variance");
    TTestResult r;
    r.t = (mean(a) - mean(b)) / std::sqrt(sa + sb);
    r.dof = (sa + sb) * (sa + sb) /
            (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    r.p = tail_p(r.t, alternative, [&](double x) { return student_t_cdf(x, r.dof); });
    return r;
}

ZTestResult z_test_proportions(long long successes_a, long long n_a,
                               long long successes_b, long long n_b,
                               Alternative alternative) {
    if (n_a < 1 || n_b < 1) throw DegenerateSample("z-test needs n >= 1 per group");
    if (successes_a < 0 || successes_a > n_a || successes_b < 0 || successes_b > n_b) {
        throw DegenerateSample("z-test successes out of range");
    }
    double pa = static_cast<double>(successes_a) / static_cast<double>(n_a);
    double pb = static_cast<double>(successes_b) / static_cast<double>(n_b);
    double pooled = static_cast<double>(successes_a + successes_b) /
                    static_cast<double>(n_a + n_b);
    if (pooled <= 0.0 || pooled >= 1.0) {
        throw DegenerateSample("z-test: pooled proportion is 0 or 1");
    }
    double se = std::sqrt(pooled * (1.0 - pooled) *
                          (1.0 / static_cast<double>(n_a) + 1.0 / static_cast<double>(n_b)));
    ZTestResult r;
    r.z = (pa - pb) / se;
    r.p = tail_p(r.z, alternative, normal_cdf);
    return r;
}

Interval wilson_interval(long long successes, long long n, double confidence) {
    if (n < 1) throw DegenerateSample("wilson interval needs n >= 1");
    double z = z_critical(confidence);
    double p = static_cast<double>(successes) / static_cast<double>(n);
    double nn = static_cast<double>(n);
    double denom = 1.0 + z * z / nn;
    double center = (p + z * z / (2.0 * nn)) / denom;
    double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
    Interval iv{center - half, center + half, n == 1};
    iv.lo = std::max(0.0, iv.lo);
    iv.hi = std::min(1.0, iv.hi);
    return iv;
}

Interval mean_interval(std::span<const double> xs, double confidence) {
    if (xs.empty()) throw DegenerateSample("interval of empty sample");
    double mu = mean(xs);
    if (xs.size() < 2) return {mu, mu, true};
    double se = std::sqrt(sample_variance(xs) / static_cast<double>(xs.size()));
    double z = z_critical(confidence);
    return {mu - z * se, mu + z * se, false};
}

} // namespace factforge::stats
