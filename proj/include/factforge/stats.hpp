#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "factforge/errors.hpp"

namespace factforge::stats {

enum class Alternative { Greater, Less, TwoSided };

struct TTestResult {
    double t;
    double dof;
    double p;
};

struct ZTestResult {
    double z;
    double p;
};

struct Interval {
    double lo;
    double hi;
    bool degenerate = false; // single observation, no spread information
};

double mean(std::span<const double> xs);
double sample_variance(std::span<const double> xs);
double median(std::vector<double> xs);
double quantile(std::vector<double> xs, double q);

// cumulative distribution tails used by the tests
double normal_cdf(double z);
double student_t_cdf(double t, double dof);

// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of
// freedom. Alternative::Greater tests mean(a) > mean(b).
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b,
                         Alternative alternative);

// Two-proportion z-test with pooled variance.
ZTestResult z_test_proportions(long long successes_a, long long n_a,
                               long long successes_b, long long n_b,
                               Alternative alternative);

// Wilson score interval for a proportion.
Interval wilson_interval(long long successes, long long n, double confidence = 0.95);

// Normal-approximation interval for a sample mean.
Interval mean_interval(std::span<const double> xs, double confidence = 0.95);

} // namespace factforge::stats
