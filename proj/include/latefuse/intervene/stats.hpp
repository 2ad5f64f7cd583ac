#pragma once

#include <cstddef>
#include <span>

namespace latefuse {

double mean(std::span<const double> xs);
// Sample variance (n - 1 denominator). Requires at least two values.
double sample_variance(std::span<const double> xs);
double sample_sd(std::span<const double> xs);

struct EffectSize {
    double d = 0.0;  // (mean_intervention - mean_baseline) / pooled_sd
    double pooled_sd = 0.0;
    double mean_baseline = 0.0;
    double mean_intervention = 0.0;
    double t = 0.0;   // Welch statistic
    double df = 0.0;  // Welch-Satterthwaite degrees of freedom
    double p_value = 1.0;
    std::size_t n_baseline = 0;
    std::size_t n_intervention = 0;
};

// Cohen's d with the pooled standard deviation
//   sqrt(((n1 - 1) s1^2 + (n2 - 1) s2^2) / (n1 + n2 - 2))
// and a two-sided Welch t-test p-value. Negative d means the intervention
// lowered the mean. Throws DataError for fewer than two values per sample
// or zero pooled variance.
EffectSize cohens_d(std::span<const double> baseline, std::span<const double> intervention);

}  // namespace latefuse
