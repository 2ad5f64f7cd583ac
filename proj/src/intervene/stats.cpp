#include "latefuse/intervene/stats.hpp"

#include <cmath>
#include <string>

#include <boost/math/distributions/students_t.hpp>

#include "latefuse/core/errors.hpp"

namespace latefuse {

double mean(std::span<const double> xs) {
    if (xs.empty()) throw DataError("mean of an empty sample");
    double s = 0.0;
    for (const double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) throw DataError("variance needs at least two values, got " + std::to_string(xs.size()));
    const double m = mean(xs);
    double s = 0.0;
    for (const double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

double sample_sd(std::span<const double> xs) { return std::sqrt(sample_variance(xs)); }

EffectSize cohens_d(std::span<const double> baseline, std::span<const double> intervention) {
    if (baseline.size() < 2 || intervention.size() < 2) {
        throw DataError("Cohen's d needs at least two values per sample (got " + std::to_string(baseline.size()) +
                        " and " + std::to_string(intervention.size()) + ")");
    }
    EffectSize e;
    e.n_baseline = baseline.size();
    e.n_intervention = intervention.size();
    e.mean_baseline = mean(baseline);
    e.mean_intervention = mean(intervention);
    const double v1 = sample_variance(baseline);
    const double v2 = sample_variance(intervention);
    const double n1 = static_cast<double>(e.n_baseline);
    const double n2 = static_cast<double>(e.n_intervention);
    e.pooled_sd = std::sqrt(((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0));
    if (!(e.pooled_sd > 0.0)) throw DataError("undefined effect size: both samples have zero variance");

    const double diff = e.mean_intervention - e.mean_baseline;
    e.d = diff / e.pooled_sd;

    const double a = v1 / n1;
    const double b = v2 / n2;
    const double se = std::sqrt(a + b);
    e.t = diff / se;
    e.df = (a + b) * (a + b) / (a * a / (n1 - 1.0) + b * b / (n2 - 1.0));
    if (diff == 0.0) {
        e.t = 0.0;
        e.p_value = 1.0;
    } else {
        const boost::math::students_t dist(e.df);
        e.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(e.t)));
    }
    return e;
}

}  // namespace latefuse
