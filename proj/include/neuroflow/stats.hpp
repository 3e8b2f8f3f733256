#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "common.hpp"

namespace neuroflow {

struct TTest
{
    double t = 0.0;
    double p = 1.0; ///< two-sided
    index_t dof = 0;
};

struct SampleSummary
{
    double mean = 0.0;
    double stddev = 0.0; ///< unbiased
    double stderr_mean = 0.0;
};

inline SampleSummary summarize(std::span<const double> values)
{
    const auto n = static_cast<double>(values.size());
    if (values.size() < 2)
        throw Error("stats", "need at least 2 values");
    double mean = 0.0;
    for (double v : values)
        mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values)
        ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    return {mean, sd, sd / std::sqrt(n)};
}

/// Two-sided tail probability of Student's t with `dof` degrees of freedom,
/// P(|T| >= |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2).
inline double student_t_two_sided_p(double t, double dof)
{
    if (!std::isfinite(t))
        return 0.0;
    return boost::math::ibeta(0.5 * dof, 0.5, dof / (dof + t * t));
}

/// Classical one-sample t-test of the mean against `null_mean`.
inline TTest t_test_one_sample(std::span<const double> values, double null_mean = 0.0)
{
    const SampleSummary s = summarize(values);
    if (!(s.stddev > 0.0))
        throw Error("stats", "zero sample variance; t statistic undefined");
    TTest out;
    out.dof = static_cast<index_t>(values.size()) - 1;
    out.t = (s.mean - null_mean) / s.stderr_mean;
    out.p = student_t_two_sided_p(out.t, static_cast<double>(out.dof));
    return out;
}

/// Paired t-test on a - b.
inline TTest t_test_paired(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw Error("dimension", "paired samples differ in length");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        d[i] = a[i] - b[i];
    return t_test_one_sample(d, 0.0);
}

/// Per-order aggregate of session improvements: mean, count of positive
/// sessions and a one-sample t-test against 0 (absent when undefined).
struct ImprovementSummary
{
    double mean = 0.0;
    index_t sessions = 0;
    index_t positive = 0;
    std::optional<TTest> test;
};

inline ImprovementSummary summarize_improvements(std::span<const double> values)
{
    if (values.empty())
        throw Error("empty", "no improvement values");
    ImprovementSummary out;
    out.sessions = static_cast<index_t>(values.size());
    for (double v : values) {
        out.mean += v;
        out.positive += v > 0.0 ? 1 : 0;
    }
    out.mean /= static_cast<double>(values.size());
    if (values.size() >= 2 && summarize(values).stddev > 0.0)
        out.test = t_test_one_sample(values);
    return out;
}

} // namespace neuroflow
