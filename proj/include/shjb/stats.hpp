#pragma once

#include <span>
#include <vector>

namespace shjb {

// Two-sided 99% normal quantile used for every reported confidence interval.
inline constexpr double kCiZ = 2.5758293035489004;

double mean(std::span<const double> v);
double sample_sd(std::span<const double> v);
// Half-width of the normal-approximation interval for the mean.
double ci_halfwidth(std::span<const double> v, double z = kCiZ);

// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace shjb
