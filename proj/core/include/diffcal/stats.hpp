#pragma once

#include <span>
#include <vector>

namespace diffcal::stats {

// Ranks 1..n in ascending order; tied values share the mean of their ranks.
std::vector<double> average_ranks(std::span<const double> values);

double mean(std::span<const double> values);

// Pearson product-moment correlation. Returns NaN when either input has zero
// variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Sample quantile with linear interpolation between order statistics
// (Hyndman-Fan type 7). `values` need not be sorted; q in [0, 1].
double quantile_type7(std::vector<double> values, double q);
double quantile_type7_sorted(std::span<const double> sorted, double q);

}  // namespace diffcal::stats
