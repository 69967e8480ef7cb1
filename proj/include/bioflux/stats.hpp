#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace bioflux {

// Inverse standard-normal CDF (Wichura's AS 241, double precision).
double normal_quantile(double p);

// Pearson correlation; nullopt when either input has zero variance.
std::optional<double> pearson(const std::vector<double>& a, const std::vector<double>& b);

double vector_mean(const std::vector<double>& v);

// Sample variance (n-1) and population variance (n) helpers.
double sample_variance(const std::vector<double>& v);

}  // namespace bioflux
