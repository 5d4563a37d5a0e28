#pragma once

#include <cstddef>
#include <vector>

namespace kdream::stats {

/// n observations of a p-vector, one row each.
using Sample = std::vector<std::vector<double>>;

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
/// P(F > f) for F ~ F(d1, d2).
double f_survival(double f, double d1, double d2);
/// Two-sided P(|T| > |t|) for Student t with df degrees of freedom.
double t_two_sided(double t, double df);

struct HotellingResult {
  double t2 = 0;
  double f = 0;
  double p_value = 1;
  double df1 = 0;
  double df2 = 0;
};

/// Two-sample Hotelling T² with pooled covariance; `ridge` is added to its diagonal.
HotellingResult hotelling_t2(const Sample& a, const Sample& b, double ridge = 0.0);

/// √((μ_A − μ_B)ᵀ S⁻¹ (μ_A − μ_B)) with the pooled covariance S.
double mahalanobis_between(const Sample& a, const Sample& b, double ridge = 0.0);

struct MeanStd {
  double mean = 0;
  /// Sample standard deviation (n − 1); 0 for a single value.
  double std = 0;
};

/// Mean and std of the ⌈fraction·n⌉ smallest scores.
MeanStd top_fraction_stats(std::vector<double> scores, double fraction = 0.05);

struct Correlation {
  double r = 0;
  double p_value = 1;
};

Correlation pearson_r(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace kdream::stats
