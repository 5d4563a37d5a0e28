#include "kdream/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kdream/error.hpp"

namespace kdream::stats {

namespace {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw NumericalError("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  require(a > 0 && b > 0, "incomplete beta needs a, b > 0");
  require(x >= 0 && x <= 1, "incomplete beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double f_survival(double f, double d1, double d2) {
  if (f <= 0) return 1.0;
  return incomplete_beta(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * f));
}

double t_two_sided(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_matrix(const Sample& s, std::size_t p, const char* name) {
  Mat m(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].size() != p)
      throw DimensionError(std::string("sample ") + name + " row " + std::to_string(i) + " has dimension " +
                           std::to_string(s[i].size()) + ", expected " + std::to_string(p));
    for (std::size_t j = 0; j < p; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s[i][j];
  }
  return m;
}

struct Pooled {
  Vec diff;
  Mat cov;
  double na, nb;
  std::size_t p;
};

Pooled pooled(const Sample& a, const Sample& b, double ridge) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::kInvalidArgument, "both samples must be non-empty");
  const std::size_t p = a[0].size();
  require(p >= 1, "samples must have at least one variable");
  const Mat A = to_matrix(a, p, "A"), B = to_matrix(b, p, "B");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  if (na + nb - 2 < static_cast<double>(p))
    throw Error(ErrorKind::kInvalidArgument, "pooled covariance needs n_A + n_B - 2 >= p");
  const Vec ma = A.colwise().mean(), mb = B.colwise().mean();
  const Mat ca = A.rowwise() - ma.transpose(), cb = B.rowwise() - mb.transpose();
  Mat s = (ca.transpose() * ca + cb.transpose() * cb) / (na + nb - 2);
  s.diagonal().array() += ridge;
  return {ma - mb, s, na, nb, p};
}

// dᵀ S⁻¹ d; singular S is an error.
double quadratic_form(const Mat& s, const Vec& d) {
  Eigen::LDLT<Mat> ldlt(s);
  const double scale = s.diagonal().cwiseAbs().maxCoeff();
  // rcond() alone misses exact zero pivots, which the solver skips silently.
  const Vec pivots = ldlt.vectorD();
  const bool degenerate = !(pivots.minCoeff() > 1e-12 * pivots.cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || !(scale > 0) || degenerate || ldlt.rcond() < 1e-12 || !ldlt.isPositive())
    throw NumericalError("pooled covariance is singular; rerun with a ridge (e.g. --ridge 1e-8)");
  return d.dot(ldlt.solve(d));
}

}  // namespace

HotellingResult hotelling_t2(const Sample& a, const Sample& b, double ridge) {
  const auto pl = pooled(a, b, ridge);
  const double p = static_cast<double>(pl.p);
  HotellingResult r;
  r.t2 = pl.na * pl.nb / (pl.na + pl.nb) * quadratic_form(pl.cov, pl.diff);
  r.df1 = p;
  r.df2 = pl.na + pl.nb - p - 1;
  if (r.df2 <= 0) throw Error(ErrorKind::kInvalidArgument, "F conversion needs n_A + n_B - p - 1 > 0");
  r.f = r.df2 / ((pl.na + pl.nb - 2) * p) * r.t2;
  r.p_value = f_survival(r.f, r.df1, r.df2);
  return r;
}

double mahalanobis_between(const Sample& a, const Sample& b, double ridge) {
  const auto pl = pooled(a, b, ridge);
  return std::sqrt(std::max(0.0, quadratic_form(pl.cov, pl.diff)));
}

MeanStd top_fraction_stats(std::vector<double> scores, double fraction) {
  if (scores.empty()) throw Error(ErrorKind::kInvalidArgument, "top-fraction statistics need at least one score");
  require(fraction > 0 && fraction <= 1, "fraction must lie in (0, 1]");
  std::sort(scores.begin(), scores.end());
  const double n = static_cast<double>(scores.size());
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(fraction * n - 1e-9)));
  MeanStd out;
  out.mean = std::accumulate(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / static_cast<double>(k);
  if (k > 1) {
    double ss = 0;
    for (std::size_t i = 0; i < k; ++i) ss += (scores[i] - out.mean) * (scores[i] - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(k - 1));
  }
  return out;
}

Correlation pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw DimensionError("pearson_r inputs have lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  require(x.size() >= 3, "pearson_r needs at least 3 pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw NumericalError("pearson_r is undefined for a zero-variance input");
  Correlation c;
  c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double df = n - 2;
  c.p_value = std::abs(c.r) == 1.0 ? 0.0 : t_two_sided(c.r * std::sqrt(df / (1 - c.r * c.r)), df);
  return c;
}

}  // namespace kdream::stats
