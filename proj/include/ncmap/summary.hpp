#pragma once

// Confidence intervals and paired t-tests for ablation tables.

#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "ncmap/error.hpp"

namespace ncmap {

struct MeanCi {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double half_width = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
};

/// Sample mean and the half-width of its two-sided Student-t interval.
/// Half-width is NaN for fewer than two values.
inline MeanCi mean_ci(const std::vector<double>& v, double level = 0.95) {
  MeanCi out;
  out.n = v.size();
  if (v.empty()) return out;
  double sum = 0.0;
  for (double x : v) sum += x;
  out.mean = sum / static_cast<double>(v.size());
  if (v.size() < 2) return out;
  double ss = 0.0;
  for (double x : v) ss += (x - out.mean) * (x - out.mean);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  const boost::math::students_t dist(static_cast<double>(v.size() - 1));
  const double t = boost::math::quantile(boost::math::complement(dist, (1.0 - level) / 2.0));
  out.half_width = t * sd / std::sqrt(static_cast<double>(v.size()));
  return out;
}

struct PairedTest {
  MeanCi difference;  ///< mean of a - b with its interval
  double t = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();  ///< two-tailed
};

/// Two-tailed paired-sample t-test of a against b.
inline PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b, double level = 0.95) {
  if (a.size() != b.size()) throw ShapeError("paired samples differ in length");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedTest out;
  out.difference = mean_ci(d, level);
  if (d.size() < 2) return out;
  double ss = 0.0;
  for (double x : d) ss += (x - out.difference.mean) * (x - out.difference.mean);
  const double se = std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
  if (se == 0.0) {
    out.t = out.difference.mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), out.difference.mean);
    out.p = out.difference.mean == 0.0 ? 1.0 : 0.0;
    return out;
  }
  out.t = out.difference.mean / se;
  const boost::math::students_t dist(static_cast<double>(d.size() - 1));
  out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  return out;
}

}  // namespace ncmap
