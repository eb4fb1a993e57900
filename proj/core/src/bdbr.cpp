#include <cmath>
#include <cstdio>

#include <Eigen/Dense>
#include <json.hpp>

#include "flowcodec/errors.hpp"
#include "flowcodec/metrics.hpp"

namespace flowcodec {

namespace {

constexpr size_t kMinBdPoints = 4;

std::array<double, 4> fit_cubic(const RdCurve& curve) {
  const auto n = static_cast<Eigen::Index>(curve.points.size());
  Eigen::MatrixXd a(n, 4);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q = curve.points[static_cast<size_t>(i)].quality;
    a(i, 0) = 1.0;
    a(i, 1) = q;
    a(i, 2) = q * q;
    a(i, 3) = q * q * q;
    y(i) = std::log10(curve.points[static_cast<size_t>(i)].bpp);
  }
  const Eigen::Vector4d c = a.colPivHouseholderQr().solve(y);
  return {c(0), c(1), c(2), c(3)};
}

double integral(const std::array<double, 4>& c, double lo, double hi) {
  auto primitive = [&](double q) {
    return c[0] * q + c[1] * q * q / 2 + c[2] * q * q * q / 3 + c[3] * q * q * q * q / 4;
  };
  return primitive(hi) - primitive(lo);
}

void check_curve(const RdCurve& c) {
  if (c.points.size() < kMinBdPoints) {
    throw ArgumentError("bdbr: curve '" + c.label + "' has " + std::to_string(c.points.size()) +
                        " points; at least 4 are required for the cubic fit");
  }
  for (const auto& p : c.points) {
    if (!(p.bpp > 0)) throw ArgumentError("bdbr: curve '" + c.label + "' has a non-positive rate");
  }
}

}  // namespace

BdbrReport bdbr(const RdCurve& anchor, const RdCurve& test) {
  check_curve(anchor);
  check_curve(test);
  if (anchor.points.front().kind != test.points.front().kind) {
    throw ArgumentError("bdbr: curves use different quality metrics");
  }
  auto range = [](const RdCurve& c) {
    double lo = c.points.front().quality, hi = lo;
    for (const auto& p : c.points) {
      lo = std::min(lo, p.quality);
      hi = std::max(hi, p.quality);
    }
    return std::pair{lo, hi};
  };
  const auto [alo, ahi] = range(anchor);
  const auto [tlo, thi] = range(test);
  BdbrReport r;
  r.quality_low = std::max(alo, tlo);
  r.quality_high = std::min(ahi, thi);
  if (!(r.quality_high > r.quality_low)) throw ArgumentError("bdbr: quality ranges do not overlap");
  r.anchor_fit = fit_cubic(anchor);
  r.test_fit = fit_cubic(test);
  const double span = r.quality_high - r.quality_low;
  const double avg = (integral(r.test_fit, r.quality_low, r.quality_high) -
                      integral(r.anchor_fit, r.quality_low, r.quality_high)) / span;
  r.percent = (std::pow(10.0, avg) - 1.0) * 100.0;
  return r;
}

std::string bdbr_json(const BdbrReport& r, const RdCurve& anchor, const RdCurve& test, int indent) {
  nlohmann::json j;
  j["schema"] = "flowcodec.bdbr";
  j["version"] = 1;
  j["bdbr_percent"] = r.percent;
  j["quality_metric"] = to_string(anchor.points.front().kind);
  j["quality_interval"] = {r.quality_low, r.quality_high};
  j["anchor"] = {{"label", anchor.label}, {"fit_log10_rate", r.anchor_fit}};
  j["test"] = {{"label", test.label}, {"fit_log10_rate", r.test_fit}};
  return j.dump(indent);
}

std::string format_percent(double percent) {
  char buf[64];
  if (std::abs(percent) < 0.005) percent = 0.0;  // avoid "-0.00%"
  std::snprintf(buf, sizeof(buf), "%.2f%%", percent);
  return buf;
}

}  // namespace flowcodec
