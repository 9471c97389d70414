#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "mscdt/numerics/tensor.hpp"

namespace mscdt::evaluation {

/// Binary region of interest; non-zero entries are inside.
using RegionMask = Tensor<std::uint8_t>;

/// 20 log10(max(y) / RMSE(x, y)); +infinity when x == y.
double psnr(const Image& x, const Image& reference);

/// Single-window SSIM from global image statistics with explicit constants.
double ssim(const Image& x, const Image& y, double c1, double c2);
/// c1 = (0.01 R)^2, c2 = (0.03 R)^2 with R the dynamic range of y
/// (R = 1 when y is constant).
double ssim(const Image& x, const Image& y);

/// RMSE(x, y) / (max(y) - min(y)); throws for a constant reference.
double nrmse(const Image& x, const Image& y);

/// max over region_a / mean over region_b.
double cr(const Image& image, const RegionMask& region_a,
          const RegionMask& region_b);

/// Population standard deviation / mean over the region.
double cov(const Image& image, const RegionMask& region);

struct MetricsRow {
  std::string phantom_id;
  std::size_t tracer = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double nrmse = 0.0;
  double cr = 0.0;
  double cov = 0.0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  /// Column means over all rows (psnr averages finite values only; inf
  /// when every row is inf).
  MetricsRow mean() const;
  void write_csv(std::ostream& os) const;
  static MetricsReport read_csv(std::istream& is);
};

/// "inf" for the perfect-match sentinel, otherwise %.17g.
std::string format_metric(double v);

}  // namespace mscdt::evaluation
