#include "mscdt/evaluation/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mscdt::evaluation {
namespace {

void require_pair(const Image& x, const Image& y, const char* op) {
  if (x.empty() || y.empty()) {
    throw std::invalid_argument(std::string(op) + ": empty image");
  }
  require_same_shape(x, y, op);
}

double mse(const Image& x, const Image& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

struct RegionStats {
  std::size_t count = 0;
  double max = -std::numeric_limits<double>::infinity();
  double mean = 0.0;
  double stddev = 0.0;
};

RegionStats region_stats(const Image& image, const RegionMask& region,
                         const char* op) {
  if (image.shape() != region.shape()) {
    throw ShapeError(std::string(op) + ": region shape " +
                     shape_string(region.shape()) + " vs image " +
                     shape_string(image.shape()));
  }
  RegionStats s;
  double sum = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (region[i] == 0) continue;
    ++s.count;
    sum += image[i];
    s.max = std::max(s.max, image[i]);
  }
  if (s.count == 0) throw std::invalid_argument(std::string(op) + ": empty region");
  s.mean = sum / static_cast<double>(s.count);
  double var = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (region[i] == 0) continue;
    const double d = image[i] - s.mean;
    var += d * d;
  }
  s.stddev = std::sqrt(var / static_cast<double>(s.count));
  return s;
}

}  // namespace

double psnr(const Image& x, const Image& reference) {
  require_pair(x, reference, "psnr");
  const double e = mse(x, reference);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  const double peak =
      *std::max_element(reference.data().begin(), reference.data().end());
  return 20.0 * std::log10(peak / std::sqrt(e));
}

double ssim(const Image& x, const Image& y, double c1, double c2) {
  require_pair(x, y, "ssim");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
         ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double ssim(const Image& x, const Image& y) {
  require_pair(x, y, "ssim");
  const auto [lo, hi] = std::minmax_element(y.data().begin(), y.data().end());
  double range = *hi - *lo;
  if (range <= 0.0) range = 1.0;
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  return ssim(x, y, c1, c2);
}

double nrmse(const Image& x, const Image& y) {
  require_pair(x, y, "nrmse");
  const auto [lo, hi] = std::minmax_element(y.data().begin(), y.data().end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) {
    throw std::invalid_argument("nrmse: reference has zero dynamic range");
  }
  return std::sqrt(mse(x, y)) / range;
}

double cr(const Image& image, const RegionMask& region_a,
          const RegionMask& region_b) {
  const RegionStats a = region_stats(image, region_a, "cr");
  const RegionStats b = region_stats(image, region_b, "cr");
  if (b.mean == 0.0) throw std::domain_error("cr: zero mean in reference region");
  return a.max / b.mean;
}

double cov(const Image& image, const RegionMask& region) {
  const RegionStats s = region_stats(image, region, "cov");
  if (s.mean == 0.0) throw std::domain_error("cov: zero mean in region");
  return s.stddev / s.mean;
}

MetricsRow MetricsReport::mean() const {
  MetricsRow m;
  m.phantom_id = "mean";
  if (rows.empty()) return m;
  std::size_t finite_psnr = 0;
  for (const auto& r : rows) {
    if (std::isfinite(r.psnr_db)) {
      m.psnr_db += r.psnr_db;
      ++finite_psnr;
    }
    m.ssim += r.ssim;
    m.nrmse += r.nrmse;
    m.cr += r.cr;
    m.cov += r.cov;
  }
  const double n = static_cast<double>(rows.size());
  m.psnr_db = finite_psnr == 0 ? std::numeric_limits<double>::infinity()
                               : m.psnr_db / static_cast<double>(finite_psnr);
  m.ssim /= n;
  m.nrmse /= n;
  m.cr /= n;
  m.cov /= n;
  return m;
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void MetricsReport::write_csv(std::ostream& os) const {
  os << "phantom_id,tracer,psnr_db,ssim,nrmse,cr,cov\n";
  for (const auto& r : rows) {
    os << r.phantom_id << ',' << r.tracer << ',' << format_metric(r.psnr_db)
       << ',' << format_metric(r.ssim) << ',' << format_metric(r.nrmse) << ','
       << format_metric(r.cr) << ',' << format_metric(r.cov) << '\n';
  }
}

MetricsReport MetricsReport::read_csv(std::istream& is) {
  MetricsReport rep;
  std::string line;
  if (!std::getline(is, line)) return rep;
  auto num = [](const std::string& s) { return std::stod(s); };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[7];
    for (auto& cell : f) {
      if (!std::getline(ss, cell, ',')) {
        throw std::runtime_error("metrics csv: short row: " + line);
      }
    }
    rep.rows.push_back({f[0], static_cast<std::size_t>(std::stoul(f[1])),
                        num(f[2]), num(f[3]), num(f[4]), num(f[5]), num(f[6])});
  }
  return rep;
}

}  // namespace mscdt::evaluation
