#include "mscdt/evaluation/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mscdt/numerics/rng.hpp"

namespace mscdt::evaluation {

void PhantomSpec::validate() const {
  if (size < 8) throw std::invalid_argument("phantom: size must be >= 8");
  if (divisor == 0 || size % divisor != 0) {
    throw std::invalid_argument("phantom: size " + std::to_string(size) +
                                " not divisible by " + std::to_string(divisor));
  }
  if (tracers == 0) throw std::invalid_argument("phantom: tracers must be >= 1");
  if (patterns.empty()) throw std::invalid_argument("phantom: no patterns");
  if (!weights.empty() && weights.size() != tracers) {
    throw std::invalid_argument("phantom: one weight per tracer required");
  }
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("phantom: weights must be > 0");
  }
  if (blob_count == 0 || ring_count == 0) {
    throw std::invalid_argument("phantom: blob_count and ring_count must be >= 1");
  }
}

std::string pattern_name(PatternKind k) {
  return k == PatternKind::blobs ? "blobs" : "ring";
}

PatternKind parse_pattern(const std::string& name) {
  if (name == "blobs") return PatternKind::blobs;
  if (name == "ring") return PatternKind::ring;
  throw std::invalid_argument("phantom: unknown pattern '" + name + "'");
}

namespace {

struct Grid {
  std::size_t n;
  // Normalized coordinate of pixel centre in [-1, 1].
  double coord(std::size_t i) const {
    return (2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n)) - 1.0;
  }
};

// Structure (above-background) activity and lesion marker per tracer.
struct Pattern {
  Image structure;
  Image lesion;  // activity of the designated lesion component
};

Pattern draw_blobs(const Grid& g, std::size_t count, CounterRng rng) {
  Pattern p{Image(Shape{g.n, g.n}), Image(Shape{g.n, g.n})};
  for (std::size_t b = 0; b < count; ++b) {
    const double r = rng.uniform(0.0, 0.45);
    const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double cx = r * std::cos(th), cy = r * std::sin(th) * 0.8;
    const double sigma = rng.uniform(0.10, 0.22);
    const double amp = b == 0 ? rng.uniform(0.8, 1.0) : rng.uniform(0.35, 0.7);
    for (std::size_t y = 0; y < g.n; ++y) {
      for (std::size_t x = 0; x < g.n; ++x) {
        const double dx = g.coord(x) - cx, dy = g.coord(y) - cy;
        const double v = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        p.structure.at(y, x) += v;
        if (b == 0) p.lesion.at(y, x) = v;
      }
    }
  }
  return p;
}

Pattern draw_ring(const Grid& g, std::size_t count, CounterRng rng) {
  Pattern p{Image(Shape{g.n, g.n}), Image(Shape{g.n, g.n})};
  for (std::size_t k = 0; k < count; ++k) {
    const double radius = rng.uniform(0.45, 0.65) - 0.12 * static_cast<double>(k);
    const double width = rng.uniform(0.06, 0.10);
    const double amp = rng.uniform(0.45, 0.65);
    const double wobble = rng.uniform(0.0, 0.35);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t y = 0; y < g.n; ++y) {
      for (std::size_t x = 0; x < g.n; ++x) {
        const double dx = g.coord(x), dy = g.coord(y) / 0.85;
        const double rr = std::sqrt(dx * dx + dy * dy);
        const double th = std::atan2(dy, dx);
        const double d = rr - radius;
        const double mod = 1.0 + wobble * std::cos(3.0 * th + phase);
        p.structure.at(y, x) += amp * mod * std::exp(-(d * d) / (2.0 * width * width));
      }
    }
  }
  // Hot spot on the shell: the lesion component of this tracer.
  const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double rad = rng.uniform(0.35, 0.5);
  const double cx = rad * std::cos(th), cy = rad * std::sin(th) * 0.85;
  const double amp = rng.uniform(0.5, 0.7);
  const double sigma = rng.uniform(0.07, 0.1);
  for (std::size_t y = 0; y < g.n; ++y) {
    for (std::size_t x = 0; x < g.n; ++x) {
      const double dx = g.coord(x) - cx, dy = g.coord(y) - cy;
      const double v = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      p.structure.at(y, x) += v;
      p.lesion.at(y, x) = v;
    }
  }
  return p;
}

}  // namespace

PhantomPair gen_phantom(std::uint64_t seed, const PhantomSpec& spec) {
  spec.validate();
  const Grid g{spec.size};
  CounterRng root(seed);
  PhantomPair out;
  out.seed = seed;
  out.spec = spec;

  // Shared head outline.
  CounterRng head_rng = root.split("head");
  const double ax = head_rng.uniform(0.82, 0.92);
  const double ay = head_rng.uniform(0.88, 0.96);
  RegionMask head(Shape{g.n, g.n});
  for (std::size_t y = 0; y < g.n; ++y) {
    for (std::size_t x = 0; x < g.n; ++x) {
      const double u = g.coord(x) / ax, v = g.coord(y) / ay;
      head.at(y, x) = (u * u + v * v) <= 1.0 ? 1 : 0;
    }
  }

  out.dual = Image(Shape{g.n, g.n});
  for (std::size_t k = 0; k < spec.tracers; ++k) {
    const PatternKind kind = spec.patterns[k % spec.patterns.size()];
    CounterRng rng = root.split("tracer").split(k);
    const double background = rng.uniform(0.04, 0.08);
    Pattern pat = kind == PatternKind::blobs
                      ? draw_blobs(g, spec.blob_count, rng.split("blobs"))
                      : draw_ring(g, spec.ring_count, rng.split("ring"));

    Image single(Shape{g.n, g.n});
    RegionMask lesion(Shape{g.n, g.n});
    RegionMask bg(Shape{g.n, g.n});
    const double lesion_peak =
        *std::max_element(pat.lesion.data().begin(), pat.lesion.data().end());
    for (std::size_t i = 0; i < single.size(); ++i) {
      if (head[i] == 0) continue;
      // Snap to a 2^-24 grid so tracer sums are exact in binary64.
      single[i] = std::round((background + pat.structure[i]) * 0x1.0p24) * 0x1.0p-24;
      lesion[i] = pat.lesion[i] >= 0.5 * lesion_peak ? 1 : 0;
      bg[i] = pat.structure[i] < 1e-3 ? 1 : 0;
    }
    // Fall back to the lowest-activity tenth of the head when structure
    // covers everything.
    if (std::all_of(bg.data().begin(), bg.data().end(), [](auto v) { return v == 0; })) {
      std::vector<double> inside;
      for (std::size_t i = 0; i < single.size(); ++i) {
        if (head[i]) inside.push_back(pat.structure[i]);
      }
      std::sort(inside.begin(), inside.end());
      const double cut = inside[inside.size() / 10];
      for (std::size_t i = 0; i < single.size(); ++i) {
        bg[i] = head[i] && pat.structure[i] <= cut ? 1 : 0;
      }
    }
    const double w = spec.weights.empty() ? 1.0 : spec.weights[k];
    for (std::size_t i = 0; i < single.size(); ++i) out.dual[i] += w * single[i];
    out.regions.emplace("lesion_" + std::to_string(k), std::move(lesion));
    out.regions.emplace("background_" + std::to_string(k), std::move(bg));
    out.singles.push_back(std::move(single));
  }
  return out;
}

}  // namespace mscdt::evaluation
