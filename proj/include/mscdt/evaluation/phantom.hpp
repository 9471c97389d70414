#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mscdt/evaluation/metrics.hpp"

namespace mscdt::evaluation {

enum class PatternKind { blobs, ring };

struct PhantomSpec {
  std::size_t size = 32;
  std::size_t tracers = 2;
  std::size_t blob_count = 3;
  std::size_t ring_count = 1;
  /// Pattern per tracer; cycles when shorter than `tracers`.
  std::vector<PatternKind> patterns = {PatternKind::blobs, PatternKind::ring};
  /// Mixing weight per tracer for the dual image; empty means all ones.
  std::vector<double> weights;
  /// Spatial extents must be a multiple of this.
  std::size_t divisor = 2;

  void validate() const;
};

/// Synthetic dual-tracer sample with known ground truth.
struct PhantomPair {
  Image dual;
  std::vector<Image> singles;
  /// "lesion_<k>" and "background_<k>" for every tracer k.
  std::map<std::string, RegionMask> regions;
  std::uint64_t seed = 0;
  PhantomSpec spec;
};

/// Tracer with pattern `blobs` gets smooth Gaussian foci; `ring` gets a
/// cortex-like annulus plus a small hot spot. Each sits on a low uniform
/// background inside a shared elliptical head outline. Fully determined by
/// `seed`.
PhantomPair gen_phantom(std::uint64_t seed, const PhantomSpec& spec);

std::string pattern_name(PatternKind k);
PatternKind parse_pattern(const std::string& name);

}  // namespace mscdt::evaluation
