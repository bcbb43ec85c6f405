#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "sketchhash/corpus.hpp"

namespace sketchhash {

/// Binary Shannon entropy in bits; H(0) = H(1) = 0.
double binary_entropy(double p);

/// Entropy of the ink fraction after thresholding the raster at 0.5.
double image_entropy(const RasterSketch& raster);

struct PercentileBounds {
  double lo = 0.0;
  double hi = 0.0;
};

/// Nearest-rank percentiles: the value at 1-based rank ceil(q * n) of the
/// ascending sort (rank clamped to [1, n]).
PercentileBounds percentile_bounds(std::span<const double> values, double lower, double upper);

/// Keep flag per value: true iff lo <= value <= hi.
std::vector<bool> filter_noise(std::span<const double> entropies, PercentileBounds bounds);

/// Entropy statistics for a set of sketches, with bounds per category.
struct EntropyReport {
  std::vector<std::uint32_t> ids;
  std::vector<std::uint16_t> labels;
  std::vector<double> entropy;
  std::vector<bool> kept;
  /// Indexed by label; categories absent from `ids` keep {0, 0}.
  std::vector<PercentileBounds> bounds;

  std::size_t kept_count() const;
};

EntropyReport entropy_report(const Corpus& corpus, std::span<const std::uint32_t> ids,
                             int raster_side, double lower = 0.05, double upper = 0.95);

/// CSV: id,category,entropy,kept,lo,hi
void write_entropy_csv(std::ostream& out, const EntropyReport& report, const Corpus& corpus);

}  // namespace sketchhash
