#include "sketchhash/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace sketchhash {

double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

double image_entropy(const RasterSketch& raster) {
  const auto total = raster.grid.size();
  if (total == 0) return 0.0;
  return binary_entropy(static_cast<double>(raster.ink_pixels()) / static_cast<double>(total));
}

PercentileBounds percentile_bounds(std::span<const double> values, double lower, double upper) {
  if (values.empty()) throw PreconditionError("percentile of an empty list");
  if (!(lower >= 0.0 && lower < upper && upper <= 1.0)) {
    throw PreconditionError("percentiles must satisfy 0 <= lower < upper <= 1");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  auto at = [&](double q) {
    // The 1e-9 slack keeps exact products such as 0.95 * 100 on their rank.
    auto rank = static_cast<std::ptrdiff_t>(std::ceil(q * n - 1e-9));
    rank = std::clamp<std::ptrdiff_t>(rank, 1, static_cast<std::ptrdiff_t>(sorted.size()));
    return sorted[static_cast<std::size_t>(rank - 1)];
  };
  return {at(lower), at(upper)};
}

std::vector<bool> filter_noise(std::span<const double> entropies, PercentileBounds bounds) {
  std::vector<bool> keep(entropies.size());
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    keep[i] = entropies[i] >= bounds.lo && entropies[i] <= bounds.hi;
  }
  return keep;
}

std::size_t EntropyReport::kept_count() const {
  return static_cast<std::size_t>(std::count(kept.begin(), kept.end(), true));
}

EntropyReport entropy_report(const Corpus& corpus, std::span<const std::uint32_t> ids,
                             int raster_side, double lower, double upper) {
  EntropyReport report;
  report.ids.assign(ids.begin(), ids.end());
  report.bounds.assign(corpus.categories.size(), {});
  report.kept.assign(ids.size(), false);

  std::vector<std::vector<std::size_t>> by_label(corpus.categories.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& sketch = corpus.sketches.at(ids[i]);
    report.labels.push_back(sketch.label);
    report.entropy.push_back(image_entropy(rasterize(sketch, raster_side)));
    by_label.at(sketch.label).push_back(i);
  }
  for (std::size_t c = 0; c < by_label.size(); ++c) {
    if (by_label[c].empty()) continue;
    std::vector<double> values;
    for (auto i : by_label[c]) values.push_back(report.entropy[i]);
    report.bounds[c] = percentile_bounds(values, lower, upper);
    const auto keep = filter_noise(values, report.bounds[c]);
    for (std::size_t k = 0; k < keep.size(); ++k) report.kept[by_label[c][k]] = keep[k];
  }
  return report;
}

void write_entropy_csv(std::ostream& out, const EntropyReport& report, const Corpus& corpus) {
  out << "id,category,entropy,kept,lo,hi\n";
  char buf[64];
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    const auto& b = report.bounds[report.labels[i]];
    out << report.ids[i] << ',' << corpus.categories[report.labels[i]] << ',';
    std::snprintf(buf, sizeof(buf), "%.17g", report.entropy[i]);
    out << buf << ',' << (report.kept[i] ? 1 : 0) << ',';
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", b.lo, b.hi);
    out << buf << '\n';
  }
}

}  // namespace sketchhash
