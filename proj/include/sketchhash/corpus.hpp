#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sketchhash/error.hpp"

namespace sketchhash {

struct Point {
  int x = 0;
  int y = 0;
};

using Polyline = std::vector<Point>;

/// A drawing as recorded: absolute integer polylines plus a category word.
struct RawSketch {
  std::vector<Polyline> strokes;
  std::string category;

  /// Throws PreconditionError unless there is at least one stroke, every
  /// stroke has a point and every coordinate is non-negative.
  void validate() const;
};

/// One time step of a stroke sequence. Exactly one of the pen flags is set:
/// `pen_down` continues the current stroke, `pen_up` jumps to a new one.
struct StrokeStep {
  double dx = 0.0;
  double dy = 0.0;
  std::uint8_t pen_down = 1;
  std::uint8_t pen_up = 0;
};

struct StrokeSketch {
  std::vector<StrokeStep> steps;
  std::uint16_t label = 0;

  void validate() const;
};

/// Single-channel rendering, intensities in [0, 1].
struct RasterSketch {
  using Grid = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Grid grid;
  int side = 0;

  /// The three brightness channels are identical copies; this is a view onto
  /// the stored grid, not extra data.
  const Grid& channel(int /*c*/) const { return grid; }
  Eigen::Index ink_pixels() const { return (grid.array() >= 0.5f).count(); }
};

// ---------------------------------------------------------------------------
// Ingestion

/// Field names of the newline-delimited record format.
struct RecordFormat {
  std::string drawing_field = "drawing";
  std::string category_field = "word";
};

struct ParsedRecords {
  std::vector<RawSketch> sketches;
  /// 1-based source line of each parsed sketch.
  std::vector<std::size_t> lines;
  /// One entry per rejected line; parsing continues past them.
  std::vector<RecordError> errors;
};

/// Parses one JSON object per line. Blank lines are skipped.
ParsedRecords parse_sketch_records(std::istream& in, const RecordFormat& format = {});

/// Converts absolute polylines to offset steps. Offsets are divided by
/// `offset_scale` (1 leaves them raw).
StrokeSketch to_stroke_sequence(const RawSketch& raw, std::uint16_t label,
                                double offset_scale = 1.0);

/// Population standard deviation of all dx and dy values pooled together.
double offset_std(std::span<const StrokeSketch> sketches);

/// Draws the sketch with 1-pixel lines on a `side` x `side` grid, fitted
/// inside a 2-pixel margin with aspect ratio preserved and centred.
RasterSketch rasterize(const StrokeSketch& sketch, int side);

// ---------------------------------------------------------------------------
// Corpus

/// Ingested corpus: category names (label = index), the offset scale that
/// was applied, and the normalised sketches. Sketch ids are indices.
struct Corpus {
  std::vector<std::string> categories;
  double offset_scale = 1.0;
  std::vector<StrokeSketch> sketches;

  std::size_t size() const { return sketches.size(); }
  std::vector<std::uint16_t> labels() const;
};

/// Labels are assigned in lexicographic order of category names; offsets
/// are normalised by the pooled standard deviation over all sketches.
Corpus build_corpus(std::span<const RawSketch> raw);

void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);
void save_corpus(const std::string& path, const Corpus& corpus);
Corpus load_corpus(const std::string& path);

// ---------------------------------------------------------------------------
// Splits

struct SplitQuotas {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t retrieval = 0;
  std::size_t query = 0;

  std::size_t total() const { return train + validation + retrieval + query; }
};

struct DatasetSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> validation;
  std::vector<std::uint32_t> retrieval;
  std::vector<std::uint32_t> query;
  std::uint64_t seed = 0;

  const std::vector<std::uint32_t>& by_name(const std::string& name) const;
};

/// Per category in ascending label order: gather its ids in corpus order,
/// Fisher-Yates shuffle them with one Rng(seed) stream shared across
/// categories, then cut train | validation | retrieval | query in that order.
/// `categories` restricts the split to a subset (empty = all).
DatasetSplit make_splits(std::span<const std::uint16_t> labels,
                         std::span<const std::string> category_names, const SplitQuotas& quotas,
                         std::uint64_t seed, std::span<const std::uint16_t> categories = {});

void write_split_manifest(std::ostream& out, const DatasetSplit& split);
DatasetSplit read_split_manifest(std::istream& in);

}  // namespace sketchhash
