#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "sketchhash/corpus.hpp"
#include "sketchhash/rng.hpp"

namespace sketchhash {

/// Procedural stand-in for crowd-sourced vector sketches.
///
/// Each category is a stroke template in the unit square. Every sample draws
/// a random affine pose, per-point jitter, stroke-order shuffles and stroke
/// reversals, and is resampled at an irregular pen speed. A fraction of the
/// samples are replaced by noise: dense scribbles or over-abstract fragments.
struct SynthOptions {
  double jitter = 0.035;          ///< per-point noise, unit-square fraction
  double pose_jitter = 1.0;       ///< multiplier on rotation/shear/aspect ranges
  double outlier_rate = 0.06;
  double stroke_shuffle = 0.35;   ///< probability of permuting stroke order
  double stroke_reverse = 0.3;    ///< per-stroke probability of reversal
  int canvas = 255;               ///< coordinates fall in [0, canvas]
};

/// Names of the built-in templates, in generation order (at most 25).
const std::vector<std::string>& synthetic_category_names();

RawSketch synthesize_sketch(std::size_t category, Rng& rng, const SynthOptions& opts = {});

/// `per_category` sketches for the first `categories` templates, interleaved
/// category by category so any prefix stays roughly balanced.
std::vector<RawSketch> synthesize_corpus(std::size_t categories, std::size_t per_category,
                                         std::uint64_t seed, const SynthOptions& opts = {});

/// Writes records in the newline-delimited `{"word":..,"drawing":..}` format.
void write_sketch_records(std::ostream& out, const std::vector<RawSketch>& sketches);

}  // namespace sketchhash
