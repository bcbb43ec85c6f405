#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sketchhash/hamming.hpp"

namespace sketchhash {

/// Relevance flags of one query's full ranking (1 = same category).
using Relevance = std::vector<std::uint8_t>;

/// (1/R) * sum over relevant ranks k of precision@k. A ranking with no
/// relevant item scores 0 and sets *no_relevant.
double average_precision(std::span<const std::uint8_t> ranking, bool* no_relevant = nullptr);
double mean_ap(std::span<const Relevance> rankings);
/// Mean over queries of (relevant in top k) / k; throws if k exceeds a ranking.
double precision_at_k(std::span<const Relevance> rankings, std::size_t k);

struct PrPoint {
  std::size_t cutoff = 0;
  double recall = 0.0;
  double precision = 0.0;
};
/// Precision and recall at every cutoff 1..n, averaged over queries at equal
/// cutoffs. All rankings must share one length.
std::vector<PrPoint> pr_curve(std::span<const Relevance> rankings);

struct DistanceRatio {
  double d1 = 0.0;  ///< mean over classes of mean distance of members to their centroid
  double d2 = 0.0;  ///< mean over classes of mean distance from the centroid to the others
  double ratio = 0.0;
};
DistanceRatio intra_inter_ratio(const Eigen::MatrixXd& features, std::span<const int> labels);

/// argmax over each row of `logits`, lowest index on ties.
std::vector<int> predict(const Eigen::MatrixXd& logits);
double recognition_accuracy(const Eigen::MatrixXd& logits, std::span<const int> labels);
double recognition_accuracy(const Encoder& encoder, const Corpus& corpus, std::span<const std::uint32_t> ids);

// ---------------------------------------------------------------------------
// Retrieval

constexpr const char* kRankTieRule = "distance-asc,gallery-index-asc";
constexpr const char* kArgmaxTieRule = "lowest-class-index";

/// Relevance of the full gallery ranking for every query. Both code sets
/// must be labeled.
std::vector<Relevance> rank_relevance(const PackedCodes& gallery, const PackedCodes& queries);

struct RetrievalMetrics {
  std::size_t queries = 0;
  std::size_t gallery = 0;
  int bits = 0;
  std::size_t k = 0;
  double map = 0.0;
  double precision_at_k = 0.0;
  std::size_t zero_relevant_queries = 0;
  std::vector<double> ap;  ///< per query, in query order
  std::vector<PrPoint> pr;
};

RetrievalMetrics evaluate_retrieval(const PackedCodes& gallery, const PackedCodes& queries, std::size_t k = 200);

/// Deterministic JSON (no timings): map, precision_at_<k>, counts, tie rule.
std::string metrics_json(const RetrievalMetrics& m, const std::string& config_hash);
void write_pr_csv(std::ostream& out, const RetrievalMetrics& m);
void write_ap_csv(std::ostream& out, const RetrievalMetrics& m, const PackedCodes& queries);

// ---------------------------------------------------------------------------
// Zero-shot

struct ZeroShotSplit {
  std::vector<std::uint16_t> seen;     ///< training categories, ascending
  std::vector<std::uint16_t> holdout;  ///< evaluation categories, ascending
  DatasetSplit train;  ///< train/validation ids over `seen` only
  DatasetSplit eval;   ///< retrieval/query ids over `holdout` only
};

/// Picks `holdout` categories with Rng(seed) (Fisher-Yates over the category
/// indices, first `holdout` taken) and splits both sides with `quotas`.
ZeroShotSplit zero_shot_protocol(const Corpus& corpus, std::uint64_t seed, std::size_t holdout,
                                 const SplitQuotas& quotas);

/// Corpus restricted to `categories`, relabeled 0..k-1 in the given order.
/// `id_map[new id] = old id`.
struct SubCorpus {
  Corpus corpus;
  std::vector<std::uint32_t> id_map;

  /// Maps ids of the source corpus to ids of the restricted one.
  std::vector<std::uint32_t> translate(std::span<const std::uint32_t> source_ids) const;
};
SubCorpus restrict_corpus(const Corpus& corpus, std::span<const std::uint16_t> categories);

}  // namespace sketchhash
