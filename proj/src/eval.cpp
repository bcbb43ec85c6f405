#include "sketchhash/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include <json.hpp>

#include "sketchhash/rng.hpp"

namespace sketchhash {

double average_precision(std::span<const std::uint8_t> ranking, bool* no_relevant) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranking.size(); ++k) {
    if (!ranking[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (no_relevant) *no_relevant = hits == 0;
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

double mean_ap(std::span<const Relevance> rankings) {
  if (rankings.empty()) throw PreconditionError("mean_ap over an empty query set");
  double total = 0.0;
  for (const auto& r : rankings) total += average_precision(r);
  return total / static_cast<double>(rankings.size());
}

double precision_at_k(std::span<const Relevance> rankings, std::size_t k) {
  if (rankings.empty()) throw PreconditionError("precision_at_k over an empty query set");
  if (k == 0) throw PreconditionError("precision_at_k needs k >= 1");
  double total = 0.0;
  for (const auto& r : rankings) {
    if (k > r.size()) {
      throw PreconditionError("k = " + std::to_string(k) + " exceeds the gallery size " + std::to_string(r.size()));
    }
    total += static_cast<double>(std::count(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(k), 1)) /
             static_cast<double>(k);
  }
  return total / static_cast<double>(rankings.size());
}

std::vector<PrPoint> pr_curve(std::span<const Relevance> rankings) {
  if (rankings.empty()) return {};
  const std::size_t n = rankings.front().size();
  std::vector<double> recall(n, 0.0), precision(n, 0.0);
  for (const auto& r : rankings) {
    if (r.size() != n) throw ShapeError("pr_curve: rankings of different lengths");
    const auto relevant = static_cast<double>(std::count(r.begin(), r.end(), 1));
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n; ++k) {
      hits += r[k] ? 1 : 0;
      precision[k] += static_cast<double>(hits) / static_cast<double>(k + 1);
      if (relevant > 0) recall[k] += static_cast<double>(hits) / relevant;
    }
  }
  const auto q = static_cast<double>(rankings.size());
  std::vector<PrPoint> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = {k + 1, recall[k] / q, precision[k] / q};
  return out;
}

DistanceRatio intra_inter_ratio(const Eigen::MatrixXd& features, std::span<const int> labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ShapeError("intra_inter_ratio: feature rows and labels differ in count");
  }
  std::vector<int> classes(labels.begin(), labels.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw PreconditionError("intra_inter_ratio needs at least two classes");

  std::unordered_map<int, Eigen::Index> slot;
  for (std::size_t c = 0; c < classes.size(); ++c) slot[classes[c]] = static_cast<Eigen::Index>(c);
  const auto m = static_cast<Eigen::Index>(classes.size());

  Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(m, features.cols());
  Eigen::VectorXd count = Eigen::VectorXd::Zero(m);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = slot[labels[i]];
    centroid.row(c) += features.row(static_cast<Eigen::Index>(i));
    count[c] += 1.0;
  }
  for (Eigen::Index c = 0; c < m; ++c) centroid.row(c) /= count[c];

  Eigen::VectorXd intra = Eigen::VectorXd::Zero(m);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = slot[labels[i]];
    intra[c] += (features.row(static_cast<Eigen::Index>(i)) - centroid.row(c)).norm();
  }
  DistanceRatio out;
  for (Eigen::Index c = 0; c < m; ++c) {
    out.d1 += intra[c] / count[c];
    double inter = 0.0;
    for (Eigen::Index o = 0; o < m; ++o) {
      if (o != c) inter += (centroid.row(c) - centroid.row(o)).norm();
    }
    out.d2 += inter / static_cast<double>(m - 1);
  }
  out.d1 /= static_cast<double>(m);
  out.d2 /= static_cast<double>(m);
  out.ratio = out.d2 > 0.0 ? out.d1 / out.d2 : 0.0;
  return out;
}

std::vector<int> predict(const Eigen::MatrixXd& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double recognition_accuracy(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw ShapeError("recognition_accuracy: logit rows and labels differ in count");
  }
  if (labels.empty()) return 0.0;
  const auto pred = predict(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double recognition_accuracy(const Encoder& encoder, const Corpus& corpus, std::span<const std::uint32_t> ids) {
  const auto refs = select_sketches(corpus, ids);
  std::vector<int> labels;
  for (const auto* s : refs) labels.push_back(s->label);
  return recognition_accuracy(encoder.run(refs).logits, labels);
}

std::vector<Relevance> rank_relevance(const PackedCodes& gallery, const PackedCodes& queries) {
  if (!gallery.has_labels() || !queries.has_labels()) throw PreconditionError("retrieval evaluation needs labels");
  if (gallery.n > 0 && queries.n > 0 && gallery.d != queries.d) {
    throw ShapeError("gallery codes have " + std::to_string(gallery.d) + " bits, queries " + std::to_string(queries.d));
  }
  std::vector<Relevance> out(queries.n);
  for (std::size_t q = 0; q < queries.n; ++q) {
    const auto hits = search(queries.row(q), gallery);
    auto& r = out[q];
    r.resize(hits.size());
    for (std::size_t k = 0; k < hits.size(); ++k) r[k] = gallery.labels[hits[k].index] == queries.labels[q];
  }
  return out;
}

RetrievalMetrics evaluate_retrieval(const PackedCodes& gallery, const PackedCodes& queries, std::size_t k) {
  const auto rel = rank_relevance(gallery, queries);
  RetrievalMetrics m;
  m.queries = queries.n;
  m.gallery = gallery.n;
  m.bits = gallery.d;
  m.k = k;
  for (const auto& r : rel) {
    bool none = false;
    m.ap.push_back(average_precision(r, &none));
    m.zero_relevant_queries += none;
  }
  m.map = mean_ap(rel);
  m.precision_at_k = precision_at_k(rel, k);
  m.pr = pr_curve(rel);
  return m;
}

std::string metrics_json(const RetrievalMetrics& m, const std::string& config_hash) {
  nlohmann::ordered_json j;
  j["map"] = m.map;
  j["precision_at_" + std::to_string(m.k)] = m.precision_at_k;
  j["k"] = m.k;
  j["queries"] = m.queries;
  j["gallery"] = m.gallery;
  j["bits"] = m.bits;
  j["zero_relevant_queries"] = m.zero_relevant_queries;
  j["tie_rule"] = kRankTieRule;
  j["ap_definition"] = "full-ranking";
  j["config_hash"] = config_hash;
  return j.dump(2) + "\n";
}

void write_pr_csv(std::ostream& out, const RetrievalMetrics& m) {
  out << "cutoff,recall,precision\n";
  char buf[96];
  for (const auto& p : m.pr) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", p.cutoff, p.recall, p.precision);
    out << buf;
  }
}

void write_ap_csv(std::ostream& out, const RetrievalMetrics& m, const PackedCodes& queries) {
  out << "query_id,label,ap\n";
  char buf[96];
  for (std::size_t q = 0; q < m.ap.size(); ++q) {
    std::snprintf(buf, sizeof buf, "%llu,%u,%.17g\n", static_cast<unsigned long long>(queries.ids[q]),
                  static_cast<unsigned>(queries.labels[q]), m.ap[q]);
    out << buf;
  }
}

ZeroShotSplit zero_shot_protocol(const Corpus& corpus, std::uint64_t seed, std::size_t holdout,
                                 const SplitQuotas& quotas) {
  const std::size_t total = corpus.categories.size();
  if (total < holdout + 1) {
    throw PreconditionError("zero-shot protocol needs at least " + std::to_string(holdout + 1) + " categories, corpus has " +
                            std::to_string(total));
  }
  std::vector<std::uint16_t> order(total);
  for (std::size_t c = 0; c < total; ++c) order[c] = static_cast<std::uint16_t>(c);
  Rng rng(seed);
  rng.shuffle(order);

  ZeroShotSplit z;
  z.holdout.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout));
  z.seen.assign(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());
  std::sort(z.holdout.begin(), z.holdout.end());
  std::sort(z.seen.begin(), z.seen.end());

  const auto labels = corpus.labels();
  z.train = make_splits(labels, corpus.categories, {quotas.train, quotas.validation, 0, 0},
                        derive_seed(seed, 1), z.seen);
  z.eval = make_splits(labels, corpus.categories, {0, 0, quotas.retrieval, quotas.query},
                       derive_seed(seed, 2), z.holdout);
  return z;
}

SubCorpus restrict_corpus(const Corpus& corpus, std::span<const std::uint16_t> categories) {
  std::vector<int> relabel(corpus.categories.size(), -1);
  SubCorpus sub;
  sub.corpus.offset_scale = corpus.offset_scale;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const auto c = categories[i];
    if (c >= corpus.categories.size()) throw PreconditionError("unknown category index " + std::to_string(c));
    if (relabel[c] >= 0) throw PreconditionError("category listed twice: " + corpus.categories[c]);
    relabel[c] = static_cast<int>(i);
    sub.corpus.categories.push_back(corpus.categories[c]);
  }
  for (std::size_t id = 0; id < corpus.size(); ++id) {
    const int y = relabel[corpus.sketches[id].label];
    if (y < 0) continue;
    auto s = corpus.sketches[id];
    s.label = static_cast<std::uint16_t>(y);
    sub.corpus.sketches.push_back(std::move(s));
    sub.id_map.push_back(static_cast<std::uint32_t>(id));
  }
  return sub;
}

std::vector<std::uint32_t> SubCorpus::translate(std::span<const std::uint32_t> source_ids) const {
  std::unordered_map<std::uint32_t, std::uint32_t> inverse;
  for (std::size_t i = 0; i < id_map.size(); ++i) inverse[id_map[i]] = static_cast<std::uint32_t>(i);
  std::vector<std::uint32_t> out;
  out.reserve(source_ids.size());
  for (auto id : source_ids) {
    const auto it = inverse.find(id);
    if (it == inverse.end()) throw PreconditionError("sketch " + std::to_string(id) + " is outside the restricted corpus");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace sketchhash
