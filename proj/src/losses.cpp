#include "sketchhash/losses.hpp"

#include <cmath>

namespace sketchhash {

void LossWeights::validate() const {
  if (!(scl >= 0.0) || !(ql >= 0.0)) throw PreconditionError("loss weights must be non-negative");
}

Var cel(const Var& f, std::span<const int> labels, const Var& w, const Var& b) {
  return softmax_cross_entropy(add_bias(matmul(f, w), b), labels);
}

namespace {

// mean_i ||f_i - target_i||^2 with the target held constant
Var mean_sq_distance(const Var& f, const Tensor& target, const char* what) {
  if (f.value().rank() != 2 || f.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": features " + shape_string(f.shape()) + " vs targets " +
                     shape_string(target.shape()));
  }
  const auto n = static_cast<double>(f.shape()[0]);
  return affine(sum(square(f - f.graph().constant(target))), 1.0 / n);
}

}  // namespace

Var quantization_loss(const Var& f, const Tensor& codes) {
  return mean_sq_distance(f, codes, "quantization_loss");
}

double quantization_loss(const Eigen::MatrixXd& f, const Eigen::MatrixXd& codes) {
  if (f.rows() != codes.rows() || f.cols() != codes.cols()) {
    throw ShapeError("quantization_loss: " + std::to_string(f.rows()) + "x" + std::to_string(f.cols()) +
                     " features vs " + std::to_string(codes.rows()) + "x" + std::to_string(codes.cols()) + " codes");
  }
  if (f.rows() == 0) return 0.0;
  return (codes - f).squaredNorm() / static_cast<double>(f.rows());
}

Tensor CenterTable::rows_for(std::span<const int> labels) const {
  Tensor out(Shape{static_cast<Eigen::Index>(labels.size()), centers.cols()});
  auto m = out.matrix();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes()) throw PreconditionError("no center for label " + std::to_string(y));
    m.row(static_cast<Eigen::Index>(i)) = centers.row(y);
  }
  return out;
}

Var sketch_center_loss(const Var& f, std::span<const int> labels, const CenterTable& centers) {
  return mean_sq_distance(f, centers.rows_for(labels), "sketch_center_loss");
}

CommonCenterLoss::CommonCenterLoss(int classes, int bits, double rate)
    : centers_(Eigen::MatrixXd::Zero(classes, bits)), rate_(rate) {
  if (classes <= 0 || bits <= 0) throw PreconditionError("common center loss needs classes and bits");
}

Var CommonCenterLoss::operator()(const Var& f, std::span<const int> labels) {
  CenterTable current{centers_, {}, false};
  Var loss = sketch_center_loss(f, labels, current);

  const auto x = f.value().matrix();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(centers_.rows(), centers_.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(centers_.rows());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sums.row(labels[i]) += x.row(static_cast<Eigen::Index>(i));
    counts[labels[i]] += 1.0;
  }
  for (Eigen::Index y = 0; y < centers_.rows(); ++y) {
    if (counts[y] > 0) centers_.row(y) += rate_ * (sums.row(y) / counts[y] - centers_.row(y));
  }
  return loss;
}

ObjectiveTerms full_objective(const Var& f, const Var& logits, std::span<const int> labels,
                              const CenterTable* centers, const Tensor* codes, const LossWeights& weights) {
  weights.validate();
  if (weights.scl > 0 && centers == nullptr) throw PreconditionError("sketch center loss needs a center table");
  if (weights.ql > 0 && codes == nullptr) throw PreconditionError("quantization loss needs binary codes");

  ObjectiveTerms t;
  t.cel = softmax_cross_entropy(logits, labels);
  t.total = t.cel;
  if (centers != nullptr) {
    t.scl = sketch_center_loss(f, labels, *centers);
    if (weights.scl > 0) t.total = t.total + weights.scl * t.scl;
  }
  if (codes != nullptr) {
    t.ql = quantization_loss(f, *codes);
    if (weights.ql > 0) t.total = t.total + weights.ql * t.ql;
  }
  return t;
}

CenterTable class_centers(const Eigen::MatrixXd& features, std::span<const int> labels, int classes,
                          const std::vector<bool>& keep, std::span<const std::string> names) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ShapeError("class_centers: " + std::to_string(features.rows()) + " feature rows for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (!keep.empty() && keep.size() != labels.size()) throw ShapeError("class_centers: keep mask length differs");

  CenterTable table;
  table.centers = Eigen::MatrixXd::Zero(classes, features.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!keep.empty() && !keep[i]) continue;
    const int y = labels[i];
    if (y < 0 || y >= classes) throw PreconditionError("label " + std::to_string(y) + " out of range");
    table.centers.row(y) += features.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int y = 0; y < classes; ++y) {
    if (counts[static_cast<std::size_t>(y)] == 0) {
      const std::string name = static_cast<std::size_t>(y) < names.size() ? names[static_cast<std::size_t>(y)]
                                                                          : std::to_string(y);
      throw PreconditionError("class '" + name + "' has no kept sketches to form a center");
    }
    table.centers.row(y) /= static_cast<double>(counts[static_cast<std::size_t>(y)]);
  }
  return table;
}

CenterTable compute_class_centers(const Encoder& encoder, const Corpus& corpus,
                                  std::span<const std::uint32_t> train_ids, const std::vector<bool>& keep) {
  const auto refs = select_sketches(corpus, train_ids);
  const auto out = encoder.run(refs);
  std::vector<int> labels;
  labels.reserve(refs.size());
  for (const auto* s : refs) labels.push_back(s->label);
  auto table = class_centers(out.features, labels, encoder.arch().classes, keep, corpus.categories);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) kept += keep.empty() || keep[i];
  table.provenance["centers.sketches"] = std::to_string(labels.size());
  table.provenance["centers.kept"] = std::to_string(kept);
  return table;
}

Checkpoint centers_checkpoint(const CenterTable& table) {
  Checkpoint ckpt;
  ckpt.meta = table.provenance;
  ckpt.meta["centers.frozen"] = table.frozen ? "1" : "0";
  ckpt.tensors.emplace("centers", Tensor::from_matrix(table.centers));
  return ckpt;
}

CenterTable centers_from_checkpoint(const Checkpoint& ckpt) {
  const auto it = ckpt.tensors.find("centers");
  if (it == ckpt.tensors.end() || it->second.rank() != 2) throw FormatError("checkpoint holds no center table");
  CenterTable table;
  table.centers = it->second.matrix();
  table.provenance = ckpt.meta;
  table.provenance.erase("centers.frozen");
  const auto frozen = ckpt.meta.find("centers.frozen");
  table.frozen = frozen == ckpt.meta.end() || frozen->second == "1";
  if (!table.centers.allFinite()) throw FormatError("center table holds non-finite values");
  return table;
}

void save_centers(const std::string& path, const CenterTable& table) {
  save_checkpoint(path, centers_checkpoint(table));
}

CenterTable load_centers(const std::string& path, int expected_bits) {
  auto table = centers_from_checkpoint(load_checkpoint(path));
  if (table.bits() != expected_bits) {
    throw PreconditionError("center table has D = " + std::to_string(table.bits()) + " but the encoder has D = " +
                            std::to_string(expected_bits));
  }
  return table;
}

}  // namespace sketchhash
