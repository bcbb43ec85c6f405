#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sketchhash/checkpoint.hpp"
#include "sketchhash/encoder.hpp"

namespace sketchhash {

struct LossWeights {
  double scl = 0.01;
  double ql = 0.0001;

  void validate() const;
};

/// Mean softmax cross-entropy of the logits f W + b.
Var cel(const Var& f, std::span<const int> labels, const Var& w, const Var& b);

/// Mean over rows of ||b - f||^2. `codes` is [N x D] with 0/1 entries and
/// enters the graph as a constant.
Var quantization_loss(const Var& f, const Tensor& codes);
/// Same quantity without a graph.
double quantization_loss(const Eigen::MatrixXd& f, const Eigen::MatrixXd& codes);

/// Per-class hash feature means, frozen once computed.
struct CenterTable {
  Eigen::MatrixXd centers;  ///< L x D, row y is c_y
  std::map<std::string, std::string> provenance;
  bool frozen = true;

  int classes() const { return static_cast<int>(centers.rows()); }
  int bits() const { return static_cast<int>(centers.cols()); }
  /// [N x D] tensor whose row i is c_{labels[i]}; throws on unknown labels.
  Tensor rows_for(std::span<const int> labels) const;
};

/// Mean over rows of ||f - c_y||^2 with 1/N normalisation; centers are
/// constants of the graph.
Var sketch_center_loss(const Var& f, std::span<const int> labels, const CenterTable& centers);

/// Baseline center loss whose centers follow mini-batch means:
/// after computing the loss, c_y += rate * (mean of batch rows of class y - c_y).
class CommonCenterLoss {
 public:
  CommonCenterLoss(int classes, int bits, double rate = 0.5);

  Var operator()(const Var& f, std::span<const int> labels);
  const Eigen::MatrixXd& centers() const { return centers_; }

 private:
  Eigen::MatrixXd centers_;
  double rate_;
};

struct ObjectiveTerms {
  Var total;
  Var cel;
  Var scl;  ///< unbound when no centers were given
  Var ql;   ///< unbound when no codes were given
};

/// L_cel + w.scl * L_scl + w.ql * L_ql. A term with a positive weight needs
/// its input; a term whose input is given is always computed (for logging)
/// but only enters the total with a positive weight.
ObjectiveTerms full_objective(const Var& f, const Var& logits, std::span<const int> labels,
                              const CenterTable* centers, const Tensor* codes, const LossWeights& weights);

/// Scalar form of the weighted sum.
inline double weighted_objective(double cel, double scl, double ql, const LossWeights& w) {
  return cel + w.scl * scl + w.ql * ql;
}

/// c_y = mean of the rows of `features` with label y and keep[i] set.
/// `keep` may be empty (keep all). Throws naming the class when a class has
/// no kept rows; `names` supplies category names for the message.
CenterTable class_centers(const Eigen::MatrixXd& features, std::span<const int> labels, int classes,
                          const std::vector<bool>& keep = {}, std::span<const std::string> names = {});

/// Encodes the training ids with `encoder` and averages the kept ones.
CenterTable compute_class_centers(const Encoder& encoder, const Corpus& corpus,
                                  std::span<const std::uint32_t> train_ids, const std::vector<bool>& keep);

Checkpoint centers_checkpoint(const CenterTable& table);
CenterTable centers_from_checkpoint(const Checkpoint& ckpt);
void save_centers(const std::string& path, const CenterTable& table);
/// Refuses a table whose code length differs from `expected_bits`.
CenterTable load_centers(const std::string& path, int expected_bits);

}  // namespace sketchhash
