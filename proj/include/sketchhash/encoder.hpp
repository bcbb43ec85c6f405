#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sketchhash/checkpoint.hpp"
#include "sketchhash/corpus.hpp"
#include "sketchhash/graph.hpp"
#include "sketchhash/ops.hpp"

namespace sketchhash {

struct ConvLayerSpec {
  int channels = 16;
  int kernel = 3;
  int stride = 1;
  Padding padding = Padding::Same;
  int pool_kernel = 2;  ///< 0 disables pooling after this layer
  int pool_stride = 2;
};

/// Architecture of the two-branch encoder. All layers use ReLU except the
/// sigmoid hash layer and the linear classifier.
struct ArchConfig {
  std::string profile = "toy";
  int raster_side = 64;
  std::vector<ConvLayerSpec> conv;
  std::vector<int> dense;  ///< widths after flattening; the last is the CNN feature width
  int gru_hidden = 64;
  int gru_layers = 2;
  int code_bits = 16;
  int classes = 10;
  /// Width of an optional ReLU layer between the hash features and the
  /// classifier (2048 in the recognition setup of the original model); 0
  /// feeds the hash features straight into the classifier.
  int recognition_width = 0;
  /// Width of the ReLU layer on the fusion vector in the recognition model
  /// (Branches::Recognition); 0 means the fusion width.
  int recognition_head_width = 0;

  /// 64x64 rasters, conv 16/32/64 (3x3, 2x2 pool each), dense 128, GRU 2x64 bidirectional.
  static ArchConfig toy(int code_bits, int classes);
  /// 224x224 AlexNet-style stack without local response normalisation, GRU 2x512.
  static ArchConfig full(int code_bits, int classes);
  static ArchConfig named(const std::string& profile, int code_bits, int classes);

  Eigen::Index flattened_width() const;
  int cnn_width() const;
  int rnn_width() const { return 2 * gru_hidden; }
  int fusion_width() const { return cnn_width() + rnn_width(); }
  int recognition_head() const { return recognition_head_width > 0 ? recognition_head_width : fusion_width(); }

  /// True for the code lengths 16, 24, 32 and 64.
  bool standard_code_length() const;
  /// Throws PreconditionError on non-positive sizes or layers that do not fit.
  void validate() const;

  std::map<std::string, std::string> descriptor() const;
  static ArchConfig from_descriptor(const std::map<std::string, std::string>& meta);
};

/// Parameter groups that init_params can create.
enum class Part : unsigned {
  Cnn = 1,
  Rnn = 2,
  Hash = 4,
  Classifier = 8,
  CnnHead = 16,  ///< temporary classifier used while pretraining the CNN alone
  RnnHead = 32,
  RecognitionHead = 64,  ///< ReLU layer and classifier on the fusion vector, no hash layer
};
inline Part operator|(Part a, Part b) { return static_cast<Part>(static_cast<unsigned>(a) | static_cast<unsigned>(b)); }
inline bool has(Part set, Part p) { return (static_cast<unsigned>(set) & static_cast<unsigned>(p)) != 0; }

/// Deterministic initialisation; every tensor draws from its own stream
/// derived from (seed, name), so adding groups never changes existing ones.
Params init_params(const ArchConfig& arch, Part parts, std::uint64_t seed);

/// Which branches produce the logits. Recognition is the two-branch model
/// re-purposed for classification: fusion vector, ReLU layer, classifier,
/// with no hash layer.
enum class Branches { Cnn, Rnn, Fused, Recognition };

const char* to_string(Branches b);
Branches branches_from_string(const std::string& s);

// ---------------------------------------------------------------------------
// Graph building blocks

using SketchRefs = std::vector<const StrokeSketch*>;
SketchRefs select_sketches(const Corpus& corpus, std::span<const std::uint32_t> ids);

/// Stacks rasters into [N, 1, side, side]; throws ShapeError on mixed sides.
Tensor raster_batch(std::span<const RasterSketch> rasters);

Var cnn_forward(Graph& graph, const Binding& params, const ArchConfig& arch, const Tensor& rasters);

/// Ragged batch of stroke sequences. `steps[t]` is [B x 4] in drawing order,
/// `reversed[t]` the same with each sequence reversed inside its own length.
/// Rows past a sequence's length are zero and masked out.
struct SequenceBatch {
  std::vector<int> lengths;
  std::vector<Tensor> steps;
  std::vector<Tensor> reversed;
  std::vector<std::vector<std::uint8_t>> active;  ///< active[t][i] = t < lengths[i]

  static SequenceBatch from(std::span<const StrokeSketch* const> sketches);
  int max_length() const { return static_cast<int>(steps.size()); }
  Eigen::Index batch() const { return static_cast<Eigen::Index>(lengths.size()); }
};

struct GruWeights {
  Var input;         ///< [in, 3H], column blocks update | reset | candidate
  Var hidden;        ///< [H, 3H]
  Var input_bias;    ///< [3H]
  Var hidden_bias;   ///< [3H]
};

GruWeights gru_weights(const Binding& params, int layer, bool backward_direction);

/// One GRU step:
///   z = sigmoid(x Wz + bz + h Uz + cz)
///   r = sigmoid(x Wr + br + h Ur + cr)
///   n = tanh(x Wn + bn + r * (h Un + cn))
///   h' = (1 - z) * n + z * h
Var gru_cell(const Var& x, const Var& h, const GruWeights& w);

/// Stacked bidirectional GRU; returns [B, 2H] = final forward state of the
/// top layer followed by its final backward state.
Var rnn_forward(Graph& graph, const Binding& params, const ArchConfig& arch, const SequenceBatch& batch);

/// sigmoid(concat(cnn, rnn) W + b), strictly inside (0, 1).
Var fuse_and_hash(const Binding& params, const Var& cnn_features, const Var& rnn_features);

/// f W + b over the classifier head, through the recognition layer when the
/// parameters have one.
Var classify_logits(const Binding& params, const Var& hash_features);

struct ForwardPass {
  Var features;  ///< hash features for Fused, the fusion vector for Recognition, branch features otherwise
  Var logits;
};

ForwardPass forward(Graph& graph, const Binding& params, const ArchConfig& arch, Branches branches,
                    std::span<const StrokeSketch* const> sketches);

// ---------------------------------------------------------------------------
// Codes

struct BinaryCode {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  friend bool operator==(const BinaryCode&, const BinaryCode&) = default;
};

/// bit i = 1 iff f_i >= 0.5.
BinaryCode quantize(std::span<const double> features);
template <typename Derived>
BinaryCode quantize(const Eigen::DenseBase<Derived>& row) {
  BinaryCode code;
  code.bits.reserve(static_cast<std::size_t>(row.size()));
  for (Eigen::Index i = 0; i < row.size(); ++i) code.bits.push_back(row(i) >= 0.5 ? 1 : 0);
  return code;
}

/// Inference-only view over a parameter snapshot.
class Encoder {
 public:
  Encoder(ArchConfig arch, Params params, Branches branches = Branches::Fused);

  const ArchConfig& arch() const { return arch_; }
  const Params& params() const { return params_; }
  Branches branches() const { return branches_; }

  struct Outputs {
    Eigen::MatrixXd features;  ///< N x D (or N x branch width)
    Eigen::MatrixXd logits;    ///< N x L
  };
  Outputs run(std::span<const StrokeSketch* const> sketches, std::size_t batch_size = 64) const;

  std::vector<BinaryCode> encode(std::span<const StrokeSketch* const> sketches) const;

  Checkpoint to_checkpoint() const;
  static Encoder from_checkpoint(const Checkpoint& ckpt);

 private:
  ArchConfig arch_;
  Params params_;
  Branches branches_;
};

}  // namespace sketchhash
