#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sketchhash/entropy.hpp"
#include "sketchhash/hamming.hpp"
#include "sketchhash/losses.hpp"

namespace sketchhash {

/// Algorithm stages in execution order.
enum class Stage : int {
  Init = 0,
  CnnPretrain = 1,
  RnnPretrain = 2,
  FusedFinetune = 3,
  CenterFinetune = 4,
  Alternating = 5,
};

const char* stage_name(Stage s);

/// Progress marker of a pipeline run; stages only move forward.
class StageTracker {
 public:
  Stage current() const { return current_; }
  /// Throws PreconditionError when `next` does not come after the current stage.
  void advance(Stage next);

 private:
  Stage current_ = Stage::Init;
};

struct TrainConfig {
  int cnn_epochs = 20;
  int rnn_epochs = 20;
  int fused_epochs = 5;
  int center_epochs = 5;
  int outer_iterations = 5;
  /// Parameter updates per outer iteration of stage 5; -1 means one epoch.
  int inner_iterations = -1;
  int batch_size = 32;
  double learning_rate = 0.01;
  int decay_every = 10;  ///< lr drops tenfold every this many epochs of a stage
  double clip_norm = 5.0;
  std::uint64_t seed = 7;
  LossWeights weights;
  double entropy_lower = 0.05;
  double entropy_upper = 0.95;
  bool recompute_centers = false;      ///< recompute the table after stage 4
  bool filter_classification = false;  ///< also drop noise sketches from the training losses
  bool skip_center_stage = false;      ///< only allowed with weights.scl == 0

  void validate() const;
  std::map<std::string, std::string> describe() const;
};

/// learning_rate * 10^-floor(epoch / decay_every)
double learning_rate_at(const TrainConfig& config, int epoch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Params m;
  Params v;
  long long step = 0;
};

/// Bias-corrected Adam on every parameter that has a gradient. Throws Error
/// on a non-finite gradient before touching params or state.
void adam_step(Params& params, const Params& grads, AdamState& state, double lr, const AdamConfig& config = {});

/// Scales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm; returns the norm before clipping.
double clip_global_norm(Params& grads, double max_norm);

/// Training aborted on a non-finite loss or gradient; carries the last
/// parameters that produced finite values.
class DivergenceError : public Error {
 public:
  DivergenceError(Stage stage, Params last_good, const std::string& what)
      : Error(what), stage_(stage), last_good_(std::move(last_good)) {}
  Stage stage() const { return stage_; }
  const Params& last_good() const { return last_good_; }

 private:
  Stage stage_;
  Params last_good_;
};

struct LogRow {
  int stage = 0;
  int epoch = 0;
  long long iteration = 0;
  double loss = 0.0;
  double cel = 0.0;
  double scl = 0.0;  ///< NaN when the term is not computed
  double ql = 0.0;
  double lr = 0.0;
};

/// Per-iteration training log, optionally mirrored to CSV.
class TrainLog {
 public:
  explicit TrainLog(std::ostream* csv = nullptr);
  void add(const LogRow& row);
  const std::vector<LogRow>& rows() const { return rows_; }
  long long next_iteration() const { return static_cast<long long>(rows_.size()); }

 private:
  std::ostream* csv_;
  std::vector<LogRow> rows_;
};

struct EpochSummary {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  ///< mean over batches
  double accuracy = 0.0;  ///< training accuracy seen during the epoch
};

struct StageOutcome {
  Params params;
  std::vector<EpochSummary> epochs;
};

/// Stage 1 or 2: one branch plus a temporary classifier head, cross-entropy
/// only. Empty `init` starts from init_params; epochs run from `first_epoch`
/// up to the configured count.
StageOutcome pretrain_branch(Branches branch, const ArchConfig& arch, Params init, const Corpus& corpus,
                             std::span<const std::uint32_t> ids, const TrainConfig& config,
                             TrainLog* log = nullptr, int first_epoch = 0);

/// Keeps the cnn.* and rnn.* tensors, drops the branch heads and adds a
/// freshly initialised hash layer and classifier.
Params fuse_params(const ArchConfig& arch, const Params& cnn, const Params& rnn, std::uint64_t seed);

enum class FinetuneLoss { Cel, CelScl };

/// Stage 3 (Cel, no binary constraint) or stage 4 (CelScl against frozen
/// centers).
StageOutcome finetune_fused(const ArchConfig& arch, Params params, const Corpus& corpus,
                            std::span<const std::uint32_t> ids, const TrainConfig& config, FinetuneLoss loss,
                            const CenterTable* centers, TrainLog* log = nullptr);

/// The two-branch network re-purposed for recognition: cnn.* and rnn.* from
/// the pretrained branches, a fresh ReLU layer and classifier on the fusion
/// vector, then cross-entropy for `fused_epochs` epochs on the stage-3 batch
/// order.
StageOutcome train_recognition(const ArchConfig& arch, const Params& cnn, const Params& rnn, const Corpus& corpus,
                               std::span<const std::uint32_t> ids, const TrainConfig& config,
                               TrainLog* log = nullptr);

/// One B recomputation: losses are evaluated on the same features.
struct CodeUpdate {
  int outer = 0;
  double ql_old = 0.0;
  double ql_new = 0.0;
  std::size_t changed = 0;  ///< codes that differ from the previous B
};

struct ObjectiveValue {
  double total = 0.0;
  double cel = 0.0;
  double scl = 0.0;
  double ql = 0.0;
};

struct AlternatingResult {
  Params params;
  std::vector<BinaryCode> codes;  ///< B, one code per training id
  std::vector<CodeUpdate> updates;
  ObjectiveValue initial;  ///< full objective over the training set before stage 5
  ObjectiveValue final;
};

/// Stage 5: B starts as quantize(f) of the incoming model; each outer
/// iteration runs the inner parameter updates with B fixed, then sets
/// B = quantize(f). `centers` may be null only when weights.scl == 0.
AlternatingResult alternating_full_train(const ArchConfig& arch, Params params, const CenterTable* centers,
                                         const Corpus& corpus, std::span<const std::uint32_t> ids,
                                         const TrainConfig& config, TrainLog* log = nullptr);

/// Full objective over a whole id set, evaluated in inference mode.
ObjectiveValue dataset_objective(const Encoder& encoder, const Corpus& corpus, std::span<const std::uint32_t> ids,
                                 const CenterTable* centers, const std::vector<BinaryCode>* codes,
                                 const LossWeights& weights);

/// Stages 4 and 5 from a stage-3 model: entropy filter over the training
/// ids, centers, SCL fine-tuning, alternating optimisation.
struct LateStages {
  EntropyReport entropy;
  std::optional<CenterTable> centers;
  std::optional<Params> stage4;
  AlternatingResult alternating;
};
LateStages train_late_stages(const ArchConfig& arch, const Params& stage3, const Corpus& corpus,
                             std::span<const std::uint32_t> train_ids, const TrainConfig& config,
                             TrainLog* log = nullptr);

struct PipelineResult {
  ArchConfig arch;
  std::map<Stage, Params> stages;  ///< parameters after each completed stage
  LateStages late;
  Encoder final_encoder() const;
  PackedCodes gallery;  ///< retrieval split encoded with the final model
};

/// Runs stages 1 to 5. With a non-empty `out_dir` it writes stage1..5.ckpt,
/// centers.ckpt, train_codes.bin, gallery.bin, entropy.csv, train_log.csv
/// and manifest.json; artifacts of finished stages survive a later failure.
PipelineResult train_pipeline(const Corpus& corpus, const DatasetSplit& split, const ArchConfig& arch,
                              const TrainConfig& config, const std::string& out_dir = {});

/// Checkpoint holding a model plus its architecture and training metadata.
Checkpoint model_checkpoint(const ArchConfig& arch, const Params& params, Branches branches, Stage stage);

}  // namespace sketchhash
