#include "sketchhash/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "sketchhash/binary_io.hpp"
#include "sketchhash/eval.hpp"
#include "sketchhash/rng.hpp"

namespace sketchhash {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Init: return "init";
    case Stage::CnnPretrain: return "cnn_pretrain";
    case Stage::RnnPretrain: return "rnn_pretrain";
    case Stage::FusedFinetune: return "fused_finetune";
    case Stage::CenterFinetune: return "center_finetune";
    case Stage::Alternating: return "alternating";
  }
  return "unknown";
}

void StageTracker::advance(Stage next) {
  if (static_cast<int>(next) <= static_cast<int>(current_)) {
    throw PreconditionError(std::string("stage ") + stage_name(next) + " cannot follow " + stage_name(current_));
  }
  current_ = next;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (cnn_epochs < 0 || rnn_epochs < 0 || fused_epochs < 0 || center_epochs < 0 || outer_iterations < 0) {
    throw PreconditionError("epoch and iteration counts must be non-negative");
  }
  if (inner_iterations < -1) throw PreconditionError("inner iterations must be -1 (one epoch) or non-negative");
  if (batch_size <= 0) throw PreconditionError("batch size must be positive");
  if (!(learning_rate > 0.0) || decay_every <= 0) throw PreconditionError("invalid learning-rate schedule");
  if (!(clip_norm > 0.0)) throw PreconditionError("clip norm must be positive");
  if (!(0.0 <= entropy_lower && entropy_lower < entropy_upper && entropy_upper <= 1.0)) {
    throw PreconditionError("entropy percentiles must satisfy 0 <= lower < upper <= 1");
  }
  weights.validate();
  if (skip_center_stage && weights.scl > 0.0) {
    throw PreconditionError("stage 4 can only be skipped with a zero sketch-center weight: stage 5 needs centers");
  }
}

std::map<std::string, std::string> TrainConfig::describe() const {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {{"train.cnn_epochs", std::to_string(cnn_epochs)},
          {"train.rnn_epochs", std::to_string(rnn_epochs)},
          {"train.fused_epochs", std::to_string(fused_epochs)},
          {"train.center_epochs", std::to_string(center_epochs)},
          {"train.outer_iterations", std::to_string(outer_iterations)},
          {"train.inner_iterations", inner_iterations < 0 ? "epoch" : std::to_string(inner_iterations)},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.learning_rate", num(learning_rate)},
          {"train.decay_every", std::to_string(decay_every)},
          {"train.optimizer", "adam(0.9,0.999,1e-8)"},
          {"train.clip_norm", num(clip_norm)},
          {"train.seed", std::to_string(seed)},
          {"train.lambda_scl", num(weights.scl)},
          {"train.lambda_ql", num(weights.ql)},
          {"train.entropy_lower", num(entropy_lower)},
          {"train.entropy_upper", num(entropy_upper)},
          {"train.recompute_centers", recompute_centers ? "1" : "0"},
          {"train.filter_classification", filter_classification ? "1" : "0"},
          {"train.skip_center_stage", skip_center_stage ? "1" : "0"}};
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  // divide by an exact power of ten; multiplying by 10^-k rounds twice
  return config.learning_rate / std::pow(10.0, static_cast<double>(epoch / config.decay_every));
}

// ---------------------------------------------------------------------------
// Optimiser

void adam_step(Params& params, const Params& grads, AdamState& state, double lr, const AdamConfig& c) {
  for (const auto& [name, g] : grads) {
    const auto it = params.find(name);
    if (it == params.end()) throw PreconditionError("gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape()) {
      throw ShapeError("adam: parameter " + name + " is " + shape_string(it->second.shape()) + ", gradient " +
                       shape_string(g.shape()));
    }
    if (!g.all_finite()) throw Error("non-finite gradient for parameter '" + name + "'");
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name).flat();
    auto& m = state.m.try_emplace(name, Tensor(g.shape())).first->second.flat();
    auto& v = state.v.try_emplace(name, Tensor(g.shape())).first->second.flat();
    m = c.beta1 * m + (1.0 - c.beta1) * g.flat();
    v = c.beta2 * v + (1.0 - c.beta2) * g.flat().cwiseAbs2();
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.epsilon);
  }
}

double clip_global_norm(Params& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.flat().squaredNorm();
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads) g.flat() *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Log

TrainLog::TrainLog(std::ostream* csv) : csv_(csv) {
  if (csv_) *csv_ << "iteration,stage,epoch,loss,cel,scl,ql,lr\n";
}

void TrainLog::add(const LogRow& row) {
  rows_.push_back(row);
  if (!csv_) return;
  auto field = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  *csv_ << row.iteration << ',' << row.stage << ',' << row.epoch << ',' << field(row.loss) << ',' << field(row.cel)
        << ',' << field(row.scl) << ',' << field(row.ql) << ',' << field(row.lr) << '\n';
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Builds the batch objective from the bound parameters.
using BuildLoss = std::function<ObjectiveTerms(Graph&, const Binding&, std::span<const StrokeSketch* const>,
                                               std::span<const int>, std::span<const std::size_t>)>;

/// Shuffled positions 0..n-1 cut into batches; reshuffles when exhausted.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch, std::uint64_t seed) : rng_(seed), batch_(batch) {
    order_.resize(n);
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    cursor_ = n;
  }

  std::span<const std::size_t> next() {
    if (cursor_ >= order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    const auto count = std::min(batch_, order_.size() - cursor_);
    std::span<const std::size_t> out(order_.data() + cursor_, count);
    cursor_ += count;
    return out;
  }

  std::size_t batches_per_epoch() const { return (order_.size() + batch_ - 1) / batch_; }

 private:
  Rng rng_;
  std::size_t batch_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

double value_or_nan(const Var& v) { return v.valid() ? v.value().item() : kNaN; }

class Runner {
 public:
  Runner(const TrainConfig& config, Stage stage, TrainLog* log) : config_(config), stage_(stage), log_(log) {}

  /// Runs `steps` parameter updates drawn from `stream`.
  EpochSummary run(Params& params, BatchStream& stream, std::size_t steps, const Corpus& corpus,
                   std::span<const std::uint32_t> ids, int epoch, const BuildLoss& build) {
    const double lr = learning_rate_at(config_, epoch);
    EpochSummary summary{epoch, lr, 0.0, 0.0};
    std::size_t seen = 0, correct = 0;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto positions = stream.next();
      SketchRefs refs;
      std::vector<int> labels;
      for (auto p : positions) {
        refs.push_back(&corpus.sketches.at(ids[p]));
        labels.push_back(refs.back()->label);
      }

      Graph graph;
      Binding bound(graph, params);
      const ObjectiveTerms terms = build(graph, bound, refs, labels, positions);
      const double loss = terms.total.value().item();
      if (!std::isfinite(loss)) {
        throw DivergenceError(stage_, params, std::string("non-finite loss in stage ") + stage_name(stage_));
      }
      graph.backward(terms.total);
      Params grads = bound.gradients();
      clip_global_norm(grads, config_.clip_norm);
      try {
        adam_step(params, grads, adam_, lr);
      } catch (const Error& e) {
        throw DivergenceError(stage_, params, std::string(stage_name(stage_)) + ": " + e.what());
      }

      summary.loss += loss;
      if (log_) {
        log_->add({static_cast<int>(stage_), epoch, log_->next_iteration(), loss, value_or_nan(terms.cel),
                   value_or_nan(terms.scl), value_or_nan(terms.ql), lr});
      }
      if (last_logits_.valid()) {
        const auto pred = predict(last_logits_.value().matrix());
        for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
      }
      seen += labels.size();
      last_logits_ = Var();
    }
    if (steps > 0) summary.loss /= static_cast<double>(steps);
    summary.accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    return summary;
  }

  /// Lets the loss builder expose its logits for the accuracy tally.
  void note_logits(const Var& logits) { last_logits_ = logits; }

 private:
  const TrainConfig& config_;
  Stage stage_;
  TrainLog* log_;
  AdamState adam_;
  Var last_logits_;
};

std::uint64_t stream_seed(const TrainConfig& c, Stage stage, int epoch) {
  return derive_seed(c.seed, (static_cast<std::uint64_t>(stage) << 32) | static_cast<std::uint32_t>(epoch));
}

StageOutcome run_epochs(Params params, const Corpus& corpus, std::span<const std::uint32_t> ids,
                        const TrainConfig& config, Stage stage, int first_epoch, int epochs, TrainLog* log,
                        const std::function<ObjectiveTerms(Runner&, Graph&, const Binding&,
                                                           std::span<const StrokeSketch* const>, std::span<const int>,
                                                           std::span<const std::size_t>)>& build) {
  config.validate();
  if (ids.empty() && epochs > first_epoch) throw PreconditionError("training split is empty");
  Runner runner(config, stage, log);
  StageOutcome out;
  const BuildLoss bound_build = [&](Graph& g, const Binding& b, std::span<const StrokeSketch* const> refs,
                                    std::span<const int> labels, std::span<const std::size_t> pos) {
    return build(runner, g, b, refs, labels, pos);
  };
  for (int e = first_epoch; e < epochs; ++e) {
    BatchStream stream(ids.size(), static_cast<std::size_t>(config.batch_size), stream_seed(config, stage, e));
    out.epochs.push_back(runner.run(params, stream, stream.batches_per_epoch(), corpus, ids, e, bound_build));
  }
  out.params = std::move(params);
  return out;
}

}  // namespace

StageOutcome pretrain_branch(Branches branch, const ArchConfig& arch, Params init, const Corpus& corpus,
                             std::span<const std::uint32_t> ids, const TrainConfig& config, TrainLog* log,
                             int first_epoch) {
  if (branch == Branches::Fused) throw PreconditionError("pretrain_branch takes the cnn or rnn branch");
  const bool cnn = branch == Branches::Cnn;
  const Stage stage = cnn ? Stage::CnnPretrain : Stage::RnnPretrain;
  if (init.empty()) {
    init = init_params(arch, cnn ? (Part::Cnn | Part::CnnHead) : (Part::Rnn | Part::RnnHead),
                       derive_seed(config.seed, static_cast<std::uint64_t>(stage)));
  }
  return run_epochs(std::move(init), corpus, ids, config, stage, first_epoch,
                    cnn ? config.cnn_epochs : config.rnn_epochs, log,
                    [&](Runner& runner, Graph& g, const Binding& b, std::span<const StrokeSketch* const> refs,
                        std::span<const int> labels, std::span<const std::size_t>) {
                      const auto pass = forward(g, b, arch, branch, refs);
                      runner.note_logits(pass.logits);
                      ObjectiveTerms t;
                      t.cel = softmax_cross_entropy(pass.logits, labels);
                      t.total = t.cel;
                      return t;
                    });
}

Params fuse_params(const ArchConfig& arch, const Params& cnn, const Params& rnn, std::uint64_t seed) {
  Params fused = init_params(arch, Part::Hash | Part::Classifier, seed);
  auto take = [&](const Params& from, const std::string& prefix) {
    std::size_t n = 0;
    for (const auto& [name, t] : from) {
      if (name.rfind(prefix, 0) == 0) {
        fused.emplace(name, t);
        ++n;
      }
    }
    if (n == 0) throw PreconditionError("branch checkpoint holds no '" + prefix + "' parameters");
  };
  take(cnn, "cnn.");
  take(rnn, "rnn.");
  return fused;
}

StageOutcome finetune_fused(const ArchConfig& arch, Params params, const Corpus& corpus,
                            std::span<const std::uint32_t> ids, const TrainConfig& config, FinetuneLoss loss,
                            const CenterTable* centers, TrainLog* log) {
  const bool with_scl = loss == FinetuneLoss::CelScl;
  if (with_scl) {
    if (centers == nullptr) throw PreconditionError("sketch-center fine-tuning needs a center table");
    if (!centers->frozen) throw PreconditionError("center table must be frozen before fine-tuning");
    if (centers->bits() != arch.code_bits || centers->classes() != arch.classes) {
      throw ShapeError("center table is " + std::to_string(centers->classes()) + "x" + std::to_string(centers->bits()) +
                       ", model needs " + std::to_string(arch.classes) + "x" + std::to_string(arch.code_bits));
    }
  }
  LossWeights weights{with_scl ? config.weights.scl : 0.0, 0.0};
  const Stage stage = with_scl ? Stage::CenterFinetune : Stage::FusedFinetune;
  return run_epochs(std::move(params), corpus, ids, config, stage, 0,
                    with_scl ? config.center_epochs : config.fused_epochs, log,
                    [&](Runner& runner, Graph& g, const Binding& b, std::span<const StrokeSketch* const> refs,
                        std::span<const int> labels, std::span<const std::size_t>) {
                      const auto pass = forward(g, b, arch, Branches::Fused, refs);
                      runner.note_logits(pass.logits);
                      return full_objective(pass.features, pass.logits, labels, with_scl ? centers : nullptr,
                                            nullptr, weights);
                    });
}

StageOutcome train_recognition(const ArchConfig& arch, const Params& cnn, const Params& rnn, const Corpus& corpus,
                               std::span<const std::uint32_t> ids, const TrainConfig& config, TrainLog* log) {
  Params params = init_params(arch, Part::RecognitionHead, derive_seed(config.seed, 6));
  for (const auto* branch : {&cnn, &rnn}) {
    for (const auto& [name, t] : *branch) {
      if (name.rfind("cnn.", 0) == 0 || name.rfind("rnn.", 0) == 0) params.emplace(name, t);
    }
  }
  if (params.size() != init_params(arch, Part::Cnn | Part::Rnn | Part::RecognitionHead, 0).size()) {
    throw PreconditionError("recognition model needs complete cnn.* and rnn.* parameters");
  }
  return run_epochs(std::move(params), corpus, ids, config, Stage::FusedFinetune, 0, config.fused_epochs, log,
                    [&](Runner& runner, Graph& g, const Binding& b, std::span<const StrokeSketch* const> refs,
                        std::span<const int> labels, std::span<const std::size_t>) {
                      const auto pass = forward(g, b, arch, Branches::Recognition, refs);
                      runner.note_logits(pass.logits);
                      ObjectiveTerms t;
                      t.cel = softmax_cross_entropy(pass.logits, labels);
                      t.total = t.cel;
                      return t;
                    });
}

ObjectiveValue dataset_objective(const Encoder& encoder, const Corpus& corpus, std::span<const std::uint32_t> ids,
                                 const CenterTable* centers, const std::vector<BinaryCode>* codes,
                                 const LossWeights& weights) {
  const auto refs = select_sketches(corpus, ids);
  const auto out = encoder.run(refs);
  ObjectiveValue v;
  if (refs.empty()) return v;
  const auto n = static_cast<double>(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto z = out.logits.row(static_cast<Eigen::Index>(i));
    const double m = z.maxCoeff();
    v.cel += m + std::log((z.array() - m).exp().sum()) - z(refs[i]->label);
  }
  v.cel /= n;
  v.total = v.cel;
  if (centers) {
    std::vector<int> labels;
    for (const auto* s : refs) labels.push_back(s->label);
    v.scl = (out.features - centers->rows_for(labels).matrix()).squaredNorm() / n;
    v.total += weights.scl * v.scl;
  }
  if (codes) {
    if (codes->size() != refs.size()) throw ShapeError("dataset_objective: one code per sketch required");
    Eigen::MatrixXd b(out.features.rows(), out.features.cols());
    for (std::size_t i = 0; i < codes->size(); ++i) {
      for (std::size_t j = 0; j < (*codes)[i].size(); ++j) b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*codes)[i].bits[j];
    }
    v.ql = quantization_loss(out.features, b);
    v.total += weights.ql * v.ql;
  }
  return v;
}

namespace {

Tensor code_rows(const std::vector<BinaryCode>& codes, std::span<const std::size_t> positions, int bits) {
  Tensor t(Shape{static_cast<Eigen::Index>(positions.size()), bits});
  auto m = t.matrix();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto& c = codes[positions[i]];
    for (int j = 0; j < bits; ++j) m(static_cast<Eigen::Index>(i), j) = c.bits[static_cast<std::size_t>(j)];
  }
  return t;
}

std::vector<BinaryCode> quantize_rows(const Eigen::MatrixXd& f) {
  std::vector<BinaryCode> codes;
  codes.reserve(static_cast<std::size_t>(f.rows()));
  for (Eigen::Index i = 0; i < f.rows(); ++i) codes.push_back(quantize(f.row(i)));
  return codes;
}

double codes_ql(const Eigen::MatrixXd& f, const std::vector<BinaryCode>& codes) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < f.rows(); ++i) {
    const auto& b = codes[static_cast<std::size_t>(i)].bits;
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      const double d = b[static_cast<std::size_t>(j)] - f(i, j);
      total += d * d;
    }
  }
  return f.rows() ? total / static_cast<double>(f.rows()) : 0.0;
}

}  // namespace

AlternatingResult alternating_full_train(const ArchConfig& arch, Params params, const CenterTable* centers,
                                         const Corpus& corpus, std::span<const std::uint32_t> ids,
                                         const TrainConfig& config, TrainLog* log) {
  config.validate();
  if (config.weights.scl > 0.0 && centers == nullptr) {
    throw PreconditionError("stage 5 needs a center table unless the sketch-center weight is zero");
  }
  if (centers && !centers->frozen) throw PreconditionError("center table must be frozen before stage 5");
  if (ids.empty()) throw PreconditionError("training split is empty");

  const auto refs = select_sketches(corpus, ids);
  auto features = [&](const Params& p) { return Encoder(arch, p).run(refs).features; };

  AlternatingResult out;
  out.codes = quantize_rows(features(params));
  out.initial = dataset_objective(Encoder(arch, params), corpus, ids, centers, &out.codes, config.weights);

  Runner runner(config, Stage::Alternating, log);
  const BuildLoss build = [&](Graph& g, const Binding& b, std::span<const StrokeSketch* const> batch,
                              std::span<const int> labels, std::span<const std::size_t> pos) {
    const auto pass = forward(g, b, arch, Branches::Fused, batch);
    runner.note_logits(pass.logits);
    const Tensor codes = code_rows(out.codes, pos, arch.code_bits);
    return full_objective(pass.features, pass.logits, labels, centers, &codes, config.weights);
  };

  for (int outer = 0; outer < config.outer_iterations; ++outer) {
    BatchStream stream(ids.size(), static_cast<std::size_t>(config.batch_size),
                       stream_seed(config, Stage::Alternating, outer));
    const std::size_t steps = config.inner_iterations < 0 ? stream.batches_per_epoch()
                                                          : static_cast<std::size_t>(config.inner_iterations);
    runner.run(params, stream, steps, corpus, ids, outer, build);

    const Eigen::MatrixXd f = features(params);
    auto next = quantize_rows(f);
    CodeUpdate u;
    u.outer = outer + 1;
    u.ql_old = codes_ql(f, out.codes);
    u.ql_new = codes_ql(f, next);
    for (std::size_t i = 0; i < next.size(); ++i) u.changed += !(next[i] == out.codes[i]);
    out.updates.push_back(u);
    out.codes = std::move(next);
  }

  out.final = dataset_objective(Encoder(arch, params), corpus, ids, centers, &out.codes, config.weights);
  out.params = std::move(params);
  return out;
}

LateStages train_late_stages(const ArchConfig& arch, const Params& stage3, const Corpus& corpus,
                             std::span<const std::uint32_t> train_ids, const TrainConfig& config, TrainLog* log) {
  config.validate();
  LateStages late;
  late.entropy = entropy_report(corpus, train_ids, arch.raster_side, config.entropy_lower, config.entropy_upper);

  std::vector<std::uint32_t> loss_ids(train_ids.begin(), train_ids.end());
  if (config.filter_classification) {
    loss_ids.clear();
    for (std::size_t i = 0; i < train_ids.size(); ++i) {
      if (late.entropy.kept[i]) loss_ids.push_back(train_ids[i]);
    }
  }

  auto centers_from = [&](const Params& p, const char* source) {
    auto table = compute_class_centers(Encoder(arch, p), corpus, train_ids, late.entropy.kept);
    char q[64];
    std::snprintf(q, sizeof q, "%.17g,%.17g", config.entropy_lower, config.entropy_upper);
    table.provenance["centers.source"] = source;
    table.provenance["centers.entropy_percentiles"] = q;
    table.provenance["centers.model_hash"] = io::content_hash(checkpoint_bytes(Checkpoint{{}, p}));
    table.frozen = true;
    return table;
  };

  const Params* incoming = &stage3;
  if (!config.skip_center_stage) {
    late.centers = centers_from(stage3, "stage3");
    late.stage4 = finetune_fused(arch, stage3, corpus, loss_ids, config, FinetuneLoss::CelScl, &*late.centers, log).params;
    incoming = &*late.stage4;
    if (config.recompute_centers) late.centers = centers_from(*late.stage4, "stage4");
  }
  late.alternating = alternating_full_train(arch, *incoming, late.centers ? &*late.centers : nullptr, corpus, loss_ids,
                                            config, log);
  return late;
}

Encoder PipelineResult::final_encoder() const { return Encoder(arch, late.alternating.params); }

Checkpoint model_checkpoint(const ArchConfig& arch, const Params& params, Branches branches, Stage stage) {
  Encoder encoder(arch, params, branches);
  Checkpoint ckpt = encoder.to_checkpoint();
  ckpt.meta["train.stage"] = std::to_string(static_cast<int>(stage));
  return ckpt;
}

PipelineResult train_pipeline(const Corpus& corpus, const DatasetSplit& split, const ArchConfig& arch,
                              const TrainConfig& config, const std::string& out_dir) {
  config.validate();
  arch.validate();
  if (static_cast<std::size_t>(arch.classes) != corpus.categories.size()) {
    throw PreconditionError("architecture has " + std::to_string(arch.classes) + " classes, corpus has " +
                            std::to_string(corpus.categories.size()));
  }
  if (split.train.empty()) throw PreconditionError("training split is empty");

  namespace fs = std::filesystem;
  const bool persist = !out_dir.empty();
  std::ofstream csv;
  if (persist) {
    fs::create_directories(out_dir);
    csv.open(fs::path(out_dir) / "train_log.csv", std::ios::binary);
    if (!csv) throw Error("cannot write " + (fs::path(out_dir) / "train_log.csv").string());
  }
  TrainLog log(persist ? &csv : nullptr);
  auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

  nlohmann::ordered_json manifest;
  manifest["seed"] = config.seed;
  manifest["corpus_hash"] = [&] {
    std::ostringstream bytes;
    write_corpus(bytes, corpus);
    return io::content_hash(bytes.str());
  }();
  manifest["split_hash"] = [&] {
    std::ostringstream bytes;
    write_split_manifest(bytes, split);
    return io::content_hash(bytes.str());
  }();
  manifest["config"] = config.describe();
  manifest["arch"] = arch.descriptor();
  manifest["gradient_clipping"] = "global L2 norm, threshold " + config.describe().at("train.clip_norm");
  manifest["artifacts"] = nlohmann::ordered_json::object();

  auto save_model = [&](const std::string& name, const Params& p, Branches b, Stage s) {
    if (!persist) return;
    auto ckpt = model_checkpoint(arch, p, b, s);
    char scale[40];
    std::snprintf(scale, sizeof scale, "%.17g", corpus.offset_scale);
    ckpt.meta["corpus.offset_scale"] = scale;
    const auto bytes = checkpoint_bytes(ckpt);
    io::write_file(path(name), bytes);
    manifest["artifacts"][name] = io::content_hash(bytes);
  };

  PipelineResult result;
  result.arch = arch;
  StageTracker tracker;
  auto guarded = [&](auto&& fn) {
    try {
      return fn();
    } catch (const DivergenceError& e) {
      if (persist) {
        save_model(std::string(stage_name(e.stage())) + ".lastgood.ckpt", e.last_good(),
                   e.stage() == Stage::CnnPretrain   ? Branches::Cnn
                   : e.stage() == Stage::RnnPretrain ? Branches::Rnn
                                                     : Branches::Fused,
                   e.stage());
      }
      throw;
    }
  };

  tracker.advance(Stage::CnnPretrain);
  auto cnn = guarded([&] { return pretrain_branch(Branches::Cnn, arch, {}, corpus, split.train, config, &log); });
  save_model("stage1.ckpt", cnn.params, Branches::Cnn, Stage::CnnPretrain);
  result.stages[Stage::CnnPretrain] = cnn.params;

  tracker.advance(Stage::RnnPretrain);
  auto rnn = guarded([&] { return pretrain_branch(Branches::Rnn, arch, {}, corpus, split.train, config, &log); });
  save_model("stage2.ckpt", rnn.params, Branches::Rnn, Stage::RnnPretrain);
  result.stages[Stage::RnnPretrain] = rnn.params;

  tracker.advance(Stage::FusedFinetune);
  auto fused = guarded([&] {
    return finetune_fused(arch, fuse_params(arch, cnn.params, rnn.params, derive_seed(config.seed, 3)), corpus,
                          split.train, config, FinetuneLoss::Cel, nullptr, &log);
  });
  save_model("stage3.ckpt", fused.params, Branches::Fused, Stage::FusedFinetune);
  result.stages[Stage::FusedFinetune] = fused.params;

  if (!config.skip_center_stage) tracker.advance(Stage::CenterFinetune);
  tracker.advance(Stage::Alternating);
  result.late = guarded([&] { return train_late_stages(arch, fused.params, corpus, split.train, config, &log); });
  if (result.late.stage4) {
    save_model("stage4.ckpt", *result.late.stage4, Branches::Fused, Stage::CenterFinetune);
    result.stages[Stage::CenterFinetune] = *result.late.stage4;
  }
  save_model("stage5.ckpt", result.late.alternating.params, Branches::Fused, Stage::Alternating);
  result.stages[Stage::Alternating] = result.late.alternating.params;

  result.gallery = build_gallery(result.final_encoder(), corpus, split.retrieval);

  if (persist) {
    if (result.late.centers) {
      const auto bytes = checkpoint_bytes(centers_checkpoint(*result.late.centers));
      io::write_file(path("centers.ckpt"), bytes);
      manifest["artifacts"]["centers.ckpt"] = io::content_hash(bytes);
    }
    std::vector<std::uint64_t> train_ids;
    std::vector<std::uint16_t> train_labels;
    const bool filtered = config.filter_classification;
    for (std::size_t i = 0; i < split.train.size(); ++i) {
      if (filtered && !result.late.entropy.kept[i]) continue;
      train_ids.push_back(split.train[i]);
      train_labels.push_back(corpus.sketches[split.train[i]].label);
    }
    const auto codes = gallery_bytes(pack(result.late.alternating.codes, train_ids, train_labels));
    io::write_file(path("train_codes.bin"), codes);
    manifest["artifacts"]["train_codes.bin"] = io::content_hash(codes);
    const auto gallery = gallery_bytes(result.gallery);
    io::write_file(path("gallery.bin"), gallery);
    manifest["artifacts"]["gallery.bin"] = io::content_hash(gallery);
    {
      std::ofstream out(path("entropy.csv"), std::ios::binary);
      write_entropy_csv(out, result.late.entropy, corpus);
    }

    auto objective = [](const ObjectiveValue& v) {
      return nlohmann::ordered_json{{"total", v.total}, {"cel", v.cel}, {"scl", v.scl}, {"ql", v.ql}};
    };
    manifest["stage5"]["initial_objective"] = objective(result.late.alternating.initial);
    manifest["stage5"]["final_objective"] = objective(result.late.alternating.final);
    for (const auto& u : result.late.alternating.updates) {
      manifest["stage5"]["code_updates"].push_back(
          {{"outer", u.outer}, {"ql_old", u.ql_old}, {"ql_new", u.ql_new}, {"changed", u.changed}});
    }
    manifest["entropy_kept"] = result.late.entropy.kept_count();
    io::write_file(path("manifest.json"), manifest.dump(2) + "\n");
  }
  return result;
}

}  // namespace sketchhash
