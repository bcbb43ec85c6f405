#include "sketchhash/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sketchhash/binary_io.hpp"
#include "sketchhash/entropy.hpp"
#include "sketchhash/eval.hpp"
#include "sketchhash/synthetic.hpp"
#include "sketchhash/trainer.hpp"

namespace sketchhash {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Gradient check

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.flat()[i] = rng.normal(0.0, scale);
  return t;
}

}  // namespace

EncoderGradCheck gradcheck_encoder(const std::string& profile, std::uint64_t seed,
                                   const EncoderGradCheckOptions& opts) {
  const std::size_t categories = 3;
  auto raw = synthesize_corpus(categories, 2, derive_seed(seed, 11));
  raw.resize(4);
  const Corpus corpus = build_corpus(raw);
  const ArchConfig arch = ArchConfig::named(profile, 16, static_cast<int>(corpus.categories.size()));
  Params params = init_params(arch, Part::Cnn | Part::Rnn | Part::Hash | Part::Classifier, seed);
  // Zero biases put blank raster regions exactly on the ReLU kink; check at a
  // generic point instead.
  Rng jitter(derive_seed(seed, 13));
  for (auto& [name, t] : params) {
    if (t.rank() == 1) t.flat() += random_tensor(t.shape(), jitter, 0.1).flat();
  }

  SketchRefs refs;
  std::vector<int> labels;
  for (const auto& s : corpus.sketches) {
    refs.push_back(&s);
    labels.push_back(s.label);
  }
  Rng rng(derive_seed(seed, 12));
  CenterTable centers;
  centers.centers = Eigen::MatrixXd::NullaryExpr(arch.classes, arch.code_bits, [&] { return rng.uniform(); });
  Tensor codes(Shape{static_cast<Eigen::Index>(refs.size()), arch.code_bits});
  for (Eigen::Index i = 0; i < codes.size(); ++i) codes.flat()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  const LossWeights weights;

  const GraphFunction objective = [&](Graph& g, const Binding& b) {
    const auto pass = forward(g, b, arch, Branches::Fused, refs);
    return full_objective(pass.features, pass.logits, labels, &centers, &codes, weights).total;
  };

  EncoderGradCheck out;
  for (const auto& [name, t] : params) out.parameters += static_cast<std::size_t>(t.size());
  GradCheckOptions options;
  options.max_per_tensor = opts.samples;
  options.seed = seed;
  options.epsilon = opts.epsilon;
  options.refine_above = opts.tolerance;
  // The recurrent branch and the layers after the fusion point are smooth;
  // only the convolutional branch has ReLU and max-pool kinks.
  for (const char* prefix : {"rnn.", "hash.", "cls."}) options.epsilon_by_prefix[prefix] = opts.smooth_epsilon;
  out.objective = check_gradients(objective, params, options);
  out.primitives = check_primitives(seed, {opts.epsilon, opts.smooth_epsilon, opts.primitive_tolerance});
  out.pass = out.objective.max_relative_error < opts.tolerance &&
             out.primitives.max_relative_error < opts.primitive_tolerance;
  return out;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

/// Relative paths resolve against $SKETCHHASH_ROOT when it is set.
std::string resolve(const std::string& path) {
  const char* root = std::getenv("SKETCHHASH_ROOT");
  if (path.empty() || root == nullptr || *root == '\0' || fs::path(path).is_absolute()) return path;
  return (fs::path(root) / path).string();
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

DatasetSplit load_split(const std::string& path) {
  std::ifstream in(resolve(path), std::ios::binary);
  if (!in) throw Error("cannot read split manifest " + path);
  return read_split_manifest(in);
}

void write_text(const std::string& path, const std::string& text) { io::write_file(resolve(path), text); }

struct TrainOptions {
  std::string profile = "toy";
  int bits = 16;
  bool any_bits = false;
  int recognition_width = 0;
  TrainConfig config;

  void add(CLI::App* app) {
    app->add_option("--profile", profile, "architecture profile")->check(CLI::IsMember({"toy", "full"}));
    app->add_option("--bits", bits, "code length D");
    app->add_flag("--allow-any-bits", any_bits, "accept D outside 16/24/32/64");
    app->add_option("--recognition-width", recognition_width, "ReLU layer before the classifier (0 = none)")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--seed", config.seed, "random seed");
    app->add_option("--cnn-epochs", config.cnn_epochs);
    app->add_option("--rnn-epochs", config.rnn_epochs);
    app->add_option("--fused-epochs", config.fused_epochs);
    app->add_option("--center-epochs", config.center_epochs);
    app->add_option("--outer", config.outer_iterations, "outer iterations of stage 5");
    app->add_option("--inner", config.inner_iterations, "updates per outer iteration (-1 = one epoch)");
    app->add_option("--batch", config.batch_size);
    app->add_option("--lr", config.learning_rate);
    app->add_option("--decay-every", config.decay_every);
    app->add_option("--clip", config.clip_norm);
    app->add_option("--lambda-scl", config.weights.scl);
    app->add_option("--lambda-ql", config.weights.ql);
    app->add_option("--entropy-lower", config.entropy_lower);
    app->add_option("--entropy-upper", config.entropy_upper);
    app->add_flag("--recompute-centers", config.recompute_centers);
    app->add_flag("--filter-classification", config.filter_classification);
    app->add_flag("--skip-center-stage", config.skip_center_stage);
  }

  ArchConfig arch(int classes) const {
    auto a = ArchConfig::named(profile, bits, classes);
    a.recognition_width = recognition_width;
    if (!any_bits && !a.standard_code_length()) {
      throw PreconditionError("code length " + std::to_string(bits) +
                              " is not one of 16, 24, 32, 64 (pass --allow-any-bits to override)");
    }
    a.validate();
    return a;
  }
};

double mean_query_latency(const PackedCodes& gallery, const PackedCodes& queries, std::size_t min_queries) {
  if (gallery.n == 0 || queries.n == 0) return -1.0;
  const std::size_t count = std::max(min_queries, queries.n);
  volatile std::size_t sink = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t q = 0; q < count; ++q) sink = sink + search(queries.row(q % queries.n), gallery).front().index;
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(count);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Binary hashing of stroke sketches: ingest, train, index, search, evaluate"};
  app.set_config("--config", "", "key=value configuration file; command-line flags override it");
  app.require_subcommand(1);

  // synth -------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "write synthetic sketch records");
  std::size_t synth_categories = 10, synth_per = 410;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth->add_option("--categories", synth_categories)->check(CLI::Range(1, 25));
  synth->add_option("--per-category", synth_per);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out, "NDJSON output")->required();

  // ingest ------------------------------------------------------------------
  auto* ingest = app.add_subcommand("ingest", "parse NDJSON records into a binary corpus");
  std::vector<std::string> ingest_inputs;
  std::string ingest_out;
  bool ingest_strict = false;
  ingest->add_option("--input", ingest_inputs, "record files")->required();
  ingest->add_option("--out", ingest_out, "corpus file")->required();
  ingest->add_flag("--strict", ingest_strict, "fail on any rejected record");

  // filter ------------------------------------------------------------------
  auto* filter = app.add_subcommand("filter", "entropy statistics and noise flags");
  std::string filter_corpus, filter_split, filter_which = "train", filter_out;
  int filter_side = 64;
  double filter_lower = 0.05, filter_upper = 0.95;
  filter->add_option("--corpus", filter_corpus)->required();
  filter->add_option("--split", filter_split, "split manifest (default: whole corpus)");
  filter->add_option("--which", filter_which)->check(CLI::IsMember({"train", "validation", "retrieval", "query"}));
  filter->add_option("--side", filter_side, "raster side");
  filter->add_option("--lower", filter_lower);
  filter->add_option("--upper", filter_upper);
  filter->add_option("--out", filter_out, "CSV output")->required();

  // split -------------------------------------------------------------------
  auto* split = app.add_subcommand("split", "deterministic per-category splits");
  std::string split_corpus, split_out;
  SplitQuotas quotas{300, 50, 50, 10};
  std::uint64_t split_seed = 7;
  split->add_option("--corpus", split_corpus)->required();
  split->add_option("--train", quotas.train);
  split->add_option("--validation", quotas.validation);
  split->add_option("--retrieval", quotas.retrieval);
  split->add_option("--query", quotas.query);
  split->add_option("--seed", split_seed);
  split->add_option("--out", split_out)->required();

  // train -------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "run the staged training algorithm");
  std::string train_corpus, train_split, train_dir, train_stage = "all";
  TrainOptions train_opts;
  train->add_option("--corpus", train_corpus)->required();
  train->add_option("--split", train_split)->required();
  train->add_option("--out-dir", train_dir)->required();
  train->add_option("--stage", train_stage, "stages to run")->check(CLI::IsMember({"all"}));
  train_opts.add(train);

  // recognize ---------------------------------------------------------------
  auto* recognize = app.add_subcommand("recognize", "re-purpose the pretrained branches for recognition");
  std::string rc_run, rc_corpus, rc_split, rc_out;
  std::uint64_t rc_seed = 7;
  int rc_epochs = TrainConfig{}.fused_epochs;
  recognize->add_option("--run-dir", rc_run, "training output holding stage1.ckpt and stage2.ckpt")->required();
  recognize->add_option("--corpus", rc_corpus)->required();
  recognize->add_option("--split", rc_split)->required();
  recognize->add_option("--out", rc_out, "checkpoint of the recognition model")->required();
  recognize->add_option("--seed", rc_seed);
  recognize->add_option("--epochs", rc_epochs);

  // encode / index ------------------------------------------------------------
  auto* encode = app.add_subcommand("encode", "print binary codes of a split as hex");
  auto* index = app.add_subcommand("index", "encode a split into a gallery file");
  std::string enc_ckpt, enc_corpus, enc_split, enc_which = "retrieval", enc_out;
  for (auto* cmd : {encode, index}) {
    cmd->add_option("--checkpoint", enc_ckpt)->required();
    cmd->add_option("--corpus", enc_corpus)->required();
    cmd->add_option("--split", enc_split)->required();
    cmd->add_option("--which", enc_which)->check(CLI::IsMember({"train", "validation", "retrieval", "query"}));
  }
  encode->add_option("--out", enc_out, "text output (default stdout)");
  index->add_option("--out", enc_out, "gallery file")->required();

  // query -------------------------------------------------------------------
  auto* query = app.add_subcommand("query", "rank a gallery for one code");
  std::string q_gallery, q_code, q_sketch, q_ckpt;
  std::size_t q_k = 10;
  query->add_option("--gallery", q_gallery)->required();
  auto* q_code_opt = query->add_option("--code", q_code, "query code in hex");
  auto* q_sketch_opt = query->add_option("--sketch", q_sketch, "NDJSON file, first record is the query");
  q_code_opt->excludes(q_sketch_opt);
  query->add_option("--checkpoint", q_ckpt, "model used to encode --sketch");
  query->add_option("--k", q_k, "results to print (0 = all)");

  // evaluate ----------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "MAP, precision@k and PR curve");
  std::string ev_gallery, ev_queries, ev_out, ev_pr, ev_ap;
  std::size_t ev_k = 200;
  evaluate->add_option("--gallery", ev_gallery)->required();
  evaluate->add_option("--queries", ev_queries)->required();
  evaluate->add_option("--k", ev_k);
  evaluate->add_option("--out", ev_out, "JSON output (default stdout)");
  evaluate->add_option("--pr-csv", ev_pr);
  evaluate->add_option("--ap-csv", ev_ap);

  // zeroshot ----------------------------------------------------------------
  auto* zeroshot = app.add_subcommand("zeroshot", "train on seen categories, retrieve held-out ones");
  std::string zs_corpus, zs_dir;
  std::size_t zs_holdout = 20;
  SplitQuotas zs_quotas{300, 50, 50, 10};
  TrainOptions zs_opts;
  zeroshot->add_option("--corpus", zs_corpus)->required();
  zeroshot->add_option("--out-dir", zs_dir)->required();
  zeroshot->add_option("--holdout", zs_holdout);
  zeroshot->add_option("--train", zs_quotas.train);
  zeroshot->add_option("--validation", zs_quotas.validation);
  zeroshot->add_option("--retrieval", zs_quotas.retrieval);
  zeroshot->add_option("--query", zs_quotas.query);
  zs_opts.add(zeroshot);

  // gradcheck ---------------------------------------------------------------
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full objective");
  std::string gc_profile = "toy";
  std::uint64_t gc_seed = 1;
  EncoderGradCheckOptions gc;
  gradcheck->add_option("--profile", gc_profile)->check(CLI::IsMember({"toy", "full"}));
  gradcheck->add_option("--seed", gc_seed);
  gradcheck->add_option("--samples", gc.samples, "coordinates per tensor (0 = all)");
  gradcheck->add_option("--tolerance", gc.tolerance);
  gradcheck->add_option("--primitive-tolerance", gc.primitive_tolerance);
  gradcheck->add_option("--epsilon", gc.epsilon, "step behind ReLU/max-pool kinks")->check(CLI::PositiveNumber);
  gradcheck->add_option("--smooth-epsilon", gc.smooth_epsilon, "step for smooth subgraphs")
      ->check(CLI::PositiveNumber);

  // report ------------------------------------------------------------------
  auto* report = app.add_subcommand("report", "consolidate run artifacts into one JSON file");
  std::string rp_run, rp_metrics, rp_pr, rp_gallery, rp_queries, rp_ckpt, rp_corpus, rp_split, rp_out;
  std::size_t rp_latency_queries = 100;
  report->add_option("--run-dir", rp_run, "training output directory");
  report->add_option("--metrics", rp_metrics, "JSON from evaluate");
  report->add_option("--pr-csv", rp_pr, "PR CSV from evaluate");
  report->add_option("--gallery", rp_gallery);
  report->add_option("--queries", rp_queries);
  report->add_option("--checkpoint", rp_ckpt, "model for d1/d2 and recognition accuracy");
  report->add_option("--corpus", rp_corpus);
  report->add_option("--split", rp_split);
  report->add_option("--latency-queries", rp_latency_queries)->check(CLI::Range(std::size_t{100}, std::size_t{1000000}));
  report->add_option("--out", rp_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*synth) {
      const auto sketches = synthesize_corpus(synth_categories, synth_per, synth_seed);
      std::ostringstream text;
      write_sketch_records(text, sketches);
      write_text(synth_out, text.str());
      out << "wrote " << sketches.size() << " records\n";
    } else if (*ingest) {
      std::vector<RawSketch> raw;
      std::size_t rejected = 0;
      for (const auto& input : ingest_inputs) {
        std::ifstream in(resolve(input), std::ios::binary);
        if (!in) throw Error("cannot read " + input);
        auto parsed = parse_sketch_records(in);
        for (const auto& e : parsed.errors) err << input << ": " << e.what() << '\n';
        rejected += parsed.errors.size();
        for (auto& s : parsed.sketches) raw.push_back(std::move(s));
      }
      if (ingest_strict && rejected > 0) throw FormatError(std::to_string(rejected) + " records rejected");
      const Corpus corpus = build_corpus(raw);
      save_corpus(resolve(ingest_out), corpus);
      out << "ingested " << corpus.size() << " sketches in " << corpus.categories.size() << " categories, "
          << rejected << " rejected, offset scale " << num(corpus.offset_scale) << '\n';
    } else if (*filter) {
      const Corpus corpus = load_corpus(resolve(filter_corpus));
      std::vector<std::uint32_t> ids;
      if (filter_split.empty()) {
        for (std::size_t i = 0; i < corpus.size(); ++i) ids.push_back(static_cast<std::uint32_t>(i));
      } else {
        ids = load_split(filter_split).by_name(filter_which);
      }
      const auto rep = entropy_report(corpus, ids, filter_side, filter_lower, filter_upper);
      std::ostringstream csv;
      write_entropy_csv(csv, rep, corpus);
      write_text(filter_out, csv.str());
      out << "kept " << rep.kept_count() << " of " << ids.size() << " sketches\n";
    } else if (*split) {
      const Corpus corpus = load_corpus(resolve(split_corpus));
      const auto labels = corpus.labels();
      const auto s = make_splits(labels, corpus.categories, quotas, split_seed);
      std::ostringstream text;
      write_split_manifest(text, s);
      write_text(split_out, text.str());
      out << "train " << s.train.size() << ", validation " << s.validation.size() << ", retrieval "
          << s.retrieval.size() << ", query " << s.query.size() << '\n';
    } else if (*train) {
      const Corpus corpus = load_corpus(resolve(train_corpus));
      const DatasetSplit s = load_split(train_split);
      const auto arch = train_opts.arch(static_cast<int>(corpus.categories.size()));
      const auto dir = resolve(train_dir);
      const auto result = train_pipeline(corpus, s, arch, train_opts.config, dir);
      const auto encoder = result.final_encoder();
      save_gallery((fs::path(dir) / "queries.bin").string(), build_gallery(encoder, corpus, s.query));
      json summary;
      summary["out_dir"] = train_dir;
      summary["validation_accuracy"] =
          s.validation.empty() ? json(nullptr) : json(recognition_accuracy(encoder, corpus, s.validation));
      summary["final_objective"] = result.late.alternating.final.total;
      out << summary.dump() << '\n';
    } else if (*recognize) {
      const Corpus corpus = load_corpus(resolve(rc_corpus));
      const DatasetSplit s = load_split(rc_split);
      const auto cnn = Encoder::from_checkpoint(load_checkpoint((fs::path(resolve(rc_run)) / "stage1.ckpt").string()));
      const auto rnn = Encoder::from_checkpoint(load_checkpoint((fs::path(resolve(rc_run)) / "stage2.ckpt").string()));
      TrainConfig config;
      config.seed = rc_seed;
      config.fused_epochs = rc_epochs;
      const auto& arch = cnn.arch();
      const Encoder model(arch, train_recognition(arch, cnn.params(), rnn.params(), corpus, s.train, config).params,
                          Branches::Recognition);
      io::write_file(resolve(rc_out), checkpoint_bytes(model.to_checkpoint()));
      json j;
      if (s.validation.empty()) {
        j["validation_accuracy"] = nullptr;
      } else {
        j["validation_accuracy"] = recognition_accuracy(model, corpus, s.validation);
        j["cnn_accuracy"] = recognition_accuracy(cnn, corpus, s.validation);
        j["rnn_accuracy"] = recognition_accuracy(rnn, corpus, s.validation);
      }
      out << j.dump() << '\n';
    } else if (*encode || *index) {
      const auto encoder = Encoder::from_checkpoint(load_checkpoint(resolve(enc_ckpt)));
      const Corpus corpus = load_corpus(resolve(enc_corpus));
      const auto ids = load_split(enc_split).by_name(enc_which);
      const auto gallery = build_gallery(encoder, corpus, ids);
      if (*index) {
        save_gallery(resolve(enc_out), gallery);
        out << "indexed " << gallery.n << " codes of " << gallery.d << " bits\n";
      } else {
        std::ostringstream text;
        for (std::size_t i = 0; i < gallery.n; ++i) {
          text << gallery.ids[i] << ' ' << gallery.labels[i] << ' ' << code_to_hex(unpack(gallery, i)) << '\n';
        }
        if (enc_out.empty()) out << text.str();
        else write_text(enc_out, text.str());
      }
    } else if (*query) {
      const auto gallery = load_gallery(resolve(q_gallery));
      BinaryCode code;
      if (!q_code.empty()) {
        code = code_from_hex(q_code, gallery.d);
      } else if (!q_sketch.empty()) {
        if (q_ckpt.empty()) throw PreconditionError("--sketch needs --checkpoint to encode it");
        const auto ckpt = load_checkpoint(resolve(q_ckpt));
        const auto encoder = Encoder::from_checkpoint(ckpt);
        std::ifstream in(resolve(q_sketch), std::ios::binary);
        if (!in) throw Error("cannot read " + q_sketch);
        const auto parsed = parse_sketch_records(in);
        if (parsed.sketches.empty()) throw FormatError("no valid record in " + q_sketch);
        const auto it = ckpt.meta.find("corpus.offset_scale");
        const double scale = it == ckpt.meta.end() ? 1.0 : std::stod(it->second);
        const auto sketch = to_stroke_sequence(parsed.sketches.front(), 0, scale);
        const StrokeSketch* ref = &sketch;
        code = encoder.encode(std::span<const StrokeSketch* const>(&ref, 1)).front();
      } else {
        throw PreconditionError("query needs --code or --sketch");
      }
      out << "# query " << code_to_hex(code) << '\n';
      for (const auto& h : search(code, gallery, q_k)) {
        out << h.id << ' ' << h.distance;
        if (gallery.has_labels()) out << ' ' << gallery.labels[h.index];
        out << '\n';
      }
    } else if (*evaluate) {
      const auto gallery = load_gallery(resolve(ev_gallery));
      const auto queries = load_gallery(resolve(ev_queries));
      const auto m = evaluate_retrieval(gallery, queries, ev_k);
      const auto hash = io::content_hash(gallery_bytes(gallery) + gallery_bytes(queries) + std::to_string(ev_k));
      const auto text = metrics_json(m, hash);
      if (ev_out.empty()) out << text;
      else write_text(ev_out, text);
      if (!ev_pr.empty()) {
        std::ostringstream csv;
        write_pr_csv(csv, m);
        write_text(ev_pr, csv.str());
      }
      if (!ev_ap.empty()) {
        std::ostringstream csv;
        write_ap_csv(csv, m, queries);
        write_text(ev_ap, csv.str());
      }
    } else if (*zeroshot) {
      const Corpus corpus = load_corpus(resolve(zs_corpus));
      const auto z = zero_shot_protocol(corpus, zs_opts.config.seed, zs_holdout, zs_quotas);
      const auto sub = restrict_corpus(corpus, z.seen);
      DatasetSplit train_split;
      train_split.train = sub.translate(z.train.train);
      train_split.validation = sub.translate(z.train.validation);
      train_split.seed = z.train.seed;
      const auto arch = zs_opts.arch(static_cast<int>(sub.corpus.categories.size()));
      const auto dir = resolve(zs_dir);
      const auto result = train_pipeline(sub.corpus, train_split, arch, zs_opts.config, dir);
      const auto encoder = result.final_encoder();
      const auto gallery = build_gallery(encoder, corpus, z.eval.retrieval);
      const auto queries = build_gallery(encoder, corpus, z.eval.query);
      save_gallery((fs::path(dir) / "holdout_gallery.bin").string(), gallery);
      save_gallery((fs::path(dir) / "holdout_queries.bin").string(), queries);
      const auto m = evaluate_retrieval(gallery, queries, std::min<std::size_t>(200, gallery.n));

      json j;
      for (auto c : z.seen) j["seen"].push_back(corpus.categories[c]);
      for (auto c : z.holdout) j["holdout"].push_back(corpus.categories[c]);
      j["holdout_map"] = m.map;
      j["holdout_precision_at_k"] = m.precision_at_k;
      j["k"] = m.k;
      const auto text = j.dump(2) + "\n";
      io::write_file((fs::path(dir) / "zeroshot.json").string(), text);
      out << text;
    } else if (*gradcheck) {
      const auto r = gradcheck_encoder(gc_profile, gc_seed, gc);
      json j;
      j["profile"] = gc_profile;
      j["parameters"] = r.parameters;
      j["coordinates"] = r.objective.coordinates;
      j["max_relative_error"] = r.objective.max_relative_error;
      j["worst_parameter"] = r.objective.worst_parameter;
      j["worst_index"] = r.objective.worst_index;
      j["refined_coordinates"] = r.objective.refined;
      j["epsilon"] = gc.epsilon;
      j["smooth_epsilon"] = gc.smooth_epsilon;
      j["primitive_max_relative_error"] = r.primitives.max_relative_error;
      j["primitive_worst"] = r.primitives.worst_parameter;
      j["primitive_coordinates"] = r.primitives.coordinates;
      j["pass"] = r.pass;
      out << j.dump(2) << '\n';
      return r.pass ? 0 : 1;
    } else if (*report) {
      json j;
      const json absent = "absent";
      j["map"] = absent;
      j["precision_at_k"] = absent;
      j["pr_curve"] = absent;
      j["d1"] = absent;
      j["d2"] = absent;
      j["d1_d2"] = absent;
      j["distance_estimator"] = "centroid";
      j["recognition_accuracy"] = absent;
      j["query_latency_s"] = absent;
      j["gallery_memory_bytes"] = absent;
      j["training"] = absent;

      if (!rp_metrics.empty()) {
        const auto m = json::parse(io::read_file(resolve(rp_metrics)));
        j["map"] = m.at("map");
        const std::string key = "precision_at_" + std::to_string(m.at("k").get<std::size_t>());
        j["precision_at_k"] = m.at(key);
        j["k"] = m.at("k");
      }
      if (!rp_pr.empty()) {
        std::istringstream csv(io::read_file(resolve(rp_pr)));
        std::string line;
        std::getline(csv, line);
        json points = json::array();
        while (std::getline(csv, line)) {
          std::istringstream row(line);
          std::string cutoff, recall, precision;
          std::getline(row, cutoff, ',');
          std::getline(row, recall, ',');
          std::getline(row, precision, ',');
          points.push_back({std::stod(recall), std::stod(precision)});
        }
        j["pr_curve"] = points;
      }
      if (!rp_run.empty()) {
        const auto manifest = fs::path(resolve(rp_run)) / "manifest.json";
        if (fs::exists(manifest)) {
          const auto m = json::parse(io::read_file(manifest.string()));
          j["training"] = {{"seed", m.at("seed")},
                           {"corpus_hash", m.at("corpus_hash")},
                           {"stage5", m.at("stage5")},
                           {"entropy_kept", m.at("entropy_kept")}};
        }
        if (rp_gallery.empty() && fs::exists(fs::path(resolve(rp_run)) / "gallery.bin")) {
          rp_gallery = (fs::path(resolve(rp_run)) / "gallery.bin").string();
        }
        if (rp_queries.empty() && fs::exists(fs::path(resolve(rp_run)) / "queries.bin")) {
          rp_queries = (fs::path(resolve(rp_run)) / "queries.bin").string();
        }
        if (rp_ckpt.empty() && fs::exists(fs::path(resolve(rp_run)) / "stage5.ckpt")) {
          rp_ckpt = (fs::path(resolve(rp_run)) / "stage5.ckpt").string();
        }
      }
      if (!rp_gallery.empty()) {
        const auto gallery = load_gallery(resolve(rp_gallery));
        j["gallery_memory_bytes"] = gallery.memory_bytes();
        if (!rp_queries.empty()) {
          const auto queries = load_gallery(resolve(rp_queries));
          const double latency = mean_query_latency(gallery, queries, rp_latency_queries);
          if (latency >= 0) {
            j["query_latency_s"] = latency;
            j["latency_queries"] = std::max(rp_latency_queries, queries.n);
          }
        }
      }
      if (!rp_ckpt.empty() && !rp_corpus.empty() && !rp_split.empty()) {
        const auto encoder = Encoder::from_checkpoint(load_checkpoint(resolve(rp_ckpt)));
        const Corpus corpus = load_corpus(resolve(rp_corpus));
        const auto s = load_split(rp_split);
        const auto& ids = s.retrieval.empty() ? s.train : s.retrieval;
        const auto refs = select_sketches(corpus, ids);
        const auto outputs = encoder.run(refs);
        std::vector<int> labels;
        for (const auto* r : refs) labels.push_back(r->label);
        const auto d = intra_inter_ratio(outputs.features, labels);
        j["d1"] = d.d1;
        j["d2"] = d.d2;
        j["d1_d2"] = d.ratio;
        if (!s.validation.empty()) j["recognition_accuracy"] = recognition_accuracy(encoder, corpus, s.validation);
      }
      write_text(rp_out, j.dump(2) + "\n");
      out << "report written to " << rp_out << '\n';
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("sketchhash");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace sketchhash
