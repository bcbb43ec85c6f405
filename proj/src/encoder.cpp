#include "sketchhash/encoder.hpp"

#include <cmath>
#include <sstream>

#include "sketchhash/rng.hpp"

namespace sketchhash {

namespace {

std::uint64_t name_tag(const std::string& name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor normal_tensor(Shape shape, double stddev, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.flat()[i] = rng.normal(0.0, stddev);
  return t;
}

Tensor uniform_tensor(Shape shape, double limit, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.flat()[i] = rng.uniform(-limit, limit);
  return t;
}

std::string join(const std::vector<int>& xs) {
  std::ostringstream out;
  for (std::size_t i = 0; i < xs.size(); ++i) out << (i ? "," : "") << xs[i];
  return out.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(cur);
  return parts;
}

const std::string& meta_at(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("architecture descriptor lacks '" + key + "'");
  return it->second;
}

std::string conv_name(std::size_t i) { return "cnn.conv" + std::to_string(i); }
std::string dense_name(std::size_t i) { return "cnn.fc" + std::to_string(i); }
std::string gru_name(int layer, bool backward_direction) {
  return "rnn.l" + std::to_string(layer) + (backward_direction ? ".bwd" : ".fwd");
}

}  // namespace

// ---------------------------------------------------------------------------
// ArchConfig

ArchConfig ArchConfig::toy(int code_bits, int classes) {
  ArchConfig a;
  a.profile = "toy";
  a.raster_side = 64;
  a.conv = {{16, 3, 1, Padding::Same, 2, 2}, {32, 3, 1, Padding::Same, 2, 2}, {64, 3, 1, Padding::Same, 2, 2}};
  a.dense = {128};
  a.gru_hidden = 64;
  a.gru_layers = 2;
  a.code_bits = code_bits;
  a.classes = classes;
  return a;
}

ArchConfig ArchConfig::full(int code_bits, int classes) {
  ArchConfig a;
  a.profile = "full";
  a.raster_side = 224;
  a.conv = {{96, 11, 4, Padding::Valid, 3, 2},
            {256, 5, 1, Padding::Same, 3, 2},
            {384, 3, 1, Padding::Same, 0, 0},
            {384, 3, 1, Padding::Same, 0, 0},
            {256, 3, 1, Padding::Same, 3, 2}};
  a.dense = {4096, 4096};
  a.recognition_head_width = 2048;
  a.gru_hidden = 512;
  a.gru_layers = 2;
  a.code_bits = code_bits;
  a.classes = classes;
  return a;
}

ArchConfig ArchConfig::named(const std::string& profile, int code_bits, int classes) {
  if (profile == "toy") return toy(code_bits, classes);
  if (profile == "full") return full(code_bits, classes);
  throw PreconditionError("unknown architecture profile '" + profile + "'");
}

Eigen::Index ArchConfig::flattened_width() const {
  Eigen::Index channels = 1, side = raster_side;
  for (const auto& c : conv) {
    if (c.padding == Padding::Valid) {
      if (side < c.kernel) return 0;
      side = (side - c.kernel) / c.stride + 1;
    } else {
      side = (side + c.stride - 1) / c.stride;
    }
    channels = c.channels;
    if (c.pool_kernel > 0) {
      if (side < c.pool_kernel) return 0;
      side = (side - c.pool_kernel) / c.pool_stride + 1;
    }
  }
  return channels * side * side;
}

int ArchConfig::cnn_width() const {
  return dense.empty() ? static_cast<int>(flattened_width()) : dense.back();
}

bool ArchConfig::standard_code_length() const {
  return code_bits == 16 || code_bits == 24 || code_bits == 32 || code_bits == 64;
}

void ArchConfig::validate() const {
  if (raster_side < 16) throw PreconditionError("raster side must be at least 16");
  if (code_bits <= 0 || classes <= 0) throw PreconditionError("code bits and classes must be positive");
  if (gru_hidden <= 0 || gru_layers <= 0) throw PreconditionError("GRU sizes must be positive");
  for (const auto& c : conv) {
    if (c.channels <= 0 || c.kernel <= 0 || c.stride <= 0 || c.pool_kernel < 0 ||
        (c.pool_kernel > 0 && c.pool_stride <= 0)) {
      throw PreconditionError("invalid convolution layer spec");
    }
  }
  for (int d : dense) {
    if (d <= 0) throw PreconditionError("dense widths must be positive");
  }
  if (recognition_width < 0 || recognition_head_width < 0) {
    throw PreconditionError("recognition widths must be non-negative");
  }
  if (flattened_width() <= 0) throw PreconditionError("convolution stack does not fit the raster side");
}

std::map<std::string, std::string> ArchConfig::descriptor() const {
  std::ostringstream conv_spec;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const auto& c = conv[i];
    conv_spec << (i ? ";" : "") << c.channels << ':' << c.kernel << ':' << c.stride << ':'
              << (c.padding == Padding::Same ? "same" : "valid") << ':' << c.pool_kernel << ':'
              << c.pool_stride;
  }
  return {{"arch.profile", profile},
          {"arch.raster_side", std::to_string(raster_side)},
          {"arch.conv", conv_spec.str()},
          {"arch.dense", join(dense)},
          {"arch.gru_hidden", std::to_string(gru_hidden)},
          {"arch.gru_layers", std::to_string(gru_layers)},
          {"arch.code_bits", std::to_string(code_bits)},
          {"arch.classes", std::to_string(classes)},
          {"arch.recognition_width", std::to_string(recognition_width)},
          {"arch.recognition_head_width", std::to_string(recognition_head_width)}};
}

ArchConfig ArchConfig::from_descriptor(const std::map<std::string, std::string>& meta) {
  ArchConfig a;
  try {
    a.profile = meta_at(meta, "arch.profile");
    a.raster_side = std::stoi(meta_at(meta, "arch.raster_side"));
    for (const auto& layer : split(meta_at(meta, "arch.conv"), ';')) {
      const auto f = split(layer, ':');
      if (f.size() != 6) throw FormatError("bad conv layer '" + layer + "'");
      a.conv.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2]),
                        f[3] == "same" ? Padding::Same : Padding::Valid, std::stoi(f[4]), std::stoi(f[5])});
    }
    for (const auto& d : split(meta_at(meta, "arch.dense"), ',')) a.dense.push_back(std::stoi(d));
    a.gru_hidden = std::stoi(meta_at(meta, "arch.gru_hidden"));
    a.gru_layers = std::stoi(meta_at(meta, "arch.gru_layers"));
    a.code_bits = std::stoi(meta_at(meta, "arch.code_bits"));
    a.classes = std::stoi(meta_at(meta, "arch.classes"));
    if (const auto it = meta.find("arch.recognition_width"); it != meta.end()) a.recognition_width = std::stoi(it->second);
    if (const auto it = meta.find("arch.recognition_head_width"); it != meta.end()) {
      a.recognition_head_width = std::stoi(it->second);
    }
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("malformed architecture descriptor: ") + e.what());
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------
// Parameters

Params init_params(const ArchConfig& arch, Part parts, std::uint64_t seed) {
  arch.validate();
  Params p;
  auto seed_for = [seed](const std::string& name) { return derive_seed(seed, name_tag(name)); };
  auto he = [&](const std::string& name, Shape shape, Eigen::Index fan_in) {
    p.emplace(name, normal_tensor(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), seed_for(name)));
  };
  auto xavier = [&](const std::string& name, Eigen::Index in, Eigen::Index out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    p.emplace(name, uniform_tensor(Shape{in, out}, limit, seed_for(name)));
  };
  auto zeros = [&](const std::string& name, Eigen::Index n) { p.emplace(name, Tensor(Shape{n})); };

  if (has(parts, Part::Cnn)) {
    Eigen::Index channels = 1;
    for (std::size_t i = 0; i < arch.conv.size(); ++i) {
      const auto& c = arch.conv[i];
      he(conv_name(i) + ".w", Shape{c.channels, channels, c.kernel, c.kernel}, channels * c.kernel * c.kernel);
      zeros(conv_name(i) + ".b", c.channels);
      channels = c.channels;
    }
    Eigen::Index width = arch.flattened_width();
    for (std::size_t i = 0; i < arch.dense.size(); ++i) {
      he(dense_name(i) + ".w", Shape{width, arch.dense[i]}, width);
      zeros(dense_name(i) + ".b", arch.dense[i]);
      width = arch.dense[i];
    }
  }
  if (has(parts, Part::Rnn)) {
    const Eigen::Index h = arch.gru_hidden;
    const double limit = 1.0 / std::sqrt(static_cast<double>(h));
    for (int layer = 0; layer < arch.gru_layers; ++layer) {
      const Eigen::Index in = layer == 0 ? 4 : 2 * h;
      for (bool bwd : {false, true}) {
        const auto base = gru_name(layer, bwd);
        p.emplace(base + ".wx", uniform_tensor(Shape{in, 3 * h}, limit, seed_for(base + ".wx")));
        p.emplace(base + ".wh", uniform_tensor(Shape{h, 3 * h}, limit, seed_for(base + ".wh")));
        p.emplace(base + ".bx", uniform_tensor(Shape{3 * h}, limit, seed_for(base + ".bx")));
        p.emplace(base + ".bh", uniform_tensor(Shape{3 * h}, limit, seed_for(base + ".bh")));
      }
    }
  }
  if (has(parts, Part::Hash)) {
    xavier("hash.w", arch.fusion_width(), arch.code_bits);
    zeros("hash.b", arch.code_bits);
  }
  if (has(parts, Part::Classifier)) {
    Eigen::Index in = arch.code_bits;
    if (arch.recognition_width > 0) {
      he("rec.w", Shape{in, arch.recognition_width}, in);
      zeros("rec.b", arch.recognition_width);
      in = arch.recognition_width;
    }
    xavier("cls.w", in, arch.classes);
    zeros("cls.b", arch.classes);
  }
  if (has(parts, Part::CnnHead)) {
    xavier("head.cnn.w", arch.cnn_width(), arch.classes);
    zeros("head.cnn.b", arch.classes);
  }
  if (has(parts, Part::RnnHead)) {
    xavier("head.rnn.w", arch.rnn_width(), arch.classes);
    zeros("head.rnn.b", arch.classes);
  }
  if (has(parts, Part::RecognitionHead)) {
    he("head.rec.fc.w", Shape{arch.fusion_width(), arch.recognition_head()}, arch.fusion_width());
    zeros("head.rec.fc.b", arch.recognition_head());
    xavier("head.rec.w", arch.recognition_head(), arch.classes);
    zeros("head.rec.b", arch.classes);
  }
  return p;
}

const char* to_string(Branches b) {
  switch (b) {
    case Branches::Cnn: return "cnn";
    case Branches::Rnn: return "rnn";
    case Branches::Fused: return "fused";
    case Branches::Recognition: return "recognition";
  }
  return "fused";
}

Branches branches_from_string(const std::string& s) {
  if (s == "cnn") return Branches::Cnn;
  if (s == "rnn") return Branches::Rnn;
  if (s == "fused") return Branches::Fused;
  if (s == "recognition") return Branches::Recognition;
  throw PreconditionError("unknown branch selection '" + s + "'");
}

// ---------------------------------------------------------------------------
// Graph building blocks

SketchRefs select_sketches(const Corpus& corpus, std::span<const std::uint32_t> ids) {
  SketchRefs refs;
  refs.reserve(ids.size());
  for (auto id : ids) {
    if (id >= corpus.size()) throw PreconditionError("sketch id " + std::to_string(id) + " not in corpus");
    refs.push_back(&corpus.sketches[id]);
  }
  return refs;
}

Tensor raster_batch(std::span<const RasterSketch> rasters) {
  if (rasters.empty()) throw ShapeError("empty raster batch");
  const int side = rasters.front().side;
  Tensor t(Shape{static_cast<Eigen::Index>(rasters.size()), 1, side, side});
  const Eigen::Index plane = Eigen::Index{side} * side;
  for (std::size_t i = 0; i < rasters.size(); ++i) {
    const auto& r = rasters[i];
    if (r.side != side || r.grid.rows() != side || r.grid.cols() != side) {
      throw ShapeError("raster batch mixes sides " + std::to_string(side) + " and " + std::to_string(r.side));
    }
    t.flat().segment(static_cast<Eigen::Index>(i) * plane, plane) =
        Eigen::Map<const Eigen::VectorXf>(r.grid.data(), plane).cast<double>();
  }
  return t;
}

Var cnn_forward(Graph& graph, const Binding& params, const ArchConfig& arch, const Tensor& rasters) {
  if (rasters.rank() != 4 || rasters.dim(1) != 1 || rasters.dim(2) != arch.raster_side ||
      rasters.dim(3) != arch.raster_side) {
    throw ShapeError("cnn_forward: rasters " + shape_string(rasters.shape()) + " do not match side " +
                     std::to_string(arch.raster_side));
  }
  Var x = graph.constant(rasters);
  for (std::size_t i = 0; i < arch.conv.size(); ++i) {
    const auto& c = arch.conv[i];
    x = relu(conv2d(x, params[conv_name(i) + ".w"], params[conv_name(i) + ".b"], c.stride, c.padding));
    if (c.pool_kernel > 0) x = max_pool2d(x, c.pool_kernel, c.pool_stride);
  }
  x = reshape(x, Shape{rasters.dim(0), arch.flattened_width()});
  for (std::size_t i = 0; i < arch.dense.size(); ++i) {
    x = relu(add_bias(matmul(x, params[dense_name(i) + ".w"]), params[dense_name(i) + ".b"]));
  }
  return x;
}

SequenceBatch SequenceBatch::from(std::span<const StrokeSketch* const> sketches) {
  SequenceBatch b;
  if (sketches.empty()) throw PreconditionError("empty sequence batch");
  int max_len = 0;
  for (const auto* s : sketches) {
    if (s->steps.empty()) throw PreconditionError("zero-length stroke sequence");
    b.lengths.push_back(static_cast<int>(s->steps.size()));
    max_len = std::max(max_len, b.lengths.back());
  }
  const auto n = static_cast<Eigen::Index>(sketches.size());
  for (int t = 0; t < max_len; ++t) {
    Tensor fwd(Shape{n, 4}), rev(Shape{n, 4});
    std::vector<std::uint8_t> act(sketches.size(), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int len = b.lengths[static_cast<std::size_t>(i)];
      if (t >= len) continue;
      act[static_cast<std::size_t>(i)] = 1;
      const auto& steps = sketches[static_cast<std::size_t>(i)]->steps;
      auto put = [](Tensor& dst, Eigen::Index row, const StrokeStep& s) {
        auto m = dst.matrix();
        m(row, 0) = s.dx;
        m(row, 1) = s.dy;
        m(row, 2) = s.pen_down;
        m(row, 3) = s.pen_up;
      };
      put(fwd, i, steps[static_cast<std::size_t>(t)]);
      put(rev, i, steps[static_cast<std::size_t>(len - 1 - t)]);
    }
    b.steps.push_back(std::move(fwd));
    b.reversed.push_back(std::move(rev));
    b.active.push_back(std::move(act));
  }
  return b;
}

GruWeights gru_weights(const Binding& params, int layer, bool backward_direction) {
  const auto base = gru_name(layer, backward_direction);
  return {params[base + ".wx"], params[base + ".wh"], params[base + ".bx"], params[base + ".bh"]};
}

Var gru_cell(const Var& x, const Var& h, const GruWeights& w) {
  const Eigen::Index hidden = h.shape().at(1);
  if (w.hidden.shape() != Shape{hidden, 3 * hidden}) {
    throw ShapeError("gru_cell: hidden weights " + shape_string(w.hidden.shape()) + " do not match state " +
                     shape_string(h.shape()));
  }
  const Var gx = add_bias(matmul(x, w.input), w.input_bias);
  const Var gh = add_bias(matmul(h, w.hidden), w.hidden_bias);
  const Var z = sigmoid(slice_cols(gx, 0, hidden) + slice_cols(gh, 0, hidden));
  const Var r = sigmoid(slice_cols(gx, hidden, hidden) + slice_cols(gh, hidden, hidden));
  const Var n = tanh(slice_cols(gx, 2 * hidden, hidden) + mul(r, slice_cols(gh, 2 * hidden, hidden)));
  // (1 - z) * n + z * h  ==  n + z * (h - n)
  return n + mul(z, h - n);
}

Var rnn_forward(Graph& graph, const Binding& params, const ArchConfig& arch, const SequenceBatch& batch) {
  const Eigen::Index rows = batch.batch();
  const int steps = batch.max_length();
  if (steps == 0) throw PreconditionError("zero-length stroke sequence");

  std::vector<Var> in_fwd, in_bwd;
  for (int t = 0; t < steps; ++t) {
    in_fwd.push_back(graph.constant(batch.steps[static_cast<std::size_t>(t)]));
    in_bwd.push_back(graph.constant(batch.reversed[static_cast<std::size_t>(t)]));
  }

  // mirror[t][i]: position of step t of sequence i in the other direction.
  std::vector<std::vector<int>> mirror(static_cast<std::size_t>(steps), std::vector<int>(static_cast<std::size_t>(rows), -1));
  for (int t = 0; t < steps; ++t) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const int len = batch.lengths[static_cast<std::size_t>(i)];
      if (t < len) mirror[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = len - 1 - t;
    }
  }

  auto run = [&](const std::vector<Var>& inputs, const GruWeights& w) {
    Var h = graph.constant(Tensor(Shape{rows, arch.gru_hidden}));
    std::vector<Var> states;
    states.reserve(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      h = select_rows(batch.active[t], gru_cell(inputs[t], h, w), h);
      states.push_back(h);
    }
    return states;
  };

  Var last_fwd, last_bwd;
  for (int layer = 0; layer < arch.gru_layers; ++layer) {
    const auto out_fwd = run(in_fwd, gru_weights(params, layer, false));
    const auto out_bwd = run(in_bwd, gru_weights(params, layer, true));
    last_fwd = out_fwd.back();
    last_bwd = out_bwd.back();
    if (layer + 1 == arch.gru_layers) break;
    for (int t = 0; t < steps; ++t) {
      const auto& idx = mirror[static_cast<std::size_t>(t)];
      in_fwd[static_cast<std::size_t>(t)] = concat({out_fwd[static_cast<std::size_t>(t)], gather_rows(out_bwd, idx)});
      in_bwd[static_cast<std::size_t>(t)] = concat({gather_rows(out_fwd, idx), out_bwd[static_cast<std::size_t>(t)]});
    }
  }
  return concat({last_fwd, last_bwd});
}

Var fuse_and_hash(const Binding& params, const Var& cnn_features, const Var& rnn_features) {
  if (cnn_features.shape().at(0) != rnn_features.shape().at(0)) {
    throw ShapeError("fuse_and_hash: batch sizes differ " + shape_string(cnn_features.shape()) + " vs " +
                     shape_string(rnn_features.shape()));
  }
  const Var fused = concat({cnn_features, rnn_features});
  return sigmoid(add_bias(matmul(fused, params["hash.w"]), params["hash.b"]));
}

Var classify_logits(const Binding& params, const Var& hash_features) {
  Var h = hash_features;
  if (params.contains("rec.w")) h = relu(add_bias(matmul(h, params["rec.w"]), params["rec.b"]));
  return add_bias(matmul(h, params["cls.w"]), params["cls.b"]);
}

ForwardPass forward(Graph& graph, const Binding& params, const ArchConfig& arch, Branches branches,
                    std::span<const StrokeSketch* const> sketches) {
  Var cnn, rnn;
  if (branches != Branches::Rnn) {
    std::vector<RasterSketch> rasters;
    rasters.reserve(sketches.size());
    for (const auto* s : sketches) rasters.push_back(rasterize(*s, arch.raster_side));
    cnn = cnn_forward(graph, params, arch, raster_batch(rasters));
  }
  if (branches != Branches::Cnn) rnn = rnn_forward(graph, params, arch, SequenceBatch::from(sketches));

  switch (branches) {
    case Branches::Cnn:
      return {cnn, add_bias(matmul(cnn, params["head.cnn.w"]), params["head.cnn.b"])};
    case Branches::Rnn:
      return {rnn, add_bias(matmul(rnn, params["head.rnn.w"]), params["head.rnn.b"])};
    case Branches::Recognition: {
      const Var fused = concat({cnn, rnn});
      const Var h = relu(add_bias(matmul(fused, params["head.rec.fc.w"]), params["head.rec.fc.b"]));
      return {fused, add_bias(matmul(h, params["head.rec.w"]), params["head.rec.b"])};
    }
    case Branches::Fused:
      break;
  }
  const Var f = fuse_and_hash(params, cnn, rnn);
  return {f, classify_logits(params, f)};
}

// ---------------------------------------------------------------------------
// Codes and inference

BinaryCode quantize(std::span<const double> features) {
  BinaryCode code;
  code.bits.reserve(features.size());
  for (double v : features) code.bits.push_back(v >= 0.5 ? 1 : 0);
  return code;
}

Encoder::Encoder(ArchConfig arch, Params params, Branches branches)
    : arch_(std::move(arch)), params_(std::move(params)), branches_(branches) {
  arch_.validate();
}

Encoder::Outputs Encoder::run(std::span<const StrokeSketch* const> sketches, std::size_t batch_size) const {
  Outputs out;
  const auto n = static_cast<Eigen::Index>(sketches.size());
  if (batch_size == 0) batch_size = 1;
  for (std::size_t start = 0; start < sketches.size(); start += batch_size) {
    const auto count = std::min(batch_size, sketches.size() - start);
    Graph graph;
    Binding bound(graph, params_, false);
    const auto pass = forward(graph, bound, arch_, branches_, sketches.subspan(start, count));
    const auto f = pass.features.value().matrix();
    const auto z = pass.logits.value().matrix();
    if (start == 0) {
      out.features.resize(n, f.cols());
      out.logits.resize(n, z.cols());
    }
    out.features.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = f;
    out.logits.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = z;
  }
  return out;
}

std::vector<BinaryCode> Encoder::encode(std::span<const StrokeSketch* const> sketches) const {
  if (branches_ != Branches::Fused) throw PreconditionError("binary codes need the fused encoder");
  const auto out = run(sketches);
  std::vector<BinaryCode> codes;
  codes.reserve(sketches.size());
  for (Eigen::Index i = 0; i < out.features.rows(); ++i) codes.push_back(quantize(out.features.row(i)));
  return codes;
}

Checkpoint Encoder::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.meta = arch_.descriptor();
  ckpt.meta["model.branches"] = to_string(branches_);
  ckpt.tensors = params_;
  return ckpt;
}

Encoder Encoder::from_checkpoint(const Checkpoint& ckpt) {
  const auto it = ckpt.meta.find("model.branches");
  const Branches b = it == ckpt.meta.end() ? Branches::Fused : branches_from_string(it->second);
  return Encoder(ArchConfig::from_descriptor(ckpt.meta), ckpt.tensors, b);
}

}  // namespace sketchhash
