#include <doctest.h>

#include <cmath>
#include <sstream>

#include "sketchhash/encoder.hpp"
#include "sketchhash/rng.hpp"
#include "sketchhash/synthetic.hpp"

using namespace sketchhash;

namespace {

StrokeSketch random_sketch(std::size_t length, Rng& rng, std::uint16_t label = 0) {
  StrokeSketch s;
  s.label = label;
  for (std::size_t t = 0; t < length; ++t) {
    StrokeStep step;
    step.dx = rng.normal();
    step.dy = rng.normal();
    const bool up = t > 0 && rng.uniform() < 0.2;
    step.pen_down = up ? 0 : 1;
    step.pen_up = up ? 1 : 0;
    s.steps.push_back(step);
  }
  return s;
}

ArchConfig small_rnn(int layers) {
  ArchConfig a = ArchConfig::toy(16, 4);
  a.gru_hidden = 5;
  a.gru_layers = layers;
  return a;
}

Eigen::MatrixXd rnn_rows(const ArchConfig& arch, const Params& p, const SketchRefs& refs) {
  Graph g;
  Binding b(g, p, false);
  return rnn_forward(g, b, arch, SequenceBatch::from(refs)).value().matrix();
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.flat()[i] = rng.normal(0.0, scale);
  return t;
}

double sigmoid_d(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST_CASE("toy profile shapes") {
  const ArchConfig a = ArchConfig::toy(16, 10);
  CHECK(a.raster_side == 64);
  CHECK(a.conv.size() == 3);
  CHECK(a.flattened_width() == 64 * 8 * 8);
  CHECK(a.cnn_width() == 128);
  CHECK(a.rnn_width() == 128);
  CHECK(a.fusion_width() == 256);
  CHECK(a.standard_code_length());
  CHECK_FALSE(ArchConfig::toy(20, 10).standard_code_length());

  const ArchConfig f = ArchConfig::full(64, 345);
  CHECK(f.raster_side == 224);
  CHECK(f.gru_hidden == 512);
  CHECK_NOTHROW(f.validate());
}

TEST_CASE("cnn branch yields the configured width for one image") {
  const ArchConfig a = ArchConfig::toy(16, 10);
  const Params p = init_params(a, Part::Cnn, 3);
  Rng rng(1);
  const StrokeSketch s = random_sketch(12, rng);
  const std::vector<RasterSketch> r{rasterize(s, a.raster_side)};
  Graph g;
  Binding b(g, p, false);
  const Var y = cnn_forward(g, b, a, raster_batch(r));
  CHECK(y.shape() == Shape{1, 128});
}

TEST_CASE("zero image with zero biases gives a zero feature") {
  const ArchConfig a = ArchConfig::toy(16, 10);
  const Params p = init_params(a, Part::Cnn, 3);
  for (const auto& [name, t] : p) {
    if (name.ends_with(".b")) CHECK(t.flat().isZero(0.0));
  }
  Graph g;
  Binding b(g, p, false);
  const Var y = cnn_forward(g, b, a, Tensor(Shape{1, 1, 64, 64}));
  CHECK(y.value().flat().isZero(0.0));
}

TEST_CASE("identical images give identical feature rows") {
  const ArchConfig a = ArchConfig::toy(16, 10);
  const Params p = init_params(a, Part::Cnn, 4);
  Rng rng(2);
  const RasterSketch r = rasterize(random_sketch(20, rng), 64);
  const std::vector<RasterSketch> two{r, r};
  Graph g;
  Binding b(g, p, false);
  const auto y = cnn_forward(g, b, a, raster_batch(two)).value().matrix();
  CHECK(y.row(0) == y.row(1));
}

TEST_CASE("mixed raster sides are rejected") {
  Rng rng(3);
  const StrokeSketch s = random_sketch(5, rng);
  const std::vector<RasterSketch> mixed{rasterize(s, 64), rasterize(s, 32)};
  CHECK_THROWS_AS(raster_batch(mixed), ShapeError);
  const ArchConfig a = ArchConfig::toy(16, 10);
  const Params p = init_params(a, Part::Cnn, 4);
  Graph g;
  Binding b(g, p, false);
  CHECK_THROWS_AS(cnn_forward(g, b, a, Tensor(Shape{1, 1, 32, 32})), ShapeError);
}

TEST_CASE("a length-one sequence is one step in each direction") {
  const ArchConfig a = small_rnn(1);
  const Params p = init_params(a, Part::Rnn, 5);
  Rng rng(4);
  const StrokeSketch s = random_sketch(1, rng);
  const SketchRefs refs{&s};
  const auto y = rnn_rows(a, p, refs);
  REQUIRE(y.cols() == 10);

  Graph g;
  Binding b(g, p, false);
  Tensor x(Shape{1, 4});
  x.flat() << s.steps[0].dx, s.steps[0].dy, s.steps[0].pen_down, s.steps[0].pen_up;
  const Var xv = g.constant(x), h0 = g.constant(Tensor(Shape{1, 5}));
  const auto fwd = gru_cell(xv, h0, gru_weights(b, 0, false)).value().matrix();
  const auto bwd = gru_cell(xv, h0, gru_weights(b, 0, true)).value().matrix();
  CHECK((y.leftCols(5) - fwd).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((y.rightCols(5) - bwd).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("backward direction reads the sequence reversed") {
  const ArchConfig a = small_rnn(1);
  const Params p = init_params(a, Part::Rnn, 6);
  Rng rng(5);
  const StrokeSketch s = random_sketch(4, rng);
  const auto y = rnn_rows(a, p, SketchRefs{&s});

  Graph g;
  Binding b(g, p, false);
  auto run = [&](bool reversed, bool bwd_weights) {
    Var h = g.constant(Tensor(Shape{1, 5}));
    for (std::size_t i = 0; i < s.steps.size(); ++i) {
      const auto& st = s.steps[reversed ? s.steps.size() - 1 - i : i];
      Tensor x(Shape{1, 4});
      x.flat() << st.dx, st.dy, st.pen_down, st.pen_up;
      h = gru_cell(g.constant(x), h, gru_weights(b, 0, bwd_weights));
    }
    return Eigen::MatrixXd(h.value().matrix());
  };
  CHECK((y.leftCols(5) - run(false, false)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((y.rightCols(5) - run(true, true)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("ragged batch equals single-sketch runs") {
  const ArchConfig a = small_rnn(2);
  const Params p = init_params(a, Part::Rnn, 7);
  Rng rng(6);
  const StrokeSketch s3 = random_sketch(3, rng), s7 = random_sketch(7, rng);
  const auto both = rnn_rows(a, p, SketchRefs{&s3, &s7});
  const auto one = rnn_rows(a, p, SketchRefs{&s3});
  const auto two = rnn_rows(a, p, SketchRefs{&s7});
  CHECK((both.row(0) - one.row(0)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((both.row(1) - two.row(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("permuting the batch permutes the outputs") {
  const ArchConfig a = small_rnn(2);
  const Params p = init_params(a, Part::Rnn, 8);
  Rng rng(7);
  std::vector<StrokeSketch> s;
  for (std::size_t len : {4u, 9u, 1u, 6u, 6u}) s.push_back(random_sketch(len, rng));
  SketchRefs forward_order, shuffled;
  for (const auto& x : s) forward_order.push_back(&x);
  const std::vector<int> perm{3, 0, 4, 2, 1};
  for (int i : perm) shuffled.push_back(&s[static_cast<std::size_t>(i)]);
  const auto y = rnn_rows(a, p, forward_order);
  const auto z = rnn_rows(a, p, shuffled);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    CHECK((z.row(static_cast<Eigen::Index>(i)) - y.row(perm[i])).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("empty sequences are rejected") {
  const ArchConfig a = small_rnn(1);
  StrokeSketch empty;
  CHECK_THROWS_AS(SequenceBatch::from(SketchRefs{&empty}), PreconditionError);
  CHECK_THROWS_AS(SequenceBatch::from(SketchRefs{}), PreconditionError);
}

TEST_CASE("fusion with zero weights sits at one half, a large bias saturates") {
  Graph g;
  Params p{{"hash.w", Tensor(Shape{5, 3})}, {"hash.b", Tensor(Shape{3})}};
  Rng rng(8);
  const Var c = g.constant(random_tensor({2, 2}, rng)), r = g.constant(random_tensor({2, 3}, rng));
  {
    Binding b(g, p, false);
    CHECK((fuse_and_hash(b, c, r).value().flat().array() == 0.5).all());
  }
  p["hash.b"] = Tensor::filled({3}, 20.0);
  Binding b(g, p, false);
  const auto f = fuse_and_hash(b, c, r).value().flat();
  CHECK((f.array() > 0.999999).all());
  CHECK((f.array() < 1.0).all());
}

TEST_CASE("fusion matches dense arithmetic") {
  Rng rng(9);
  const Tensor c = random_tensor({3, 4}, rng), r = random_tensor({3, 2}, rng);
  const Tensor w = random_tensor({6, 5}, rng), bias = random_tensor({5}, rng);
  Graph g;
  Binding b(g, {{"hash.w", w}, {"hash.b", bias}}, false);
  const auto f = fuse_and_hash(b, g.constant(c), g.constant(r)).value().matrix();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 5; ++j) {
      double z = bias.flat()[j];
      for (int k = 0; k < 4; ++k) z += c.matrix()(i, k) * w.matrix()(k, j);
      for (int k = 0; k < 2; ++k) z += r.matrix()(i, k) * w.matrix()(4 + k, j);
      CHECK(std::abs(f(i, j) - sigmoid_d(z)) < 1e-14);
    }
  }
  CHECK_THROWS_AS(fuse_and_hash(b, g.constant(c), g.constant(Tensor(Shape{2, 2}))), ShapeError);
}

TEST_CASE("hash features stay strictly inside the unit interval") {
  Rng rng(10);
  for (double scale : {1.0, 10.0, 1e3, 1e6}) {
    const Tensor c = random_tensor({8, 4}, rng, scale), r = random_tensor({8, 2}, rng, scale);
    Graph g;
    Binding b(g, {{"hash.w", random_tensor({6, 16}, rng, scale)}, {"hash.b", random_tensor({16}, rng, scale)}}, false);
    const auto f = fuse_and_hash(b, g.constant(c), g.constant(r)).value().flat();
    CHECK((f.array() > 0.0).all());
    CHECK((f.array() < 1.0).all());
  }
}

TEST_CASE("classifier logits") {
  Graph g;
  const Var f = g.constant(Tensor::filled({1, 4}, 0.3));
  {
    Binding b(g, {{"cls.w", Tensor(Shape{4, 3})}, {"cls.b", Tensor(Shape{3})}}, false);
    CHECK(classify_logits(b, f).value().flat().isZero(0.0));
  }
  {
    Tensor w(Shape{4, 3});
    w.matrix()(2, 1) = 1.0;
    Tensor indicator(Shape{1, 4});
    indicator.flat()[2] = 1.0;
    Binding b(g, {{"cls.w", w}, {"cls.b", Tensor(Shape{3})}}, false);
    const auto z = classify_logits(b, g.constant(indicator)).value().flat();
    CHECK(z[1] == 1.0);
    CHECK(z[0] == 0.0);
    CHECK(z[2] == 0.0);
  }
  Rng rng(11);
  const Tensor w = random_tensor({8, 3}, rng), bias = random_tensor({3}, rng), x = random_tensor({2, 8}, rng);
  Binding b(g, {{"cls.w", w}, {"cls.b", bias}}, false);
  const auto z = classify_logits(b, g.constant(x)).value().matrix();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 3; ++j) {
      double expect = bias.flat()[j];
      for (int k = 0; k < 8; ++k) expect += x.matrix()(i, k) * w.matrix()(k, j);
      CHECK(std::abs(z(i, j) - expect) < 1e-13);
    }
  }
  CHECK_THROWS_AS(classify_logits(b, g.constant(Tensor(Shape{2, 7}))), ShapeError);
}

TEST_CASE("optional recognition layer sits between the code and the classifier") {
  ArchConfig a = ArchConfig::toy(16, 10);
  a.recognition_width = 32;
  const Params p = init_params(a, Part::Hash | Part::Classifier, 12);
  CHECK(p.at("rec.w").shape() == Shape{16, 32});
  CHECK(p.at("cls.w").shape() == Shape{32, 10});
  Rng rng(12);
  const Tensor f = random_tensor({3, 16}, rng);
  Graph g;
  Binding b(g, p, false);
  const auto z = classify_logits(b, g.constant(f)).value().matrix();
  const Eigen::MatrixXd hidden =
      ((f.matrix() * p.at("rec.w").matrix()).rowwise() + p.at("rec.b").flat().transpose()).cwiseMax(0.0);
  const Eigen::MatrixXd expect = (hidden * p.at("cls.w").matrix()).rowwise() + p.at("cls.b").flat().transpose();
  CHECK((z - expect).cwiseAbs().maxCoeff() < 1e-13);

  a.recognition_width = -1;
  CHECK_THROWS_AS(a.validate(), PreconditionError);
}

TEST_CASE("quantize thresholds at one half") {
  const std::vector<double> f{0.9, 0.1, 0.5};
  CHECK(quantize(f).bits == std::vector<std::uint8_t>{1, 0, 1});
  const std::vector<double> low(16, 0.4999);
  CHECK(quantize(low).bits == std::vector<std::uint8_t>(16, 0));

  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(24);
    for (auto& x : v) x = rng.uniform();
    const auto code = quantize(v);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(code.bits[i] == (v[i] >= 0.5 ? 1 : 0));
    const Eigen::Map<const Eigen::RowVectorXd> row(v.data(), 24);
    CHECK(quantize(row) == code);
  }
}

TEST_CASE("quantize is the nearest binary code") {
  Rng rng(14);
  for (int d = 1; d <= 8; ++d) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> f(static_cast<std::size_t>(d));
      for (auto& x : f) {
        do x = rng.uniform(); while (x == 0.5);
      }
      const auto code = quantize(f);
      auto distance = [&](unsigned mask) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
          const double b = (mask >> i) & 1u;
          s += (b - f[static_cast<std::size_t>(i)]) * (b - f[static_cast<std::size_t>(i)]);
        }
        return s;
      };
      unsigned best = 0;
      for (unsigned m = 1; m < (1u << d); ++m) {
        if (distance(m) < distance(best)) best = m;
      }
      unsigned mine = 0;
      for (int i = 0; i < d; ++i) mine |= static_cast<unsigned>(code.bits[static_cast<std::size_t>(i)]) << i;
      CHECK(mine == best);
    }
  }
}

TEST_CASE("initialisation is deterministic and independent per tensor") {
  const ArchConfig a = ArchConfig::toy(16, 10);
  const Params cnn = init_params(a, Part::Cnn, 21);
  const Params all = init_params(a, Part::Cnn | Part::Rnn | Part::Hash | Part::Classifier, 21);
  CHECK(cnn == init_params(a, Part::Cnn, 21));
  for (const auto& [name, t] : cnn) CHECK(all.at(name) == t);
  CHECK_FALSE(cnn.at("cnn.conv0.w") == init_params(a, Part::Cnn, 22).at("cnn.conv0.w"));
}

TEST_CASE("encoder round-trips through a checkpoint with its descriptor") {
  ArchConfig a = ArchConfig::toy(24, 5);
  a.gru_hidden = 8;
  a.gru_layers = 1;
  const Params p = init_params(a, Part::Cnn | Part::Rnn | Part::Hash | Part::Classifier, 31);
  const Encoder enc(a, p);
  std::stringstream buf;
  write_checkpoint(buf, enc.to_checkpoint());
  const Encoder back = Encoder::from_checkpoint(read_checkpoint(buf));
  CHECK(back.arch().descriptor() == a.descriptor());
  CHECK(back.params() == p);

  const auto raw = synthesize_corpus(5, 2, 3);
  const Corpus corpus = build_corpus(raw);
  SketchRefs refs;
  for (const auto& s : corpus.sketches) refs.push_back(&s);
  const auto codes = enc.encode(refs);
  CHECK(codes == back.encode(refs));
  CHECK(codes.size() == refs.size());
  CHECK(codes[0].size() == 24);

  const auto out = enc.run(refs, 3);
  const auto whole = enc.run(refs, 100);
  CHECK((out.features - whole.features).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(((out.features.array() > 0.0) && (out.features.array() < 1.0)).all());
}

TEST_CASE("branch names round-trip") {
  for (auto b : {Branches::Cnn, Branches::Rnn, Branches::Fused, Branches::Recognition}) {
    CHECK(branches_from_string(to_string(b)) == b);
  }
  CHECK_THROWS(branches_from_string("both"));
}

TEST_CASE("recognition model classifies the fusion vector through one ReLU layer") {
  ArchConfig a = ArchConfig::toy(16, 4);
  a.gru_hidden = 8;
  a.gru_layers = 1;
  a.recognition_head_width = 6;
  CHECK(ArchConfig::full(16, 4).recognition_head() == 2048);
  CHECK(ArchConfig::toy(16, 4).recognition_head() == ArchConfig::toy(16, 4).fusion_width());
  CHECK(ArchConfig::from_descriptor(a.descriptor()).recognition_head_width == 6);

  Params p = init_params(a, Part::Cnn | Part::Rnn | Part::CnnHead | Part::RnnHead | Part::RecognitionHead, 41);
  CHECK(p.at("head.rec.fc.w").shape() == Shape{a.fusion_width(), 6});
  CHECK(p.at("head.rec.w").shape() == Shape{6, 4});
  CHECK(p.count("hash.w") == 0);
  Rng rng(42);
  for (const char* name : {"head.rec.fc.b", "head.rec.b"}) {
    for (Eigen::Index i = 0; i < p.at(name).size(); ++i) p.at(name).flat()[i] = rng.normal(0.0, 0.3);
  }

  const Corpus corpus = build_corpus(synthesize_corpus(4, 2, 43));
  SketchRefs refs;
  for (const auto& s : corpus.sketches) refs.push_back(&s);
  const auto rec = Encoder(a, p, Branches::Recognition).run(refs);
  const auto cnn = Encoder(a, p, Branches::Cnn).run(refs).features;
  const auto rnn = Encoder(a, p, Branches::Rnn).run(refs).features;
  REQUIRE(rec.features.cols() == a.fusion_width());
  CHECK((rec.features.leftCols(a.cnn_width()) - cnn).cwiseAbs().maxCoeff() == 0.0);
  CHECK((rec.features.rightCols(a.rnn_width()) - rnn).cwiseAbs().maxCoeff() == 0.0);

  const Eigen::MatrixXd w1 = p.at("head.rec.fc.w").matrix(), w2 = p.at("head.rec.w").matrix();
  const Eigen::RowVectorXd b1 = p.at("head.rec.fc.b").matrix().reshaped().transpose();
  const Eigen::RowVectorXd b2 = p.at("head.rec.b").matrix().reshaped().transpose();
  const Eigen::MatrixXd hidden = ((rec.features * w1).rowwise() + b1).cwiseMax(0.0);
  const Eigen::MatrixXd logits = (hidden * w2).rowwise() + b2;
  CHECK((logits - rec.logits).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(Encoder(a, p, Branches::Recognition).encode(refs), PreconditionError);
}
