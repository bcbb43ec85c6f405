#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "sketchhash/corpus.hpp"
#include "sketchhash/rng.hpp"
#include "sketchhash/synthetic.hpp"

using namespace sketchhash;

namespace {

RawSketch raw(std::vector<Polyline> strokes, std::string category = "cat") {
  RawSketch r;
  r.strokes = std::move(strokes);
  r.category = std::move(category);
  return r;
}

int ink(const RasterSketch& r) { return static_cast<int>(r.ink_pixels()); }

// Independent digital differential analyser: one pixel per step along the
// major axis, rounded on the minor axis.
std::set<std::pair<int, int>> dda(int x0, int y0, int x1, int y1) {
  std::set<std::pair<int, int>> px;
  const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  for (int i = 0; i <= steps; ++i) {
    const double t = steps == 0 ? 0.0 : static_cast<double>(i) / steps;
    px.emplace(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))));
  }
  return px;
}

}  // namespace

TEST_CASE("one record with a three-point stroke") {
  std::istringstream in(R"({"word":"cat","drawing":[[[0,3,3],[0,0,4]]]})");
  const auto parsed = parse_sketch_records(in);
  REQUIRE(parsed.sketches.size() == 1);
  CHECK(parsed.errors.empty());
  CHECK(parsed.sketches[0].category == "cat");
  REQUIRE(parsed.sketches[0].strokes.size() == 1);
  CHECK(parsed.sketches[0].strokes[0].size() == 3);
  CHECK(parsed.sketches[0].strokes[0][2].y == 4);
}

TEST_CASE("empty stream parses to nothing") {
  std::istringstream in("");
  const auto parsed = parse_sketch_records(in);
  CHECK(parsed.sketches.empty());
  CHECK(parsed.errors.empty());
}

TEST_CASE("a truncated coordinate list is reported at its line and parsing continues") {
  std::istringstream in(
      "{\"word\":\"a\",\"drawing\":[[[0,1],[0,1]]]}\n"
      "{\"word\":\"b\",\"drawing\":[[[0,1,2],[0,1]]]}\n"
      "\n"
      "{\"word\":\"c\",\"drawing\":[[[5],[6]]]}\n"
      "{\"word\":\"d\",\"drawing\":[[[0,1],[0,\n");
  const auto parsed = parse_sketch_records(in);
  REQUIRE(parsed.sketches.size() == 2);
  CHECK(parsed.lines == std::vector<std::size_t>{1, 4});
  REQUIRE(parsed.errors.size() == 2);
  CHECK(parsed.errors[0].line() == 2);
  CHECK(parsed.errors[1].line() == 5);
}

TEST_CASE("custom field names") {
  std::istringstream in(R"({"label":"x","strokes":[[[1,2],[3,4]]]})");
  RecordFormat format;
  format.category_field = "label";
  format.drawing_field = "strokes";
  const auto parsed = parse_sketch_records(in, format);
  REQUIRE(parsed.sketches.size() == 1);
  CHECK(parsed.sketches[0].category == "x");
}

TEST_CASE("offsets are differences of consecutive points") {
  const auto s = to_stroke_sequence(raw({{{0, 0}, {3, 0}, {3, 4}}}), 2);
  REQUIRE(s.steps.size() == 3);
  CHECK(s.label == 2);
  CHECK(s.steps[0].dx == 0.0);
  CHECK(s.steps[0].dy == 0.0);
  CHECK(s.steps[1].dx == 3.0);
  CHECK(s.steps[1].dy == 0.0);
  CHECK(s.steps[2].dx == 0.0);
  CHECK(s.steps[2].dy == 4.0);
  for (const auto& step : s.steps) {
    CHECK(step.pen_down == 1);
    CHECK(step.pen_up == 0);
  }
}

TEST_CASE("two strokes give exactly one pen-up step at the boundary") {
  const auto s = to_stroke_sequence(raw({{{0, 0}, {1, 1}}, {{5, 5}, {6, 5}}}), 0);
  REQUIRE(s.steps.size() == 4);
  int ups = 0;
  for (const auto& step : s.steps) ups += step.pen_up;
  CHECK(ups == 1);
  CHECK(s.steps[2].pen_up == 1);
  CHECK(s.steps[2].dx == 4.0);
}

TEST_CASE("offset scale divides every offset") {
  const auto s = to_stroke_sequence(raw({{{0, 0}, {4, 2}}}), 0, 2.0);
  CHECK(s.steps[1].dx == 2.0);
  CHECK(s.steps[1].dy == 1.0);
  CHECK_THROWS_AS(to_stroke_sequence(raw({{{0, 0}}}), 0, 0.0), PreconditionError);
}

TEST_CASE("invalid drawings are refused") {
  CHECK_THROWS_AS(raw({}).validate(), PreconditionError);
  CHECK_THROWS_AS(raw({{}}).validate(), PreconditionError);
  CHECK_THROWS_AS(raw({{{-1, 0}}}).validate(), PreconditionError);
}

TEST_CASE("within each stroke the offsets sum to last minus first point") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto sketches = synthesize_corpus(5, 2, seed);
    for (const auto& r : sketches) {
      const auto s = to_stroke_sequence(r, 0);
      std::size_t k = 0;
      for (const auto& stroke : r.strokes) {
        ++k;  // the first point of a stroke carries the jump from the previous stroke
        double sx = 0.0, sy = 0.0;
        for (std::size_t i = 1; i < stroke.size(); ++i, ++k) {
          sx += s.steps[k].dx;
          sy += s.steps[k].dy;
        }
        CHECK(std::abs(sx - (stroke.back().x - stroke.front().x)) < 1e-9);
        CHECK(std::abs(sy - (stroke.back().y - stroke.front().y)) < 1e-9);
      }
      CHECK(k == s.steps.size());
    }
  }
}

TEST_CASE("normalised offsets have unit standard deviation") {
  const auto sketches = synthesize_corpus(10, 10, 3);
  const Corpus corpus = build_corpus(sketches);
  double sum = 0.0, count = 0.0;
  for (const auto& s : corpus.sketches) {
    for (const auto& st : s.steps) {
      sum += st.dx + st.dy;
      count += 2;
    }
  }
  const double mean = sum / count;
  double ss = 0.0;
  for (const auto& s : corpus.sketches) {
    for (const auto& st : s.steps) ss += (st.dx - mean) * (st.dx - mean) + (st.dy - mean) * (st.dy - mean);
  }
  CHECK(std::abs(std::sqrt(ss / count) - 1.0) < 1e-6);
  CHECK(corpus.offset_scale > 1.0);
}

TEST_CASE("labels follow lexicographic category order") {
  std::vector<RawSketch> sketches{raw({{{0, 0}}}, "zebra"), raw({{{0, 0}, {1, 1}}}, "apple"),
                                  raw({{{2, 2}, {1, 1}}}, "mango")};
  const Corpus corpus = build_corpus(sketches);
  CHECK(corpus.categories == std::vector<std::string>{"apple", "mango", "zebra"});
  CHECK(corpus.sketches[0].label == 2);
  CHECK(corpus.sketches[1].label == 0);
  CHECK(corpus.sketches[2].label == 1);
}

TEST_CASE("horizontal stroke inks a single row") {
  const auto s = to_stroke_sequence(raw({{{10, 40}, {90, 40}}}), 0);
  const auto r = rasterize(s, 64);
  int rows = 0;
  for (int y = 0; y < 64; ++y) rows += (r.grid.row(y).array() >= 0.5f).any() ? 1 : 0;
  CHECK(rows == 1);
  CHECK(ink(r) == 60);  // margin 2 on each side of a 64 grid
}

TEST_CASE("a single step without offset inks one pixel") {
  StrokeSketch s;
  s.steps.push_back({});
  CHECK(ink(rasterize(s, 32)) == 1);
}

TEST_CASE("diagonal stroke matches an independent line oracle") {
  const auto s = to_stroke_sequence(raw({{{0, 0}, {100, 100}}}), 0);
  const auto r = rasterize(s, 224);
  const auto oracle = dda(2, 2, 221, 221);
  CHECK(ink(r) == static_cast<int>(oracle.size()));
  CHECK(ink(r) >= 219);
  CHECK(ink(r) <= 450);
  for (const auto& [x, y] : oracle) CHECK(r.grid(y, x) == 1.0f);
}

TEST_CASE("rasterisation is deterministic and bounded") {
  const Corpus corpus = build_corpus(synthesize_corpus(4, 3, 9));
  for (const auto& s : corpus.sketches) {
    const auto a = rasterize(s, 64);
    const auto b = rasterize(s, 64);
    CHECK(a.grid == b.grid);
    CHECK(a.grid.minCoeff() >= 0.0f);
    CHECK(a.grid.maxCoeff() <= 1.0f);
    CHECK(&a.channel(0) == &a.channel(2));
  }
}

TEST_CASE("corpus round trip through the binary format") {
  const Corpus corpus = build_corpus(synthesize_corpus(3, 4, 5));
  std::stringstream buf;
  write_corpus(buf, corpus);
  const Corpus back = read_corpus(buf);
  CHECK(back.categories == corpus.categories);
  REQUIRE(back.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back.sketches[i].label == corpus.sketches[i].label);
    REQUIRE(back.sketches[i].steps.size() == corpus.sketches[i].steps.size());
    for (std::size_t k = 0; k < corpus.sketches[i].steps.size(); ++k) {
      // steps are stored as f32
      CHECK(back.sketches[i].steps[k].dx == doctest::Approx(corpus.sketches[i].steps[k].dx).epsilon(1e-6));
      CHECK(back.sketches[i].steps[k].pen_up == corpus.sketches[i].steps[k].pen_up);
    }
  }
  std::stringstream bad("NOTACORPUS");
  CHECK_THROWS_AS(read_corpus(bad), FormatError);
}

namespace {

std::vector<std::uint16_t> balanced_labels(std::size_t categories, std::size_t per) {
  std::vector<std::uint16_t> labels;
  for (std::size_t i = 0; i < per; ++i) {
    for (std::size_t c = 0; c < categories; ++c) labels.push_back(static_cast<std::uint16_t>(c));
  }
  return labels;
}

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("toy quotas give exact totals") {
  const auto labels = balanced_labels(10, 40);
  const auto split = make_splits(labels, names(10), {20, 5, 5, 2}, 1);
  CHECK(split.train.size() == 200);
  CHECK(split.validation.size() == 50);
  CHECK(split.retrieval.size() == 50);
  CHECK(split.query.size() == 20);
}

TEST_CASE("reference quotas over 345 categories") {
  const auto labels = balanced_labels(345, 11100);
  const auto split = make_splits(labels, names(345), {9000, 1000, 1000, 100}, 2);
  CHECK(split.train.size() == 3105000);
  CHECK(split.validation.size() == 345000);
  CHECK(split.retrieval.size() == 345000);
  CHECK(split.query.size() == 34500);
}

TEST_CASE("splits are reproducible and seed dependent") {
  const auto labels = balanced_labels(5, 30);
  const auto a = make_splits(labels, names(5), {10, 5, 5, 2}, 11);
  const auto b = make_splits(labels, names(5), {10, 5, 5, 2}, 11);
  const auto c = make_splits(labels, names(5), {10, 5, 5, 2}, 12);
  CHECK(a.train == b.train);
  CHECK(a.query == b.query);
  CHECK(a.train != c.train);
}

TEST_CASE("splits are disjoint with exact per-category quotas for any seed") {
  Rng rng(77);
  const auto labels = balanced_labels(6, 25);
  const SplitQuotas q{8, 4, 6, 3};
  for (int trial = 0; trial < 50; ++trial) {
    const auto split = make_splits(labels, names(6), q, rng.next());
    std::set<std::uint32_t> seen;
    std::map<std::string, std::vector<int>> per;
    for (const char* part : {"train", "validation", "retrieval", "query"}) {
      std::vector<int> counts(6, 0);
      for (auto id : split.by_name(part)) {
        CHECK(seen.insert(id).second);
        ++counts[labels[id]];
      }
      per[part] = counts;
    }
    for (int c = 0; c < 6; ++c) {
      CHECK(per["train"][c] == 8);
      CHECK(per["validation"][c] == 4);
      CHECK(per["retrieval"][c] == 6);
      CHECK(per["query"][c] == 3);
    }
  }
}

TEST_CASE("a category short of its quota is refused") {
  const auto labels = balanced_labels(3, 5);
  CHECK_THROWS_AS(make_splits(labels, names(3), {4, 1, 1, 1}, 1), PreconditionError);
}

TEST_CASE("split manifest round trip") {
  const auto labels = balanced_labels(4, 12);
  const auto split = make_splits(labels, names(4), {5, 2, 2, 1}, 3);
  std::stringstream buf;
  write_split_manifest(buf, split);
  const auto back = read_split_manifest(buf);
  CHECK(back.seed == 3);
  CHECK(back.train == split.train);
  CHECK(back.validation == split.validation);
  CHECK(back.retrieval == split.retrieval);
  CHECK(back.query == split.query);
}
