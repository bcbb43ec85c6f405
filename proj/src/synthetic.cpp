#include "sketchhash/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

namespace sketchhash {

namespace {

struct Vec2 {
  double x;
  double y;
};
using Stroke = std::vector<Vec2>;
using Template = std::vector<Stroke>;

constexpr double kPi = std::numbers::pi;

Stroke arc(double cx, double cy, double rx, double ry, double a0, double a1, int n) {
  Stroke s;
  for (int i = 0; i <= n; ++i) {
    const double a = a0 + (a1 - a0) * i / n;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

Stroke poly(std::initializer_list<Vec2> pts, bool closed = false) {
  Stroke s(pts);
  if (closed) s.push_back(s.front());
  return s;
}

Stroke regular(double cx, double cy, double r, int sides, double phase) {
  Stroke s;
  for (int i = 0; i <= sides; ++i) {
    const double a = phase + 2 * kPi * i / sides;
    s.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return s;
}

Template make_template(std::size_t category) {
  switch (category) {
    case 0:  // circle
      return {arc(0.5, 0.5, 0.45, 0.45, -kPi / 2, 1.5 * kPi, 20)};
    case 1:  // square
      return {poly({{0.1, 0.1}, {0.9, 0.1}, {0.9, 0.9}, {0.1, 0.9}}, true)};
    case 2:  // triangle
      return {poly({{0.5, 0.08}, {0.92, 0.88}, {0.08, 0.88}}, true)};
    case 3: {  // star
      Stroke s;
      for (int i = 0; i <= 5; ++i) {
        const double a = -kPi / 2 + i * 4 * kPi / 5;
        s.push_back({0.5 + 0.45 * std::cos(a), 0.52 + 0.45 * std::sin(a)});
      }
      return {s};
    }
    case 4:  // zigzag
      return {poly({{0.05, 0.3}, {0.23, 0.7}, {0.41, 0.3}, {0.59, 0.7}, {0.77, 0.3}, {0.95, 0.7}})};
    case 5: {  // spiral
      Stroke s;
      for (int i = 0; i <= 36; ++i) {
        const double t = i / 36.0;
        const double a = t * 4.5 * kPi;
        s.push_back({0.5 + 0.45 * t * std::cos(a), 0.5 + 0.45 * t * std::sin(a)});
      }
      return {s};
    }
    case 6:  // plus
      return {poly({{0.5, 0.08}, {0.5, 0.92}}), poly({{0.08, 0.5}, {0.92, 0.5}})};
    case 7:  // house
      return {poly({{0.15, 0.45}, {0.15, 0.92}, {0.85, 0.92}, {0.85, 0.45}}),
              poly({{0.08, 0.5}, {0.5, 0.08}, {0.92, 0.5}})};
    case 8:  // arrow
      return {poly({{0.08, 0.5}, {0.92, 0.5}}), poly({{0.65, 0.25}, {0.92, 0.5}, {0.65, 0.75}})};
    case 9: {  // heart
      Stroke s;
      for (int i = 0; i <= 28; ++i) {
        const double t = 2 * kPi * i / 28;
        const double x = 16 * std::pow(std::sin(t), 3);
        const double y = 13 * std::cos(t) - 5 * std::cos(2 * t) - 2 * std::cos(3 * t) - std::cos(4 * t);
        s.push_back({0.5 + x / 36.0, 0.45 - y / 36.0});
      }
      return {s};
    }
    case 10: {  // wave
      Stroke s;
      for (int i = 0; i <= 24; ++i) {
        const double t = i / 24.0;
        s.push_back({0.05 + 0.9 * t, 0.5 + 0.25 * std::sin(t * 4 * kPi)});
      }
      return {s};
    }
    case 11:  // diamond
      return {poly({{0.5, 0.05}, {0.9, 0.5}, {0.5, 0.95}, {0.1, 0.5}}, true)};
    case 12:  // hexagon
      return {regular(0.5, 0.5, 0.45, 6, 0.0)};
    case 13:  // smiley
      return {arc(0.5, 0.5, 0.45, 0.45, -kPi / 2, 1.5 * kPi, 20), poly({{0.35, 0.35}, {0.36, 0.4}}),
              poly({{0.65, 0.35}, {0.64, 0.4}}), arc(0.5, 0.55, 0.22, 0.18, 0.15 * kPi, 0.85 * kPi, 8)};
    case 14:  // envelope
      return {poly({{0.08, 0.2}, {0.92, 0.2}, {0.92, 0.8}, {0.08, 0.8}}, true),
              poly({{0.08, 0.2}, {0.5, 0.55}, {0.92, 0.2}})};
    case 15:  // lightning
      return {poly({{0.6, 0.03}, {0.3, 0.5}, {0.6, 0.5}, {0.35, 0.97}})};
    case 16:  // ladder
      return {poly({{0.3, 0.05}, {0.3, 0.95}}), poly({{0.7, 0.05}, {0.7, 0.95}}),
              poly({{0.3, 0.25}, {0.7, 0.25}}), poly({{0.3, 0.5}, {0.7, 0.5}}),
              poly({{0.3, 0.75}, {0.7, 0.75}})};
    case 17:  // umbrella
      return {arc(0.5, 0.45, 0.45, 0.35, kPi, 2 * kPi, 14), poly({{0.05, 0.45}, {0.95, 0.45}}),
              poly({{0.5, 0.45}, {0.5, 0.88}, {0.42, 0.95}, {0.36, 0.88}})};
    case 18: {  // flower
      Template t{arc(0.5, 0.5, 0.1, 0.1, 0, 2 * kPi, 10)};
      for (int p = 0; p < 5; ++p) {
        const double a = 2 * kPi * p / 5;
        t.push_back(arc(0.5 + 0.28 * std::cos(a), 0.5 + 0.28 * std::sin(a), 0.17, 0.17, a + kPi,
                        a + 3 * kPi, 10));
      }
      return t;
    }
    case 19:  // tree
      return {poly({{0.5, 0.05}, {0.85, 0.65}, {0.15, 0.65}}, true),
              poly({{0.42, 0.65}, {0.42, 0.95}, {0.58, 0.95}, {0.58, 0.65}})};
    case 20:  // fish
      return {arc(0.42, 0.5, 0.32, 0.2, 0, 2 * kPi, 18),
              poly({{0.74, 0.5}, {0.95, 0.3}, {0.95, 0.7}}, true)};
    case 21: {  // moon
      Stroke s = arc(0.5, 0.5, 0.45, 0.45, 0.5 * kPi, 1.5 * kPi, 14);
      Stroke inner = arc(0.62, 0.5, 0.3, 0.42, 1.5 * kPi, 0.5 * kPi, 10);
      s.insert(s.end(), inner.begin(), inner.end());
      return {s};
    }
    case 22:  // x mark
      return {poly({{0.1, 0.1}, {0.9, 0.9}}), poly({{0.9, 0.1}, {0.1, 0.9}})};
    case 23: {  // cloud
      Stroke s;
      for (int i = 0; i <= 40; ++i) {
        const double a = 2 * kPi * i / 40;
        const double r = 0.33 + 0.07 * std::abs(std::sin(3 * a));
        s.push_back({0.5 + 1.3 * r * std::cos(a), 0.5 + 0.8 * r * std::sin(a)});
      }
      return {s};
    }
    case 24: {  // sun
      Template t{arc(0.5, 0.5, 0.22, 0.22, 0, 2 * kPi, 14)};
      for (int p = 0; p < 8; ++p) {
        const double a = 2 * kPi * p / 8;
        t.push_back(poly({{0.5 + 0.3 * std::cos(a), 0.5 + 0.3 * std::sin(a)},
                          {0.5 + 0.47 * std::cos(a), 0.5 + 0.47 * std::sin(a)}}));
      }
      return t;
    }
    default:
      throw PreconditionError("no synthetic template for category " + std::to_string(category));
  }
}

// Resamples a polyline at roughly uniform arc length with a random pen speed.
Stroke resample(const Stroke& s, double spacing) {
  if (s.size() < 2) return s;
  Stroke out{s.front()};
  double carry = 0.0;
  for (std::size_t i = 1; i < s.size(); ++i) {
    const double dx = s[i].x - s[i - 1].x;
    const double dy = s[i].y - s[i - 1].y;
    const double len = std::hypot(dx, dy);
    double pos = spacing - carry;
    while (pos < len) {
      out.push_back({s[i - 1].x + dx * pos / len, s[i - 1].y + dy * pos / len});
      pos += spacing;
    }
    carry = len - (pos - spacing);
  }
  out.push_back(s.back());
  return out;
}

Template outlier(Rng& rng) {
  if (rng.uniform() < 0.5) {
    // scribble: a dense random walk
    Stroke s{{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7)}};
    const auto steps = 40 + rng.below(40);
    for (std::size_t i = 0; i < steps; ++i) {
      const auto& p = s.back();
      s.push_back({std::clamp(p.x + rng.normal(0, 0.12), 0.0, 1.0),
                   std::clamp(p.y + rng.normal(0, 0.12), 0.0, 1.0)});
    }
    return {s};
  }
  // over-abstract: a short fragment
  const Vec2 a{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
  return {{a, {a.x + rng.normal(0, 0.2), a.y + rng.normal(0, 0.2)}}};
}

}  // namespace

const std::vector<std::string>& synthetic_category_names() {
  static const std::vector<std::string> names = {
      "circle",  "square", "triangle", "star",  "zigzag",    "spiral", "plus",
      "house",   "arrow",  "heart",    "wave",  "diamond",   "hexagon", "smiley",
      "envelope", "lightning", "ladder", "umbrella", "flower", "tree", "fish",
      "moon",    "x_mark", "cloud",    "sun"};
  return names;
}

RawSketch synthesize_sketch(std::size_t category, Rng& rng, const SynthOptions& opts) {
  const auto& names = synthetic_category_names();
  if (category >= names.size()) {
    throw PreconditionError("no synthetic template for category " + std::to_string(category));
  }
  Template t = rng.uniform() < opts.outlier_rate ? outlier(rng) : make_template(category);

  if (t.size() > 1 && rng.uniform() < opts.stroke_shuffle) rng.shuffle(t);
  for (auto& s : t) {
    if (rng.uniform() < opts.stroke_reverse) std::reverse(s.begin(), s.end());
  }

  // Random pose around the unit-square centre.
  const double pj = opts.pose_jitter;
  const double angle = rng.uniform(-0.3, 0.3) * pj;
  const double shear = rng.uniform(-0.15, 0.15) * pj;
  const double aspect = std::exp(rng.uniform(-0.2, 0.2) * pj);
  const double scale = rng.uniform(0.55, 1.0);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double tx = rng.uniform(-0.5, 0.5) * (1.0 - scale);
  const double ty = rng.uniform(-0.5, 0.5) * (1.0 - scale);
  const double spacing = rng.uniform(0.06, 0.14);

  RawSketch raw;
  raw.category = names[category];
  for (const auto& stroke : t) {
    Stroke s = resample(stroke, spacing);
    const Vec2 wobble{rng.normal(0, opts.jitter), rng.normal(0, opts.jitter)};
    Polyline line;
    for (const auto& p : s) {
      double x = (p.x - 0.5 + wobble.x + rng.normal(0, opts.jitter)) * aspect;
      double y = (p.y - 0.5 + wobble.y + rng.normal(0, opts.jitter)) / aspect;
      x += shear * y;
      const double rx = ca * x - sa * y;
      const double ry = sa * x + ca * y;
      const double u = std::clamp(0.5 + tx + scale * rx, 0.0, 1.0);
      const double v = std::clamp(0.5 + ty + scale * ry, 0.0, 1.0);
      const Point q{static_cast<int>(std::lround(u * opts.canvas)),
                    static_cast<int>(std::lround(v * opts.canvas))};
      if (line.empty() || line.back().x != q.x || line.back().y != q.y) line.push_back(q);
    }
    raw.strokes.push_back(std::move(line));
  }
  return raw;
}

std::vector<RawSketch> synthesize_corpus(std::size_t categories, std::size_t per_category,
                                         std::uint64_t seed, const SynthOptions& opts) {
  Rng rng(seed);
  std::vector<RawSketch> out;
  out.reserve(categories * per_category);
  for (std::size_t i = 0; i < per_category; ++i) {
    for (std::size_t c = 0; c < categories; ++c) out.push_back(synthesize_sketch(c, rng, opts));
  }
  return out;
}

void write_sketch_records(std::ostream& out, const std::vector<RawSketch>& sketches) {
  for (const auto& s : sketches) {
    nlohmann::json drawing = nlohmann::json::array();
    for (const auto& stroke : s.strokes) {
      nlohmann::json xs = nlohmann::json::array(), ys = nlohmann::json::array();
      for (const auto& p : stroke) {
        xs.push_back(p.x);
        ys.push_back(p.y);
      }
      drawing.push_back({xs, ys});
    }
    nlohmann::json record = {{"word", s.category}, {"drawing", drawing}};
    out << record.dump() << "\n";
  }
}

}  // namespace sketchhash
