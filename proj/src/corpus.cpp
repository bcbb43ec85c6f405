#include "sketchhash/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sketchhash/binary_io.hpp"
#include "sketchhash/rng.hpp"

namespace sketchhash {

namespace {

constexpr char kCorpusMagic[] = "SKHCORP1";
constexpr std::uint32_t kCorpusVersion = 1;
constexpr int kRasterMargin = 2;

RawSketch parse_record(const nlohmann::json& record, const RecordFormat& format) {
  if (!record.is_object()) throw Error("record is not a JSON object");
  const auto category = record.find(format.category_field);
  if (category == record.end() || !category->is_string()) {
    throw Error("missing string field '" + format.category_field + "'");
  }
  const auto drawing = record.find(format.drawing_field);
  if (drawing == record.end() || !drawing->is_array()) {
    throw Error("missing array field '" + format.drawing_field + "'");
  }

  RawSketch raw;
  raw.category = category->get<std::string>();
  for (const auto& stroke : *drawing) {
    if (!stroke.is_array() || stroke.size() < 2 || !stroke[0].is_array() || !stroke[1].is_array()) {
      throw Error("stroke is not an [x-list, y-list] pair");
    }
    const auto& xs = stroke[0];
    const auto& ys = stroke[1];
    if (xs.size() != ys.size()) {
      throw Error("stroke coordinate lists differ in length (" + std::to_string(xs.size()) +
                  " vs " + std::to_string(ys.size()) + ")");
    }
    Polyline line;
    line.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!xs[i].is_number() || !ys[i].is_number()) throw Error("non-numeric coordinate");
      line.push_back({static_cast<int>(std::lround(xs[i].get<double>())),
                      static_cast<int>(std::lround(ys[i].get<double>()))});
    }
    raw.strokes.push_back(std::move(line));
  }
  raw.validate();
  return raw;
}

void plot(RasterSketch::Grid& grid, int x, int y) {
  if (x >= 0 && y >= 0 && x < grid.cols() && y < grid.rows()) grid(y, x) = 1.0f;
}

void draw_line(RasterSketch::Grid& grid, int x0, int y0, int x1, int y1) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    plot(grid, x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

void RawSketch::validate() const {
  if (strokes.empty()) throw PreconditionError("empty drawing");
  for (const auto& stroke : strokes) {
    if (stroke.empty()) throw PreconditionError("stroke without points");
    for (const auto& p : stroke) {
      if (p.x < 0 || p.y < 0) throw PreconditionError("negative coordinate");
    }
  }
}

void StrokeSketch::validate() const {
  if (steps.empty()) throw PreconditionError("stroke sequence is empty");
  for (const auto& s : steps) {
    if (s.pen_down + s.pen_up != 1) throw PreconditionError("pen flags must be one-hot");
    if (!std::isfinite(s.dx) || !std::isfinite(s.dy)) {
      throw PreconditionError("non-finite offset");
    }
  }
}

ParsedRecords parse_sketch_records(std::istream& in, const RecordFormat& format) {
  ParsedRecords out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto record = nlohmann::json::parse(line);
      out.sketches.push_back(parse_record(record, format));
      out.lines.push_back(line_no);
    } catch (const nlohmann::json::exception& e) {
      out.errors.emplace_back(line_no, e.what());
    } catch (const Error& e) {
      out.errors.emplace_back(line_no, e.what());
    }
  }
  return out;
}

StrokeSketch to_stroke_sequence(const RawSketch& raw, std::uint16_t label, double offset_scale) {
  raw.validate();
  if (!(offset_scale > 0.0) || !std::isfinite(offset_scale)) {
    throw PreconditionError("offset scale must be positive and finite");
  }
  StrokeSketch out;
  out.label = label;
  const Point* prev = nullptr;
  for (std::size_t s = 0; s < raw.strokes.size(); ++s) {
    for (std::size_t i = 0; i < raw.strokes[s].size(); ++i) {
      const Point& p = raw.strokes[s][i];
      StrokeStep step;
      if (prev != nullptr) {
        step.dx = (p.x - prev->x) / offset_scale;
        step.dy = (p.y - prev->y) / offset_scale;
      }
      const bool new_stroke = s > 0 && i == 0;
      step.pen_down = new_stroke ? 0 : 1;
      step.pen_up = new_stroke ? 1 : 0;
      out.steps.push_back(step);
      prev = &p;
    }
  }
  return out;
}

double offset_std(std::span<const StrokeSketch> sketches) {
  double sum = 0.0;
  double count = 0.0;
  for (const auto& s : sketches) {
    for (const auto& step : s.steps) {
      sum += step.dx + step.dy;
      count += 2.0;
    }
  }
  if (count == 0.0) return 0.0;
  const double mean = sum / count;
  double ss = 0.0;
  for (const auto& s : sketches) {
    for (const auto& step : s.steps) {
      ss += (step.dx - mean) * (step.dx - mean) + (step.dy - mean) * (step.dy - mean);
    }
  }
  return std::sqrt(ss / count);
}

RasterSketch rasterize(const StrokeSketch& sketch, int side) {
  if (side < 16) throw PreconditionError("raster side must be at least 16");
  sketch.validate();

  const std::size_t n = sketch.steps.size();
  std::vector<double> xs(n), ys(n);
  double x = 0.0, y = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    x += sketch.steps[k].dx;
    y += sketch.steps[k].dy;
    xs[k] = x;
    ys[k] = y;
  }
  const auto [min_x, max_x] = std::minmax_element(xs.begin(), xs.end());
  const auto [min_y, max_y] = std::minmax_element(ys.begin(), ys.end());
  const double extent = std::max(*max_x - *min_x, *max_y - *min_y);
  const double mid_x = 0.5 * (*min_x + *max_x);
  const double mid_y = 0.5 * (*min_y + *max_y);
  const double centre = 0.5 * (side - 1);
  const double scale = extent > 0.0 ? (side - 1 - 2 * kRasterMargin) / extent : 0.0;

  RasterSketch r;
  r.side = side;
  r.grid = RasterSketch::Grid::Zero(side, side);
  int px_prev = 0, py_prev = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const int px = static_cast<int>(std::lround((xs[k] - mid_x) * scale + centre));
    const int py = static_cast<int>(std::lround((ys[k] - mid_y) * scale + centre));
    if (k > 0 && sketch.steps[k].pen_down) {
      draw_line(r.grid, px_prev, py_prev, px, py);
    } else {
      plot(r.grid, px, py);
    }
    px_prev = px;
    py_prev = py;
  }
  return r;
}

std::vector<std::uint16_t> Corpus::labels() const {
  std::vector<std::uint16_t> out;
  out.reserve(sketches.size());
  for (const auto& s : sketches) out.push_back(s.label);
  return out;
}

Corpus build_corpus(std::span<const RawSketch> raw) {
  Corpus corpus;
  std::map<std::string, std::uint16_t> index;
  for (const auto& r : raw) index.emplace(r.category, 0);
  if (index.size() > 65535) throw PreconditionError("too many categories for u16 labels");
  for (auto& [name, label] : index) {
    label = static_cast<std::uint16_t>(corpus.categories.size());
    corpus.categories.push_back(name);
  }
  corpus.sketches.reserve(raw.size());
  for (const auto& r : raw) corpus.sketches.push_back(to_stroke_sequence(r, index.at(r.category)));

  const double scale = offset_std(corpus.sketches);
  corpus.offset_scale = scale > 0.0 ? scale : 1.0;
  for (auto& s : corpus.sketches) {
    for (auto& step : s.steps) {
      step.dx /= corpus.offset_scale;
      step.dy /= corpus.offset_scale;
    }
  }
  return corpus;
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  out.write(kCorpusMagic, 8);
  io::write_u32(out, kCorpusVersion);
  io::write_u32(out, static_cast<std::uint32_t>(corpus.categories.size()));
  for (const auto& name : corpus.categories) io::write_string(out, name);
  io::write_f64(out, corpus.offset_scale);
  io::write_u32(out, static_cast<std::uint32_t>(corpus.sketches.size()));
  for (const auto& s : corpus.sketches) {
    io::write_u16(out, s.label);
    io::write_u32(out, static_cast<std::uint32_t>(s.steps.size()));
    for (const auto& step : s.steps) {
      io::write_f32(out, static_cast<float>(step.dx));
      io::write_f32(out, static_cast<float>(step.dy));
      io::write_f32(out, static_cast<float>(step.pen_down));
      io::write_f32(out, static_cast<float>(step.pen_up));
    }
  }
}

Corpus read_corpus(std::istream& in) {
  io::read_magic(in, std::string_view(kCorpusMagic, 8), kCorpusVersion);
  Corpus corpus;
  const auto n_cat = io::read_u32(in);
  for (std::uint32_t i = 0; i < n_cat; ++i) corpus.categories.push_back(io::read_string(in));
  corpus.offset_scale = io::read_f64(in);
  const auto n = io::read_u32(in);
  corpus.sketches.resize(n);
  for (auto& s : corpus.sketches) {
    s.label = io::read_u16(in);
    if (s.label >= n_cat) throw FormatError("label out of range in corpus");
    const auto steps = io::read_u32(in);
    s.steps.resize(steps);
    for (auto& step : s.steps) {
      step.dx = io::read_f32(in);
      step.dy = io::read_f32(in);
      step.pen_down = static_cast<std::uint8_t>(io::read_f32(in));
      step.pen_up = static_cast<std::uint8_t>(io::read_f32(in));
    }
    s.validate();
  }
  return corpus;
}

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ostringstream out;
  write_corpus(out, corpus);
  io::write_file(path, out.str());
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus " + path);
  return read_corpus(in);
}

const std::vector<std::uint32_t>& DatasetSplit::by_name(const std::string& name) const {
  if (name == "train") return train;
  if (name == "validation") return validation;
  if (name == "retrieval") return retrieval;
  if (name == "query") return query;
  throw Error("unknown split '" + name + "'");
}

DatasetSplit make_splits(std::span<const std::uint16_t> labels,
                         std::span<const std::string> category_names, const SplitQuotas& quotas,
                         std::uint64_t seed, std::span<const std::uint16_t> categories) {
  std::size_t n_cat = category_names.size();
  for (auto l : labels) n_cat = std::max<std::size_t>(n_cat, l + 1u);

  std::vector<std::uint16_t> selected(categories.begin(), categories.end());
  if (selected.empty()) {
    for (std::size_t c = 0; c < n_cat; ++c) selected.push_back(static_cast<std::uint16_t>(c));
  }
  std::sort(selected.begin(), selected.end());

  std::vector<std::vector<std::uint32_t>> members(n_cat);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    members[labels[i]].push_back(static_cast<std::uint32_t>(i));
  }

  DatasetSplit split;
  split.seed = seed;
  Rng rng(seed);
  for (auto c : selected) {
    if (c >= n_cat) throw PreconditionError("category index out of range");
    auto& ids = members[c];
    if (ids.size() < quotas.total()) {
      const std::string name =
          c < category_names.size() ? category_names[c] : "#" + std::to_string(c);
      throw PreconditionError("category '" + name + "' has " + std::to_string(ids.size()) +
                              " sketches, quotas need " + std::to_string(quotas.total()));
    }
    rng.shuffle(ids);
    auto it = ids.begin();
    auto take = [&](std::vector<std::uint32_t>& dst, std::size_t count) {
      dst.insert(dst.end(), it, it + static_cast<std::ptrdiff_t>(count));
      it += static_cast<std::ptrdiff_t>(count);
    };
    take(split.train, quotas.train);
    take(split.validation, quotas.validation);
    take(split.retrieval, quotas.retrieval);
    take(split.query, quotas.query);
  }
  return split;
}

void write_split_manifest(std::ostream& out, const DatasetSplit& split) {
  out << "# sketchhash split manifest v1\n";
  out << "seed " << split.seed << "\n";
  const std::pair<const char*, const std::vector<std::uint32_t>*> parts[] = {
      {"train", &split.train},
      {"validation", &split.validation},
      {"retrieval", &split.retrieval},
      {"query", &split.query}};
  for (const auto& [name, ids] : parts) {
    out << name << " " << ids->size() << "\n";
    for (auto id : *ids) out << id << "\n";
  }
}

DatasetSplit read_split_manifest(std::istream& in) {
  DatasetSplit split;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# sketchhash split manifest", 0) != 0) {
    throw FormatError("not a split manifest");
  }
  std::string key;
  if (!(in >> key) || key != "seed" || !(in >> split.seed)) throw FormatError("manifest seed missing");
  const std::pair<const char*, std::vector<std::uint32_t>*> parts[] = {
      {"train", &split.train},
      {"validation", &split.validation},
      {"retrieval", &split.retrieval},
      {"query", &split.query}};
  for (const auto& [expected, section] : parts) {
    std::size_t count = 0;
    if (!(in >> key) || key != expected || !(in >> count)) {
      throw FormatError(std::string("manifest section '") + expected + "' missing");
    }
    auto& ids = *section;
    ids.resize(count);
    for (auto& id : ids) {
      if (!(in >> id)) throw FormatError(std::string("truncated section '") + expected + "'");
    }
  }
  return split;
}

}  // namespace sketchhash
