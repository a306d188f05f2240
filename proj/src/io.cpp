#include "snpx/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

namespace snpx {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and PGM writers assume a little-endian host");

std::string float_text(float v) {
  char buf[48];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return text;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

std::vector<uint8_t> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

// ---- CSV ----

namespace {

std::string csv_field(const std::string& f) {
  if (f.find_first_of(",\"\n\r") == std::string::npos) return f;
  std::string quoted = "\"";
  for (char c : f) {
    quoted += c;
    if (c == '"') quoted += '"';
  }
  quoted += '"';
  return quoted;
}

void csv_row(std::string& out, const std::vector<std::string>& row) {
  for (size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += csv_field(row[i]);
  }
  out += '\n';
}

}  // namespace

std::string csv_text(const CsvTable& table) {
  if (table.header.empty()) throw std::invalid_argument("csv table needs a header row");
  for (const auto& row : table.rows)
    if (row.size() != table.header.size())
      throw std::invalid_argument("csv row width differs from header");
  std::string out;
  csv_row(out, table.header);
  for (const auto& row : table.rows) csv_row(out, row);
  return out;
}

CsvTable parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;

  const auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
  };
  const auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
  };

  for (size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    any = true;
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      end_row();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw std::invalid_argument("csv: unterminated quoted field");
  if (any && (!field.empty() || !row.empty())) end_row();

  if (rows.empty()) throw std::invalid_argument("csv: no header row");
  CsvTable table;
  table.header = std::move(rows.front());
  table.rows.assign(std::make_move_iterator(rows.begin() + 1),
                    std::make_move_iterator(rows.end()));
  return table;
}

CsvTable sweep_csv(const SweepTable& table, uint64_t seed) {
  CsvTable out;
  out.header = {"env",  "agent",   "source", "method", "norm",
                "epsilon", "seed", "episode", "reward"};
  for (const SweepCell& c : table.rows) {
    for (size_t e = 0; e < c.result.per_episode.size(); ++e) {
      out.rows.push_back({c.env, c.agent_algo, c.attack_source, c.method, c.norm,
                          float_text(c.epsilon), std::to_string(seed),
                          std::to_string(e), float_text(c.result.per_episode[e])});
    }
  }
  return out;
}

// ---- PGM ----

std::vector<uint8_t> pgm_bytes(const float* data, int h, int w, float lo, float hi) {
  if (h < 1 || w < 1) throw std::invalid_argument("pgm: empty image");
  if (!(hi > lo)) throw std::invalid_argument("pgm: hi must exceed lo");
  std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + static_cast<size_t>(h) * w);
  const float scale = 255.0f / (hi - lo);
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    const float v = std::clamp((data[i] - lo) * scale, 0.0f, 255.0f);
    bytes.push_back(static_cast<uint8_t>(std::lround(v)));
  }
  return bytes;
}

void write_pgm(const std::string& path, const float* data, int h, int w, float lo,
               float hi) {
  write_binary_file(path, pgm_bytes(data, h, w, lo, hi));
}

void write_pgm(const std::string& path, const SaliencyMap& map) {
  float hi = 0.0f;
  for (float s : map.scores) hi = std::max(hi, s);
  if (hi == 0.0f) hi = 1.0f;  // zero map renders as black
  write_binary_file(path, pgm_bytes(map.scores.data(), map.h, map.w, 0.0f, hi));
}

// ---- SVG ----

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<PlotSeries>& series) {
  if (series.empty()) throw std::invalid_argument("svg plot: no series");
  for (const PlotSeries& s : series)
    if (s.points.empty())
      throw std::invalid_argument("svg plot: empty series " + s.label);

  float x0 = series[0].points[0].first, x1 = x0;
  float y0 = series[0].points[0].second, y1 = y0;
  for (const PlotSeries& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (x0 == x1) x0 -= 1.0f, x1 += 1.0f;
  if (y0 == y1) y0 -= 1.0f, y1 += 1.0f;
  const float xpad = 0.05f * (x1 - x0), ypad = 0.05f * (y1 - y0);
  x0 -= xpad, x1 += xpad, y0 -= ypad, y1 += ypad;

  const float kw = 640.0f, kh = 420.0f;
  const float left = 62.0f, right = kw - 150.0f, top = 34.0f, bottom = kh - 44.0f;
  const auto px = [&](float x) { return left + (x - x0) / (x1 - x0) * (right - left); };
  const auto py = [&](float y) { return bottom - (y - y0) / (y1 - y0) * (bottom - top); };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
         "viewBox=\"0 0 640 420\">\n";
  svg += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" + xml_escape(title) + "</text>\n";

  // Axes.
  svg += "<line x1=\"" + float_text(left) + "\" y1=\"" + float_text(bottom) +
         "\" x2=\"" + float_text(right) + "\" y2=\"" + float_text(bottom) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + float_text(left) + "\" y1=\"" + float_text(top) + "\" x2=\"" +
         float_text(left) + "\" y2=\"" + float_text(bottom) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + float_text((left + right) / 2) + "\" y=\"410\" "
         "text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
         xml_escape(x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + float_text((top + bottom) / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 16 " + float_text((top + bottom) / 2) + ")\">" +
         xml_escape(y_label) + "</text>\n";

  // Min/max tick labels.
  svg += "<text x=\"" + float_text(left) + "\" y=\"" + float_text(bottom + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
         float_text(x0 + xpad) + "</text>\n";
  svg += "<text x=\"" + float_text(right) + "\" y=\"" + float_text(bottom + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
         float_text(x1 - xpad) + "</text>\n";
  svg += "<text x=\"" + float_text(left - 6) + "\" y=\"" + float_text(bottom + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" +
         float_text(y0 + ypad) + "</text>\n";
  svg += "<text x=\"" + float_text(left - 6) + "\" y=\"" + float_text(top + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" +
         float_text(y1 - ypad) + "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    std::string pts;
    for (const auto& [x, y] : series[si].points) {
      if (!pts.empty()) pts += ' ';
      pts += float_text(px(x)) + "," + float_text(py(y));
    }
    svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"1.5\"/>\n";
    for (const auto& [x, y] : series[si].points) {
      svg += "<circle cx=\"" + float_text(px(x)) + "\" cy=\"" + float_text(py(y)) +
             "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
    }
    const float ly = top + 16.0f * si;
    svg += "<line x1=\"" + float_text(right + 10) + "\" y1=\"" + float_text(ly) +
           "\" x2=\"" + float_text(right + 30) + "\" y2=\"" + float_text(ly) +
           "\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + float_text(right + 34) + "\" y=\"" + float_text(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" +
           xml_escape(series[si].label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void write_svg(const std::string& path, const std::string& svg) {
  write_text_file(path, svg);
}

// ---- checkpoints ----

std::string checkpoint_error_name(CheckpointError e) {
  switch (e) {
    case CheckpointError::kMagic: return "checkpoint magic mismatch";
    case CheckpointError::kVersion: return "checkpoint version mismatch";
    case CheckpointError::kTruncated: return "checkpoint truncated";
    case CheckpointError::kKind: return "checkpoint kind mismatch";
    case CheckpointError::kMalformed: return "checkpoint malformed";
  }
  return "checkpoint error";
}

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 24));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  const uint8_t* need(size_t n, const char* what) {
    if (bytes.size() - pos < n)
      throw CheckpointIoError(CheckpointError::kTruncated, what);
    const uint8_t* p = bytes.data() + pos;
    pos += n;
    return p;
  }
  uint32_t u32(const char* what) {
    const uint8_t* p = need(4, what);
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
  }
  bool done() const { return pos == bytes.size(); }
};

nlohmann::json meta_json(const CheckpointMeta& meta) {
  nlohmann::json j;
  j["kind"] = meta.kind;
  j["obs"] = meta.obs_shape;
  j["actions"] = meta.actions;
  j["threat"] = meta.threat;
  j["seed"] = meta.seed;
  j["env"] = meta.env;
  return j;
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta meta;
  try {
    meta.kind = j.at("kind").get<std::string>();
    meta.obs_shape = j.at("obs").get<std::vector<int>>();
    meta.actions = j.at("actions").get<int>();
    meta.threat = j.at("threat").get<std::string>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.env = j.at("env").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointIoError(CheckpointError::kMalformed, e.what());
  }
  return meta;
}

CheckpointMeta read_header(Reader& r) {
  const uint8_t* magic = r.need(4, "magic");
  if (std::memcmp(magic, "SNPX", 4) != 0)
    throw CheckpointIoError(CheckpointError::kMagic, "not a checkpoint file");
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw CheckpointIoError(CheckpointError::kVersion,
                            "stored version " + std::to_string(version));
  const uint32_t len = r.u32("metadata length");
  const uint8_t* p = r.need(len, "metadata");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(p, p + len);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointIoError(CheckpointError::kMalformed, e.what());
  }
  return meta_from_json(j);
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore& params) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'S', 'N', 'P', 'X'});
  put_u32(out, kCheckpointVersion);
  const std::string j = meta_json(meta).dump();
  put_u32(out, static_cast<uint32_t>(j.size()));
  out.insert(out.end(), j.begin(), j.end());

  for (const auto& [name, param] : params) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const auto& shape = param.value.shape();
    put_u32(out, static_cast<uint32_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
    const size_t n = out.size();
    out.resize(n + sizeof(float) * static_cast<size_t>(param.value.size()));
    std::memcpy(out.data() + n, param.value.data(),
                sizeof(float) * static_cast<size_t>(param.value.size()));
  }
  write_binary_file(path, out);
}

CheckpointMeta read_checkpoint_meta(const std::string& path) {
  const std::vector<uint8_t> bytes = read_binary_file(path);
  Reader r{bytes};
  return read_header(r);
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore& into,
                               const std::string& expect_kind) {
  if (into.size() != 0)
    throw std::invalid_argument("load_checkpoint: destination store not empty");
  const std::vector<uint8_t> bytes = read_binary_file(path);
  Reader r{bytes};
  const CheckpointMeta meta = read_header(r);
  if (!expect_kind.empty() && meta.kind != expect_kind)
    throw CheckpointIoError(CheckpointError::kKind,
                            "stored " + meta.kind + ", wanted " + expect_kind);

  while (!r.done()) {
    const uint32_t name_len = r.u32("block name length");
    if (name_len == 0 || name_len > 4096)
      throw CheckpointIoError(CheckpointError::kMalformed, "bad block name length");
    const uint8_t* np = r.need(name_len, "block name");
    const std::string name(reinterpret_cast<const char*>(np), name_len);
    if (into.has(name))
      throw CheckpointIoError(CheckpointError::kMalformed, "duplicate block " + name);
    const uint32_t rank = r.u32("block rank");
    if (rank == 0 || rank > 8)
      throw CheckpointIoError(CheckpointError::kMalformed, "bad rank for " + name);
    std::vector<int> shape(rank);
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = r.u32("block dim");
      if (d == 0 || d > (1u << 24))
        throw CheckpointIoError(CheckpointError::kMalformed, "bad dim for " + name);
      shape[i] = static_cast<int>(d);
      count *= d;
    }
    const uint8_t* payload = r.need(sizeof(float) * static_cast<size_t>(count),
                                    "block payload");
    Tensor& value = into.add(name, std::move(shape));
    std::memcpy(value.data(), payload, sizeof(float) * static_cast<size_t>(count));
  }
  if (into.size() == 0)
    throw CheckpointIoError(CheckpointError::kMalformed, "no parameter blocks");
  return meta;
}

void save_policy(const std::string& path, const Policy& p, const std::string& env_name,
                 uint64_t seed) {
  CheckpointMeta meta;
  meta.kind = p.algorithm;
  meta.obs_shape = p.obs_shape;
  meta.actions = p.actions;
  meta.seed = seed;
  meta.env = env_name;
  if (p.algorithm == "dqn" && p.q) {
    save_checkpoint(path, meta, p.q->params());
  } else if (p.algorithm == "ppo" && p.pv) {
    save_checkpoint(path, meta, p.pv->params());
  } else {
    throw std::invalid_argument("save_policy: no trained network to save");
  }
}

Policy load_policy(const std::string& path) {
  ParamStore stored;
  const CheckpointMeta meta = load_checkpoint(path, stored);
  if (meta.kind != "dqn" && meta.kind != "ppo")
    throw CheckpointIoError(CheckpointError::kKind,
                            "stored " + meta.kind + ", wanted an agent");
  Policy p;
  p.algorithm = meta.kind;
  p.actions = meta.actions;
  p.obs_shape = meta.obs_shape;
  try {
    if (meta.kind == "dqn") {
      p.q = std::make_unique<QNetwork>(meta.obs_shape, meta.actions, 0);
      p.q->params().copy_values_from(stored);
    } else {
      p.pv = std::make_unique<PolicyValueNetwork>(meta.obs_shape, meta.actions, 0);
      p.pv->params().copy_values_from(stored);
    }
  } catch (const CheckpointIoError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointIoError(CheckpointError::kMalformed, e.what());
  }
  return p;
}

void save_proxy(const std::string& path, const ProxyModel& m, const std::string& env_name,
                uint64_t seed) {
  CheckpointMeta meta;
  meta.kind = proxy_kind_name(m.kind);
  meta.obs_shape = m.obs_shape;
  meta.actions = m.actions;
  meta.threat = threat_name(m.threat);
  meta.seed = seed;
  meta.env = env_name;
  const ParamStore& params =
      m.net ? m.net->params() : m.frame_net->params();
  save_checkpoint(path, meta, params);
}

ProxyModel load_proxy(const std::string& path) {
  ParamStore stored;
  const CheckpointMeta meta = load_checkpoint(path, stored);
  ProxyKind kind;
  try {
    kind = proxy_kind_from_name(meta.kind);
  } catch (const std::exception&) {
    throw CheckpointIoError(CheckpointError::kKind,
                            "stored " + meta.kind + ", wanted a proxy");
  }
  try {
    ProxyModel m = make_proxy_model(kind, threat_from_name(meta.threat), meta.obs_shape,
                                    meta.actions, 0);
    (m.net ? m.net->params() : m.frame_net->params()).copy_values_from(stored);
    return m;
  } catch (const CheckpointIoError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointIoError(CheckpointError::kMalformed, e.what());
  }
}

}  // namespace snpx
