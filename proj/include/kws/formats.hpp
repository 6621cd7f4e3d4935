#pragma once

// On-disk formats. All binary containers are little-endian:
//   KWFE  features   "KWFE" u32 version u32 rows u32 cols f32[rows*cols]  (+ <file>.json sidecar)
//   KWTE  template   "KWTE" u32 version u32 L u32 D f32[L*D] JSON trailer
//   KWEM  model      "KWEM" u32 version u32 D_emb u32 N_kw u32 N_pos u32 N_cluster f64 scale
//                    f32 weight[in x D_emb] f32 bias[D_emb] f32 centres[N_cluster*N_kw*N_pos*D_emb]
//                    JSON trailer
// TSV files are tab-separated UTF-8 with a header row.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "kws/detect.hpp"
#include "kws/dtw.hpp"
#include "kws/embedder.hpp"
#include "kws/error.hpp"
#include "kws/evaluation.hpp"
#include "kws/frontend.hpp"

namespace kws {

using Json = nlohmann::json;

inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void magic(std::string_view m) { buf_.append(m); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
  }
  void f32(double v) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    u32(u);
  }
  void f64(double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }
  void matrix_f32(const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) f32(m(r, c));
  }
  void text(std::string_view s) { buf_.append(s); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string what) : buf_(std::move(bytes)), what_(std::move(what)) {}

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::string_view(buf_).substr(pos_, m.size()) != m) throw FormatError(what_ + ": bad magic, expected " + std::string(m));
    pos_ += m.size();
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f32() {
    const std::uint32_t u = u32();
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  double f64() {
    const std::uint64_t u = u64();
    double d;
    std::memcpy(&d, &u, 8);
    return d;
  }
  Matrix matrix_f32(std::size_t rows, std::size_t cols) {
    need(rows * cols * 4);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f32();
    return m;
  }
  void check_version() {
    const std::uint32_t v = u32();
    if (v != kFormatVersion) throw FormatError(what_ + ": unsupported version " + std::to_string(v));
  }
  std::string rest() {
    std::string out = buf_.substr(pos_);
    pos_ = buf_.size();
    return out;
  }
  Json json_trailer() {
    const std::string text = rest();
    try {
      return Json::parse(text);
    } catch (const Json::exception& e) {
      throw FormatError(what_ + ": invalid JSON trailer: " + e.what());
    }
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw FormatError(what_ + ": truncated file");
  }
  std::string buf_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spill(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(where + ": not a number: '" + s + "'");
  }
}

inline std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// KWFE

inline void write_features(const std::filesystem::path& path, const FeatureMatrix& f, const std::string& source) {
  detail::ByteWriter w;
  w.magic("KWFE");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(f.frames.rows()));
  w.u32(static_cast<std::uint32_t>(f.frames.cols()));
  w.matrix_f32(f.frames);
  detail::spill(path, w.bytes());
  const Json side{{"kind", to_string(f.kind)}, {"hop", f.frame_step_s}, {"source", source}};
  detail::spill(path.string() + ".json", side.dump(2) + "\n");
}

inline FeatureMatrix read_features(const std::filesystem::path& path) {
  detail::ByteReader r(detail::slurp(path), path.string());
  r.expect_magic("KWFE");
  r.check_version();
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  FeatureMatrix f;
  f.frames = r.matrix_f32(rows, cols);
  const std::filesystem::path side = path.string() + ".json";
  if (std::filesystem::exists(side)) {
    const Json j = Json::parse(detail::slurp(side));
    f.kind = j.value("kind", "logmel") == "hfcc" ? FeatureKind::kHfcc : FeatureKind::kLogMel;
    f.frame_step_s = j.value("hop", 0.0);
  }
  return f;
}

// ---------------------------------------------------------------------------
// KWTE

inline std::string encode_template(const Template& t) {
  detail::ByteWriter w;
  w.magic("KWTE");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(t.frames.rows()));
  w.u32(static_cast<std::uint32_t>(t.frames.cols()));
  w.matrix_f32(t.frames);
  const Json meta{{"keyword", t.keyword},
                  {"source_duration_s", t.source_duration_s},
                  {"frame_hop_s", t.frame_hop_s},
                  {"time_offset_s", t.time_offset_s}};
  w.text(meta.dump());
  return w.bytes();
}

inline Template decode_template(std::string bytes, const std::string& what = "template") {
  detail::ByteReader r(std::move(bytes), what);
  r.expect_magic("KWTE");
  r.check_version();
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  if (rows < 1 || cols < 1) throw FormatError(what + ": empty template");
  Template t;
  t.frames = r.matrix_f32(rows, cols);
  const Json meta = r.json_trailer();
  try {
    t.keyword = meta.at("keyword").get<std::string>();
    t.source_duration_s = meta.at("source_duration_s").get<double>();
    t.frame_hop_s = meta.at("frame_hop_s").get<double>();
    t.time_offset_s = meta.value("time_offset_s", 0.0);
  } catch (const Json::exception& e) {
    throw FormatError(what + ": incomplete metadata: " + e.what());
  }
  return t;
}

inline void write_template(const std::filesystem::path& path, const Template& t) {
  detail::spill(path, encode_template(t));
}

inline Template read_template(const std::filesystem::path& path) {
  return decode_template(detail::slurp(path), path.string());
}

// ---------------------------------------------------------------------------
// KWEM

inline Json train_config_json(const TrainConfig& c) {
  return {{"d_emb", c.d_emb},   {"n_cluster", c.n_cluster}, {"lr", c.lr},
          {"epochs", c.epochs}, {"batch", c.batch},         {"seed", c.seed},
          {"reversed", c.reversed}, {"pos_loss", c.pos_loss}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.d_emb = j.value("d_emb", c.d_emb);
  c.n_cluster = j.value("n_cluster", c.n_cluster);
  c.lr = j.value("lr", c.lr);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  c.reversed = j.value("reversed", c.reversed);
  c.pos_loss = j.value("pos_loss", c.pos_loss);
  return c;
}

inline std::string encode_model(const EmbeddingModel& m, const Json& extra = Json::object()) {
  detail::ByteWriter w;
  w.magic("KWEM");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.embedder.dim()));
  w.u32(static_cast<std::uint32_t>(m.centers.n_kw));
  w.u32(static_cast<std::uint32_t>(m.centers.n_pos));
  w.u32(static_cast<std::uint32_t>(m.centers.n_cluster));
  w.f64(m.scale.value);
  w.matrix_f32(m.embedder.weight);
  w.matrix_f32(m.embedder.bias);
  w.matrix_f32(m.centers.rows);
  Json meta{{"keywords", m.label_space.keywords()},
            {"reversed_classes", m.label_space.with_reversed()},
            {"n_pos", m.n_pos},
            {"input_dim", m.embedder.input_dim()},
            {"config", train_config_json(m.config)}};
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  w.text(meta.dump());
  return w.bytes();
}

struct LoadedModel {
  EmbeddingModel model;
  Json metadata;
};

inline LoadedModel decode_model(std::string bytes, const std::string& what = "model") {
  detail::ByteReader r(std::move(bytes), what);
  r.expect_magic("KWEM");
  r.check_version();
  const std::uint32_t d = r.u32();
  const std::uint32_t n_kw = r.u32();
  const std::uint32_t n_pos = r.u32();
  const std::uint32_t n_cluster = r.u32();
  if (d == 0 || n_kw == 0 || n_pos == 0 || n_cluster == 0) throw FormatError(what + ": zero dimension in header");
  const double scale = r.f64();
  // The binary layout fixes the input width at the mel bin count.
  const std::size_t in_dim = LogMelConfig::kMels;
  const std::string tail = r.rest();
  const std::size_t payload =
      (in_dim * d + d + static_cast<std::size_t>(n_cluster) * n_kw * n_pos * d) * sizeof(float);
  if (tail.size() < payload) throw FormatError(what + ": truncated file");
  LoadedModel out;
  detail::ByteReader body(tail.substr(0, payload), what);
  out.model.embedder.weight = body.matrix_f32(in_dim, d);
  out.model.embedder.bias = body.matrix_f32(1, d).row(0);
  out.model.centers.n_cluster = static_cast<int>(n_cluster);
  out.model.centers.n_kw = static_cast<int>(n_kw);
  out.model.centers.n_pos = static_cast<int>(n_pos);
  out.model.centers.rows = body.matrix_f32(static_cast<std::size_t>(n_cluster) * n_kw * n_pos, d);
  try {
    out.metadata = Json::parse(tail.substr(payload));
  } catch (const Json::exception& e) {
    throw FormatError(what + ": invalid JSON trailer: " + e.what());
  }
  out.model.scale.value = scale;
  try {
    out.model.label_space = KeywordLabelSpace(out.metadata.at("keywords").get<std::vector<std::string>>(),
                                              out.metadata.at("reversed_classes").get<bool>());
    out.model.n_pos = out.metadata.at("n_pos").get<int>();
    out.model.config = train_config_from_json(out.metadata.value("config", Json::object()));
  } catch (const Json::exception& e) {
    throw FormatError(what + ": incomplete metadata: " + e.what());
  }
  if (out.model.label_space.n_classes() != static_cast<int>(n_kw) || out.model.n_pos != static_cast<int>(n_pos))
    throw FormatError(what + ": metadata disagrees with header dimensions");
  return out;
}

inline void write_model(const std::filesystem::path& path, const EmbeddingModel& m, const Json& extra = Json::object()) {
  detail::spill(path, encode_model(m, extra));
}

inline LoadedModel read_model(const std::filesystem::path& path) { return decode_model(detail::slurp(path), path.string()); }

// ---------------------------------------------------------------------------
// TSV

inline std::vector<EventAnnotation> parse_annotations(std::istream& in, const std::string& what) {
  std::vector<EventAnnotation> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const auto header = detail::split_tabs(line);
  if (header.size() < 4 || header[0] != "file" || header[1] != "onset_s" || header[2] != "offset_s" ||
      header[3] != "keyword")
    throw ValidationError(what + ": expected header 'file\\tonset_s\\toffset_s\\tkeyword'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_tabs(line);
    const std::string where = what + ":" + std::to_string(lineno);
    if (f.size() < 4) throw ValidationError(where + ": expected 4 columns");
    EventAnnotation a{f[0], detail::parse_number(f[1], where), detail::parse_number(f[2], where), f[3]};
    if (!(a.onset_s < a.offset_s)) throw ValidationError(where + ": onset must precede offset");
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<EventAnnotation> read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_annotations(in, path.string());
}

inline void write_annotations(const std::filesystem::path& path, const std::vector<EventAnnotation>& events) {
  std::string text = "file\tonset_s\toffset_s\tkeyword\n";
  for (const auto& e : events)
    text += e.file + "\t" + detail::fixed6(e.onset_s) + "\t" + detail::fixed6(e.offset_s) + "\t" + e.keyword + "\n";
  detail::spill(path, text);
}

inline std::string format_detections(const std::vector<Detection>& dets) {
  std::string text = "file\tonset_s\toffset_s\tkeyword\tscore\n";
  for (const auto& d : dets)
    text += d.file + "\t" + detail::fixed6(d.onset_s) + "\t" + detail::fixed6(d.offset_s) + "\t" + d.keyword + "\t" +
            detail::fixed6(d.score) + "\n";
  return text;
}

inline void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  detail::spill(path, format_detections(dets));
}

inline std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<Detection> out;
  std::string line;
  if (!std::getline(in, line)) return out;
  const auto header = detail::split_tabs(line);
  if (header.size() < 5 || header[0] != "file" || header[4] != "score")
    throw ValidationError(path.string() + ": expected header 'file\\tonset_s\\toffset_s\\tkeyword\\tscore'");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() < 5) throw ValidationError(where + ": expected 5 columns");
    out.push_back({f[0], f[3], detail::parse_number(f[1], where), detail::parse_number(f[2], where),
                   detail::parse_number(f[4], where)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Threshold / metrics JSON. Infinite thresholds are written as "inf" / "-inf".

inline Json threshold_value_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double threshold_value_from_json(const Json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw ConfigError("invalid threshold value '" + s + "'");
  }
  if (!j.is_number()) throw ConfigError("threshold must be a number");
  return j.get<double>();
}

inline Json thresholds_json(const Thresholds& t) {
  Json j;
  if (t.global && t.per_keyword.empty()) {
    j["mode"] = "global";
    j["threshold"] = threshold_value_json(*t.global);
  } else {
    j["mode"] = "individual";
    Json per = Json::object();
    for (const auto& [k, v] : t.per_keyword) per[k] = threshold_value_json(v);
    j["thresholds"] = per;
    if (t.global) j["default"] = threshold_value_json(*t.global);
  }
  return j;
}

inline Thresholds thresholds_from_json(const Json& j) {
  Thresholds t;
  try {
    if (j.contains("threshold")) t.global = threshold_value_from_json(j.at("threshold"));
    if (j.contains("default")) t.global = threshold_value_from_json(j.at("default"));
    if (j.contains("thresholds"))
      for (auto it = j.at("thresholds").begin(); it != j.at("thresholds").end(); ++it)
        t.per_keyword[it.key()] = threshold_value_from_json(it.value());
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed thresholds JSON: ") + e.what());
  }
  if (!t.global && t.per_keyword.empty()) throw ConfigError("thresholds JSON defines no threshold");
  return t;
}

inline Json metrics_json(const MetricsReport& r) {
  return {{"tp", r.tp},
          {"fp", r.fp},
          {"fn", r.fn},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f_score", r.f_score}};
}

}  // namespace kws
