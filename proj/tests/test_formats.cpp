#include <gtest/gtest.h>

#include <cstring>
#include <limits>
#include <sstream>

#include "kws/formats.hpp"
#include "support/toy_fixture.hpp"

namespace {

using namespace kws;

Template sample_template() {
  Template t;
  t.frames.resize(3, 4);
  for (Eigen::Index i = 0; i < t.frames.size(); ++i) t.frames.data()[i] = 0.25 * static_cast<double>(i) - 1.0;
  t.keyword = "bravo";
  t.source_duration_s = 0.4375;
  t.time_offset_s = 0.008;
  return t;
}

EmbeddingModel sample_model() {
  EmbeddingModel m;
  m.label_space = KeywordLabelSpace({"alpha", "bravo"}, true);
  m.n_pos = 3;
  m.embedder.weight = Matrix::Constant(LogMelConfig::kMels, 4, 0.5);
  m.embedder.bias = RowVector::LinSpaced(4, -1.5, 1.5);
  m.centers = ClusterCenters::random_unit(2, m.label_space.n_classes(), m.n_pos, 4, 3);
  m.scale.value = 7.25;
  m.config.d_emb = 4;
  m.config.n_cluster = 2;
  m.config.pos_loss = false;
  return m;
}

TEST(Formats, TemplateRoundTrip) {
  const Template t = sample_template();
  const std::string bytes = encode_template(t);
  EXPECT_EQ(bytes.substr(0, 4), "KWTE");
  const Template back = decode_template(bytes);
  EXPECT_EQ(back.frames, t.frames);  // values exactly representable in f32
  EXPECT_EQ(back.keyword, t.keyword);
  EXPECT_EQ(back.source_duration_s, t.source_duration_s);
  EXPECT_EQ(back.frame_hop_s, t.frame_hop_s);
  EXPECT_EQ(back.time_offset_s, t.time_offset_s);
  EXPECT_EQ(encode_template(back), bytes);
}

TEST(Formats, TemplateHeaderLayout) {
  const std::string bytes = encode_template(sample_template());
  std::uint32_t version, rows, cols;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&rows, bytes.data() + 8, 4);
  std::memcpy(&cols, bytes.data() + 12, 4);
  EXPECT_EQ(version, kFormatVersion);
  EXPECT_EQ(rows, 3u);
  EXPECT_EQ(cols, 4u);
  const Json trailer = Json::parse(bytes.substr(16 + 3 * 4 * 4));
  EXPECT_EQ(trailer.at("keyword"), "bravo");
}

TEST(Formats, CorruptTemplates) {
  const std::string bytes = encode_template(sample_template());
  for (std::size_t n = 0; n < 16 + 48; ++n) EXPECT_THROW(decode_template(bytes.substr(0, n)), FormatError) << n;
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_template(bad), FormatError);
  bad = bytes;
  bad[4] = 9;
  EXPECT_THROW(decode_template(bad), FormatError);
  EXPECT_THROW(decode_template(bytes.substr(0, bytes.size() - 2)), FormatError);
  bad = bytes.substr(0, 64) + R"({"source_duration_s": 1, "frame_hop_s": 0.016})";
  EXPECT_THROW(decode_template(bad), FormatError);
}

TEST(Formats, ModelRoundTrip) {
  const EmbeddingModel m = sample_model();
  const std::string bytes = encode_model(m, Json{{"loss_trace", {3.0, 2.0}}});
  EXPECT_EQ(bytes.substr(0, 4), "KWEM");
  const LoadedModel back = decode_model(bytes);
  EXPECT_EQ(back.model.embedder.weight, m.embedder.weight);
  EXPECT_EQ(back.model.embedder.bias, m.embedder.bias);
  EXPECT_TRUE(back.model.centers.rows.isApprox(m.centers.rows, 1e-6));
  EXPECT_EQ(back.model.centers.n_kw, m.centers.n_kw);
  EXPECT_EQ(back.model.scale.value, 7.25);
  EXPECT_EQ(back.model.label_space.keywords(), m.label_space.keywords());
  EXPECT_TRUE(back.model.label_space.with_reversed());
  EXPECT_EQ(back.model.n_pos, 3);
  EXPECT_FALSE(back.model.config.pos_loss);
  EXPECT_EQ(back.metadata.at("loss_trace").size(), 2u);
  EXPECT_EQ(encode_model(back.model, Json{{"loss_trace", {3.0, 2.0}}}), bytes);
}

TEST(Formats, CorruptModels) {
  const std::string bytes = encode_model(sample_model());
  for (std::size_t n : {0ul, 3ul, 10ul, 28ul, 100ul, bytes.size() - 1}) EXPECT_THROW(decode_model(bytes.substr(0, n)), FormatError) << n;
  std::string bad = bytes;
  bad[1] = 'Z';
  EXPECT_THROW(decode_model(bad), FormatError);
  // Header says 5 classes; metadata claims reversal off (3 classes).
  EmbeddingModel m = sample_model();
  std::string text = encode_model(m);
  const auto at = text.find("\"reversed_classes\":true");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 23, "\"reversed_classes\":false");
  EXPECT_THROW(decode_model(text), FormatError);
}

TEST(Formats, FeatureDumpRoundTrip) {
  testing_support::TempDir dir("kwfe");
  FeatureMatrix f;
  f.frames = Matrix::Constant(5, 3, 1.5);
  f.frame_step_s = 0.01;
  f.kind = FeatureKind::kHfcc;
  write_features(dir.path() / "x.kwfe", f, "x.wav");
  const FeatureMatrix back = read_features(dir.path() / "x.kwfe");
  EXPECT_EQ(back.frames, f.frames);
  EXPECT_EQ(back.kind, FeatureKind::kHfcc);
  EXPECT_EQ(back.frame_step_s, 0.01);
  const Json side = Json::parse(detail::slurp(dir.path() / "x.kwfe.json"));
  EXPECT_EQ(side.at("source"), "x.wav");
  EXPECT_EQ(side.at("kind"), "hfcc");
}

TEST(Formats, AnnotationRoundTrip) {
  testing_support::TempDir dir("tsv");
  const std::vector<EventAnnotation> events{{"s000.wav", 0.5, 1.25, "alpha"}, {"s001.wav", 2.0, 2.123456, "bravo"}};
  write_annotations(dir.path() / "a.tsv", events);
  EXPECT_EQ(detail::slurp(dir.path() / "a.tsv"),
            "file\tonset_s\toffset_s\tkeyword\ns000.wav\t0.500000\t1.250000\talpha\ns001.wav\t2.000000\t2.123456\tbravo\n");
  const auto back = read_annotations(dir.path() / "a.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].file, "s001.wav");
  EXPECT_DOUBLE_EQ(back[1].offset_s, 2.123456);
}

TEST(Formats, MalformedAnnotations) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_annotations(in, "t");
  };
  EXPECT_THROW(parse("a\tb\tc\td\n"), ValidationError);
  EXPECT_THROW(parse("file\tonset_s\toffset_s\tkeyword\nf\t1.0\n"), ValidationError);
  EXPECT_THROW(parse("file\tonset_s\toffset_s\tkeyword\nf\tx\t2\tk\n"), ValidationError);
  EXPECT_THROW(parse("file\tonset_s\toffset_s\tkeyword\nf\t2\t1\tk\n"), ValidationError);
  EXPECT_TRUE(parse("").empty());
  EXPECT_EQ(parse("file\tonset_s\toffset_s\tkeyword\r\nf\t1\t2\tk\r\n\n").size(), 1u);
}

TEST(Formats, DetectionsTsv) {
  const std::string text = format_detections({{"s.wav", "alpha", 0.1, 0.6, -0.0421}});
  EXPECT_EQ(text, "file\tonset_s\toffset_s\tkeyword\tscore\ns.wav\t0.100000\t0.600000\talpha\t-0.042100\n");
  testing_support::TempDir dir("det");
  write_detections(dir.path() / "d.tsv", {{"s.wav", "alpha", 0.1, 0.6, -0.0421}});
  const auto back = read_detections(dir.path() / "d.tsv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].keyword, "alpha");
  EXPECT_DOUBLE_EQ(back[0].score, -0.0421);
}

TEST(Formats, ThresholdJson) {
  const Thresholds g = Thresholds::uniform(-0.25);
  EXPECT_EQ(thresholds_json(g).at("mode"), "global");
  EXPECT_EQ(*thresholds_from_json(thresholds_json(g)).global, -0.25);

  Thresholds p;
  p.per_keyword = {{"a", std::numeric_limits<double>::infinity()}, {"b", -0.5}};
  const Json j = thresholds_json(p);
  EXPECT_EQ(j.at("mode"), "individual");
  EXPECT_EQ(j.at("thresholds").at("a"), "inf");
  const Thresholds back = thresholds_from_json(Json::parse(j.dump()));
  EXPECT_FALSE(back.global.has_value());
  EXPECT_TRUE(std::isinf(back.per_keyword.at("a")));
  EXPECT_EQ(back.per_keyword.at("b"), -0.5);

  EXPECT_THROW(thresholds_from_json(Json::object()), ConfigError);
  EXPECT_THROW(thresholds_from_json(Json{{"threshold", "high"}}), ConfigError);
  EXPECT_THROW(thresholds_from_json(Json{{"threshold", true}}), ConfigError);
}

TEST(Formats, MetricsJson) {
  const Json j = metrics_json(micro_f1(3, 1, 2));
  EXPECT_EQ(j.at("tp"), 3);
  EXPECT_EQ(j.at("fn"), 2);
  EXPECT_DOUBLE_EQ(j.at("precision").get<double>(), 0.75);
  EXPECT_DOUBLE_EQ(j.at("recall").get<double>(), 0.6);
}

}  // namespace
