#pragma once

// The `kws` command line: gen-toy, train, enroll, detect, tune, eval, bench,
// features. Exit status 0 on success, 2 on configuration or usage errors,
// 1 on runtime failures.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "kws/dataset.hpp"
#include "kws/error.hpp"
#include "kws/evaluation.hpp"
#include "kws/formats.hpp"
#include "kws/log.hpp"
#include "kws/pipeline.hpp"

namespace kws::cli {

namespace fs = std::filesystem;

/// Every tunable constant of a run. Defaults follow the reference setup.
struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string features = "embedding";  // embedding | hfcc
  std::string thresholds = "global";   // global | individual
  bool no_reversed = false;
  bool no_pos_loss = false;

  double seg_len_s = 0.25;
  double train_overlap_s = 0.05;
  int infer_hop_samples = 256;

  int d_emb = 128;
  int n_cluster = 16;
  int epochs = 60;
  int batch = 32;
  double lr = 0.01;

  double min_duration_fraction = kMinDurationFraction;
  double onset_collar_s = 0.2;
  double offset_collar_s = 0.2;
  double offset_collar_fraction = 0.5;

  SegmentationConfig segmentation() const {
    SegmentationConfig s;
    s.seg_len_s = seg_len_s;
    s.train_overlap_s = train_overlap_s;
    s.infer_hop_samples = infer_hop_samples;
    try {
      s.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    return s;
  }

  TrainConfig training() const {
    TrainConfig t;
    t.d_emb = d_emb;
    t.n_cluster = n_cluster;
    t.lr = lr;
    t.epochs = epochs;
    t.batch = batch;
    t.seed = seed;
    t.reversed = !no_reversed;
    t.pos_loss = !no_pos_loss;
    return t;
  }

  Collars collars() const { return {onset_collar_s, offset_collar_s, offset_collar_fraction}; }

  Representation representation() const {
    if (features == "embedding") return Representation::kEmbedding;
    if (features == "hfcc") return Representation::kHfcc;
    throw ConfigError("--features must be 'embedding' or 'hfcc'");
  }

  ThresholdMode threshold_mode() const {
    if (thresholds == "global") return ThresholdMode::kGlobal;
    if (thresholds == "individual") return ThresholdMode::kPerKeyword;
    throw ConfigError("--thresholds must be 'global' or 'individual'");
  }
};

struct GenToyArgs {
  fs::path out;
  ToyDatasetSpec spec;
  double long_recording_s = 0.0;
};

struct TrainArgs {
  fs::path corpus;
  fs::path out;
};

struct EnrollArgs {
  fs::path corpus;
  fs::path model;
  fs::path out;
};

struct DetectArgs {
  fs::path templates;
  fs::path model;
  fs::path threshold_file;
  fs::path out = "-";
  std::vector<fs::path> audio;
};

struct TuneArgs {
  fs::path templates;
  fs::path model;
  fs::path corpus;
  fs::path out = "-";
};

struct EvalArgs {
  fs::path detections;
  fs::path annotations;
  fs::path threshold_file;
  fs::path out = "-";
};

struct BenchArgs {
  fs::path templates;
  fs::path model;
  fs::path threshold_file;
  std::vector<fs::path> audio;
  fs::path detections_out;
  fs::path out = "-";
};

struct FeaturesArgs {
  fs::path audio;
  fs::path out;
  std::string kind = "logmel";
};

// ---------------------------------------------------------------------------
// Helpers

inline void emit(const fs::path& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text << std::flush;
    return;
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  detail::spill(out, text);
}

inline std::vector<fs::path> expand_audio(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      for (auto& w : detail::sorted_wavs(p)) out.push_back(std::move(w));
    } else {
      if (!fs::exists(p)) throw ConfigError("audio input not found: " + p.string());
      out.push_back(p);
    }
  }
  return out;
}

inline std::vector<Template> load_templates(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("template directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".kwte") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .kwte templates in " + dir.string());
  std::vector<Template> out;
  for (const auto& f : files) out.push_back(read_template(f));
  return out;
}

/// Feature source for the configured representation. `model_storage` keeps
/// the loaded model alive for the returned source.
inline FeatureSource feature_source(const RunConfig& cfg, const fs::path& model_path,
                                    std::optional<EmbeddingModel>& model_storage) {
  FeatureSource src;
  src.kind = cfg.representation();
  src.seg = cfg.segmentation();
  if (src.kind == Representation::kEmbedding) {
    if (model_path.empty()) throw ConfigError("--model is required with --features embedding");
    if (!fs::is_regular_file(model_path)) throw ConfigError("model file not found: " + model_path.string());
    model_storage = read_model(model_path).model;
    src.model = &*model_storage;
  }
  return src;
}

inline Thresholds load_thresholds(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("threshold file not found: " + path.string());
  Json j;
  try {
    j = Json::parse(detail::slurp(path));
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return thresholds_from_json(j);
}

inline void check_threshold_keywords(const Thresholds& t, const std::vector<std::string>& keywords) {
  for (const auto& [k, v] : t.per_keyword)
    if (std::find(keywords.begin(), keywords.end(), k) == keywords.end())
      throw ConfigError("threshold given for unknown keyword '" + k + "'");
  for (const auto& k : keywords)
    if (!t.covers(k)) throw ConfigError("no threshold for keyword '" + k + "'");
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_gen_toy(const RunConfig& cfg, GenToyArgs args) {
  args.spec.seed = cfg.seed;
  args.spec.validate();
  if (args.out.empty()) throw ConfigError("--out is required");
  const CorpusLayout c = gen_toy(args.spec, args.out);
  if (args.long_recording_s > 0.0) {
    ToyDatasetSpec long_spec = args.spec;
    long_spec.seed = cfg.seed + 1;
    ToySynth synth(long_spec);
    const ToyRecording rec = synth.long_recording(args.long_recording_s);
    fs::create_directories(args.out / "long");
    write_wav(args.out / "long" / "long.wav", rec.samples, kSampleRate);
    std::vector<EventAnnotation> events;
    for (const auto& e : rec.events)
      events.push_back({"long.wav", static_cast<double>(e.begin) / kSampleRate, static_cast<double>(e.end) / kSampleRate,
                        synth.patterns()[static_cast<std::size_t>(e.keyword)].name});
    write_annotations(args.out / "long" / "annotations.tsv", events);
  }
  log::info("wrote ", c.keywords.size(), " keywords, ", c.train.size(), " training files, ", c.val.sentences.size(),
            " + ", c.test.sentences.size(), " sentences to ", args.out.string());
  return 0;
}

inline int cmd_train(const RunConfig& cfg, const TrainArgs& args) {
  if (args.out.empty()) throw ConfigError("--out is required");
  const CorpusLayout c = load_corpus(args.corpus);
  const TrainResult r = train_on_corpus(c, cfg.training(), cfg.workers, cfg.segmentation());
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  write_model(args.out, r.model, {{"loss_trace", r.loss_trace}});
  log::info("final loss ", r.loss_trace.empty() ? 0.0 : r.loss_trace.back(), ", scale ", r.model.scale.value);
  return 0;
}

inline int cmd_enroll(const RunConfig& cfg, const EnrollArgs& args) {
  if (args.out.empty()) throw ConfigError("--out is required");
  std::optional<EmbeddingModel> model;
  const FeatureSource src = feature_source(cfg, args.model, model);
  const CorpusLayout c = load_corpus(args.corpus);
  const std::vector<Template> templates = enroll(src, c.train, cfg.workers);
  fs::create_directories(args.out);
  for (std::size_t i = 0; i < templates.size(); ++i)
    write_template(args.out / (c.train[i].keyword + "_" + c.train[i].wav.stem().string() + ".kwte"), templates[i]);
  log::info("enrolled ", templates.size(), " templates (", to_string(src.kind), ")");
  return 0;
}

inline int cmd_detect(const RunConfig& cfg, const DetectArgs& args) {
  std::optional<EmbeddingModel> model;
  const FeatureSource src = feature_source(cfg, args.model, model);
  const std::vector<Template> templates = load_templates(args.templates);
  const Thresholds thresholds = load_thresholds(args.threshold_file);
  check_threshold_keywords(thresholds, template_keywords(templates));
  const auto files = score_files(src, templates, expand_audio(args.audio), cfg.workers);
  emit(args.out, format_detections(detections_from_candidates(files, thresholds, cfg.min_duration_fraction)));
  return 0;
}

inline int cmd_tune(const RunConfig& cfg, const TuneArgs& args) {
  std::optional<EmbeddingModel> model;
  const FeatureSource src = feature_source(cfg, args.model, model);
  const ThresholdMode mode = cfg.threshold_mode();
  const std::vector<Template> templates = load_templates(args.templates);
  const CorpusLayout c = load_corpus(args.corpus);
  const auto files = score_files(src, templates, c.val.sentences, cfg.workers);
  const TuneResult r =
      tune_thresholds(files, c.val.annotations, template_keywords(templates), mode, cfg.min_duration_fraction, cfg.collars());
  Json j = thresholds_json(r.thresholds);
  j["mode"] = to_string(mode);
  j["validation"] = metrics_json(r.report);
  emit(args.out, j.dump(2) + "\n");
  return 0;
}

inline int cmd_eval(const RunConfig& cfg, const EvalArgs& args) {
  const auto dets = read_detections(args.detections);
  const auto refs = read_annotations(args.annotations);
  const MetricsReport r = micro_f1(match_events(refs, dets, cfg.collars()));
  Json j = metrics_json(r);
  j["mode"] = nullptr;
  j["thresholds"] = nullptr;
  if (!args.threshold_file.empty()) {
    const Json t = thresholds_json(load_thresholds(args.threshold_file));
    j["mode"] = t.at("mode");
    j["thresholds"] = t.contains("threshold") ? t.at("threshold") : t.at("thresholds");
  }
  emit(args.out, j.dump(2) + "\n");
  return 0;
}

inline int cmd_bench(const RunConfig& cfg, const BenchArgs& args) {
  std::optional<EmbeddingModel> model;
  const FeatureSource src = feature_source(cfg, args.model, model);
  const std::vector<Template> templates = load_templates(args.templates);
  const Thresholds thresholds =
      args.threshold_file.empty() ? Thresholds::uniform(-std::numeric_limits<double>::infinity())
                                  : load_thresholds(args.threshold_file);
  check_threshold_keywords(thresholds, template_keywords(templates));
  const auto files = expand_audio(args.audio);

  double audio_s = 0.0;
  for (const auto& f : files) {
    const WavData w = read_wav(f);
    audio_s += static_cast<double>(w.interleaved.size() / static_cast<std::size_t>(w.channels)) / w.sample_rate;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto scored = score_files(src, templates, files, cfg.workers);
  const auto dets = detections_from_candidates(scored, thresholds, cfg.min_duration_fraction);
  const double wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!args.detections_out.empty()) emit(args.detections_out, format_detections(dets));
  const Json j{{"audio_s", audio_s},
               {"wall_s", wall_s},
               {"rtf", audio_s > 0.0 && wall_s > 0.0 ? audio_s / wall_s : 0.0},
               {"workers", cfg.workers},
               {"templates", templates.size()},
               {"files", files.size()},
               {"detections", dets.size()},
               {"features", to_string(src.kind)}};
  emit(args.out, j.dump(2) + "\n");
  return 0;
}

inline int cmd_features(const RunConfig& cfg, const FeaturesArgs& args) {
  if (args.out.empty()) throw ConfigError("--out is required");
  const AudioClip clip = load_audio(args.audio);
  FeatureMatrix f;
  if (args.kind == "hfcc") {
    f = hfcc(clip);
  } else if (args.kind == "logmel") {
    (void)cfg;
    f.frames = logmel_frames(clip.samples);
    f.frame_step_s = static_cast<double>(LogMelConfig::kHop) / kSampleRate;
    f.kind = FeatureKind::kLogMel;
  } else {
    throw ConfigError("--kind must be 'logmel' or 'hfcc'");
  }
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  write_features(args.out, f, clip.source_id);
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses and runs one command line; returns the process exit status.
inline int run(int argc, const char* const* argv) {
  CLI::App app{"Few-shot keyword spotting: embeddings, templates and sub-sequence DTW", "kws"};
  app.set_config("--config", "", "Read options from a TOML/INI file");
  app.fallthrough();
  app.require_subcommand(1);

  RunConfig cfg;
  cfg.workers = static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
  bool dump_config = false;
  app.add_flag("--dump-config", dump_config, "Print the effective configuration and exit")->configurable(false);
  app.add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  app.add_option("--workers", cfg.workers, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--features", cfg.features, "Template representation")
      ->check(CLI::IsMember({"embedding", "hfcc"}))
      ->capture_default_str();
  app.add_option("--thresholds", cfg.thresholds, "Threshold mode")
      ->check(CLI::IsMember({"global", "individual"}))
      ->capture_default_str();
  app.add_flag("--no-reversed", cfg.no_reversed, "Train without reversed-segment classes");
  app.add_flag("--no-pos-loss", cfg.no_pos_loss, "Train with the keyword loss only");
  app.add_option("--seg-len", cfg.seg_len_s, "Segment length in seconds")->capture_default_str();
  app.add_option("--train-overlap", cfg.train_overlap_s, "Training segment overlap in seconds")->capture_default_str();
  app.add_option("--infer-hop", cfg.infer_hop_samples, "Inference segment hop in samples")->capture_default_str();
  app.add_option("--d-emb", cfg.d_emb, "Embedding dimension")->capture_default_str();
  app.add_option("--n-cluster", cfg.n_cluster, "Sub-cluster centres per cell")->capture_default_str();
  app.add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
  app.add_option("--batch", cfg.batch, "Batch size")->capture_default_str();
  app.add_option("--lr", cfg.lr, "Adam learning rate")->capture_default_str();
  app.add_option("--min-duration-fraction", cfg.min_duration_fraction,
                 "Minimum detection length relative to the template's sample")
      ->capture_default_str();
  app.add_option("--onset-collar", cfg.onset_collar_s, "Onset collar in seconds")->capture_default_str();
  app.add_option("--offset-collar", cfg.offset_collar_s, "Minimum offset collar in seconds")->capture_default_str();
  app.add_option("--offset-collar-fraction", cfg.offset_collar_fraction,
                 "Offset collar as a fraction of the reference duration")
      ->capture_default_str();

  GenToyArgs gen;
  auto* sc_gen = app.add_subcommand("gen-toy", "Write a synthetic toy corpus");
  sc_gen->add_option("--out", gen.out, "Output directory")->required();
  sc_gen->add_option("--n-keywords", gen.spec.n_keywords, "Number of keywords")->capture_default_str();
  sc_gen->add_option("--shots", gen.spec.shots, "Training samples per keyword")->capture_default_str();
  sc_gen->add_option("--n-sentences", gen.spec.n_sentences, "Sentences per evaluation split")->capture_default_str();
  sc_gen->add_option("--n-noise-files", gen.spec.n_noise_files, "Background noise recordings")->capture_default_str();
  sc_gen->add_option("--noise-level", gen.spec.noise_level, "Background noise std")->capture_default_str();
  sc_gen->add_option("--long-recording", gen.long_recording_s, "Also write long/long.wav of this many seconds")
      ->capture_default_str();

  TrainArgs train;
  auto* sc_train = app.add_subcommand("train", "Train the toy embedder");
  sc_train->add_option("--corpus", train.corpus, "Corpus directory")->required();
  sc_train->add_option("--out", train.out, "Model file (.kwem)")->required();

  EnrollArgs enr;
  auto* sc_enroll = app.add_subcommand("enroll", "Build one template per training sample");
  sc_enroll->add_option("--corpus", enr.corpus, "Corpus directory")->required();
  sc_enroll->add_option("--model", enr.model, "Model file (embedding features)");
  sc_enroll->add_option("--out", enr.out, "Template directory")->required();

  DetectArgs det;
  auto* sc_detect = app.add_subcommand("detect", "Search recordings for keywords");
  sc_detect->add_option("--templates", det.templates, "Template directory")->required();
  sc_detect->add_option("--model", det.model, "Model file (embedding features)");
  sc_detect->add_option("--threshold-file", det.threshold_file, "Thresholds JSON")->required();
  sc_detect->add_option("--out", det.out, "Detections TSV ('-' for stdout)")->capture_default_str();
  sc_detect->add_option("audio", det.audio, "WAV files or directories")->required();

  TuneArgs tune;
  auto* sc_tune = app.add_subcommand("tune", "Choose thresholds on the validation split");
  sc_tune->add_option("--templates", tune.templates, "Template directory")->required();
  sc_tune->add_option("--model", tune.model, "Model file (embedding features)");
  sc_tune->add_option("--corpus", tune.corpus, "Corpus directory")->required();
  sc_tune->add_option("--out", tune.out, "Thresholds JSON ('-' for stdout)")->capture_default_str();

  EvalArgs ev;
  auto* sc_eval = app.add_subcommand("eval", "Score detections against annotations");
  sc_eval->add_option("--detections", ev.detections, "Detections TSV")->required();
  sc_eval->add_option("--annotations", ev.annotations, "Annotations TSV")->required();
  sc_eval->add_option("--threshold-file", ev.threshold_file, "Thresholds JSON to record in the report");
  sc_eval->add_option("--out", ev.out, "Metrics JSON ('-' for stdout)")->capture_default_str();

  BenchArgs bench;
  auto* sc_bench = app.add_subcommand("bench", "Time detection against audio duration");
  sc_bench->add_option("--templates", bench.templates, "Template directory")->required();
  sc_bench->add_option("--model", bench.model, "Model file (embedding features)");
  sc_bench->add_option("--threshold-file", bench.threshold_file, "Thresholds JSON (default: keep every candidate)");
  sc_bench->add_option("--detections-out", bench.detections_out, "Also write the detections TSV");
  sc_bench->add_option("--out", bench.out, "Timing report JSON ('-' for stdout)")->capture_default_str();
  sc_bench->add_option("audio", bench.audio, "WAV files or directories");

  FeaturesArgs feat;
  auto* sc_feat = app.add_subcommand("features", "Dump log-Mel or HFCC features of a recording");
  sc_feat->add_option("--audio", feat.audio, "WAV file")->required();
  sc_feat->add_option("--out", feat.out, "Feature file (.kwfe)")->required();
  sc_feat->add_option("--kind", feat.kind, "logmel or hfcc")->check(CLI::IsMember({"logmel", "hfcc"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (dump_config) {
    std::istringstream dumped(app.config_to_str(true, false));
    for (std::string line; std::getline(dumped, line);)
      if (line.size() < 3 || line.compare(line.size() - 3, 3, "=\"\"") != 0) std::cout << line << '\n';
    return 0;
  }

  try {
    if (*sc_gen) return cmd_gen_toy(cfg, gen);
    if (*sc_train) return cmd_train(cfg, train);
    if (*sc_enroll) return cmd_enroll(cfg, enr);
    if (*sc_detect) return cmd_detect(cfg, det);
    if (*sc_tune) return cmd_tune(cfg, tune);
    if (*sc_eval) return cmd_eval(cfg, ev);
    if (*sc_bench) return cmd_bench(cfg, bench);
    if (*sc_feat) return cmd_features(cfg, feat);
  } catch (const ConfigError& e) {
    log::error(e.what());
    return 2;
  } catch (const LayoutError& e) {
    log::error(e.what());
    return 2;
  } catch (const ParameterError& e) {
    log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log::error(e.what());
    return 1;
  }
  return 2;
}

inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"kws"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace kws::cli
