// Command-line frontend: synthetic corpus generation, training, evaluation,
// pitch-shift sweeps, and the numeric self-check. Every command resolves a
// full run configuration (model + train + corpus), logs it verbatim into its
// report, and is deterministic given that configuration.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
// failure (including a failing self-check).

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fpformant/control.hpp"
#include "fpformant/data.hpp"
#include "fpformant/error.hpp"
#include "fpformant/metrics.hpp"
#include "fpformant/model.hpp"
#include "fpformant/selfcheck.hpp"
#include "fpformant/training.hpp"

namespace {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

// ---- run configuration ---------------------------------------------------

struct RunConfig {
  fpf::ModelConfig model;
  fpf::TrainConfig train;
  fpf::CorpusConfig corpus;

  /// Cross-section consistency on top of the per-section validators.
  void validate() const {
    model.validate();
    train.validate();
    corpus.validate();
    if (model.n_mel_bins != corpus.n_mel_bins) {
      throw fpf::ConfigError(
          "run config: model.n_mel_bins " + std::to_string(model.n_mel_bins) +
          " != corpus.n_mel_bins " + std::to_string(corpus.n_mel_bins));
    }
    if (model.vocab_size < corpus.total_vocab()) {
      throw fpf::ConfigError(
          "run config: model.vocab_size " + std::to_string(model.vocab_size) +
          " must cover corpus voiced ids plus the unvoiced id (" +
          std::to_string(corpus.total_vocab()) + ")");
    }
    if (model.n_speakers < corpus.n_speakers) {
      throw fpf::ConfigError(
          "run config: model.n_speakers " + std::to_string(model.n_speakers) +
          " < corpus.n_speakers " + std::to_string(corpus.n_speakers));
    }
  }
};

json run_config_to_json(const RunConfig& rc) {
  json j;
  j["model"] = json::parse(fpf::model_config_to_json(rc.model));
  j["train"] = json::parse(fpf::train_config_to_json(rc.train));
  j["corpus"] = json::parse(fpf::corpus_config_to_json(rc.corpus));
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) {
    throw fpf::ConfigError("run config: top level must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "model" && key != "train" && key != "corpus") {
      throw fpf::ConfigError("run config: unknown section \"" + key + "\"");
    }
  }
  RunConfig rc;
  if (j.contains("model")) rc.model = fpf::model_config_from_json(j["model"].dump());
  if (j.contains("train")) rc.train = fpf::train_config_from_json(j["train"].dump());
  if (j.contains("corpus")) rc.corpus = fpf::corpus_config_from_json(j["corpus"].dump());
  return rc;
}

/// Applies one "--set section.key=value" override onto the config JSON.
/// Values parse as JSON scalars (numbers, booleans) with plain-string
/// fallback; the strict section parsers reject unknown keys afterwards.
void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw fpf::ConfigError("--set expects section.key=value, got \"" +
                           assignment + "\"");
  }
  const std::string key_path = assignment.substr(0, eq);
  const std::string value_text = assignment.substr(eq + 1);
  const auto dot = key_path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == key_path.size() ||
      key_path.find('.', dot + 1) != std::string::npos) {
    throw fpf::ConfigError("--set key must be section.key, got \"" + key_path +
                           "\"");
  }
  const std::string section = key_path.substr(0, dot);
  const std::string key = key_path.substr(dot + 1);
  if (section != "model" && section != "train" && section != "corpus") {
    throw fpf::ConfigError("--set: unknown section \"" + section + "\"");
  }
  json value;
  try {
    value = json::parse(value_text);
    if (!value.is_number() && !value.is_boolean() && !value.is_string()) {
      value = value_text;  // arrays/objects are not config scalars
    }
  } catch (const json::exception&) {
    value = value_text;
  }
  config[section][key] = value;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fpf::IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) throw fpf::IoError("cannot read " + path);
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fpf::IoError("cannot open " + path + " for writing");
  out << content;
  if (!out.good()) throw fpf::IoError("cannot write " + path);
}

/// Resolves the effective configuration: defaults (or `base`), then the
/// --config file, then --set overrides, then --seed (which pins both the
/// corpus and training seeds).
RunConfig resolve_config(const json& base, const std::string& config_path,
                         const std::vector<std::string>& sets,
                         std::optional<std::uint64_t> seed) {
  json merged = base;
  if (!config_path.empty()) {
    json from_file;
    try {
      from_file = json::parse(read_text_file(config_path));
    } catch (const json::exception& e) {
      throw fpf::ConfigError("config file " + config_path + ": " + e.what());
    }
    if (!from_file.is_object()) {
      throw fpf::ConfigError("config file " + config_path +
                             ": top level must be a JSON object");
    }
    for (const auto& [section, body] : from_file.items()) {
      if (section != "model" && section != "train" && section != "corpus") {
        throw fpf::ConfigError("config file " + config_path +
                               ": unknown section \"" + section + "\"");
      }
      if (!body.is_object()) {
        throw fpf::ConfigError("config file " + config_path + ": section \"" +
                               section + "\" must be an object");
      }
      for (const auto& [key, value] : body.items()) {
        merged[section][key] = value;
      }
    }
  }
  for (const std::string& assignment : sets) apply_override(merged, assignment);
  if (seed.has_value()) {
    merged["corpus"]["seed"] = *seed;
    merged["train"]["seed"] = *seed;
  }
  RunConfig rc = run_config_from_json(merged);
  rc.validate();
  return rc;
}

// ---- report plumbing ------------------------------------------------------

json report_skeleton(const std::string& command, const RunConfig& rc) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = command;
  j["config"] = run_config_to_json(rc);
  return j;
}

/// report.json -> report.txt (or append .txt when there is no .json suffix).
std::string text_report_path(const std::string& json_path) {
  const std::string suffix = ".json";
  if (json_path.size() > suffix.size() &&
      json_path.compare(json_path.size() - suffix.size(), suffix.size(),
                        suffix) == 0) {
    return json_path.substr(0, json_path.size() - suffix.size()) + ".txt";
  }
  return json_path + ".txt";
}

void write_report(const std::string& json_path, const json& report,
                  const std::string& text_body) {
  write_text_file(json_path, report.dump(2) + "\n");
  write_text_file(text_report_path(json_path), text_body);
}

std::string format_line(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

// ---- mel dumps -------------------------------------------------------------

/// Binary PGM (P5) with mel bins on the vertical axis, lowest bin at the
/// bottom, one column per frame; values min-max normalized to 0..255.
void write_mel_pgm(const fpf::MelSpectrogram& mel, const std::string& path) {
  if (mel.frames == 0 || mel.bins == 0) {
    throw fpf::InputError("mel dump: empty spectrogram");
  }
  double lo = mel.at(0, 0), hi = mel.at(0, 0);
  for (std::size_t t = 0; t < mel.frames; ++t) {
    for (std::size_t b = 0; b < mel.bins; ++b) {
      lo = std::min(lo, mel.at(t, b));
      hi = std::max(hi, mel.at(t, b));
    }
  }
  const double span = hi > lo ? hi - lo : 1.0;
  std::string body = "P5\n" + std::to_string(mel.frames) + " " +
                     std::to_string(mel.bins) + "\n255\n";
  body.reserve(body.size() + mel.frames * mel.bins);
  for (std::size_t row = 0; row < mel.bins; ++row) {
    const std::size_t bin = mel.bins - 1 - row;  // low frequencies at bottom
    for (std::size_t t = 0; t < mel.frames; ++t) {
      double v = (mel.at(t, bin) - lo) / span;
      body.push_back(static_cast<char>(
          static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  write_text_file(path, body);
}

// ---- commands --------------------------------------------------------------

int cmd_gen_data(const RunConfig& rc, const std::string& out_path,
                 const std::string& text_export) {
  auto corpus = fpf::generate_corpus(rc.corpus);
  fpf::save_corpus(corpus, rc.corpus, out_path);
  if (!text_export.empty()) {
    fpf::export_corpus_text(corpus, rc.corpus, text_export);
  }
  std::size_t frames = 0;
  for (const auto& utt : corpus) frames += utt.total_frames();
  std::cout << "wrote " << corpus.size() << " utterances (" << frames
            << " frames, " << rc.corpus.n_mel_bins << " mel bins) to "
            << out_path << "\n";
  if (!text_export.empty()) {
    std::cout << "text export: " << text_export << "\n";
  }
  return 0;
}

int cmd_train(RunConfig rc, const std::string& corpus_path,
              const std::string& out_path, const std::string& resume_path) {
  fpf::LoadedCorpus loaded = fpf::load_corpus(corpus_path);
  rc.corpus = loaded.config;  // the file's generation settings govern
  rc.validate();

  fpf::Model model(rc.model);
  fpf::OptimizerState opt;
  std::size_t start_iteration = 0;
  if (resume_path.empty()) {
    model.init(rc.train.seed);
    model.set_pitch_stats(
        fpf::compute_pitch_stats(loaded.utterances, rc.corpus.n_speakers));
    opt = fpf::make_optimizer_state(model);
  } else {
    fpf::Checkpoint ck = fpf::load_checkpoint(resume_path);
    if (fpf::model_config_to_json(ck.model_config) !=
        fpf::model_config_to_json(rc.model)) {
      throw fpf::ConfigError(
          "resume: model configuration is fixed by the checkpoint; remove "
          "model overrides or match them to it");
    }
    model = std::move(ck.model);
    opt = std::move(ck.opt);
    start_iteration = ck.iteration;
  }

  fpf::TrainResult result =
      fpf::train(model, loaded.utterances, rc.train, opt, start_iteration);
  fpf::save_checkpoint(out_path, model, rc.train, opt, result.end_iteration);

  json report = report_skeleton("train", rc);
  json log = json::array();
  for (const auto& entry : result.log) {
    log.push_back({{"iteration", entry.iteration},
                   {"learning_rate", entry.learning_rate},
                   {"total", entry.total},
                   {"spec_term", entry.spec_term},
                   {"pitch_term", entry.pitch_term},
                   {"duration_term", entry.duration_term}});
  }
  report["results"] = {
      {"corpus_path", corpus_path},
      {"checkpoint_path", out_path},
      {"resumed_from", resume_path},
      {"start_iteration", start_iteration},
      {"end_iteration", result.end_iteration},
      {"loss_log", std::move(log)},
  };

  std::ostringstream text;
  text << "train report\n"
       << "  corpus:      " << corpus_path << "\n"
       << "  checkpoint:  " << out_path << "\n"
       << "  iterations:  " << start_iteration << " -> "
       << result.end_iteration << "\n";
  if (!result.log.empty()) {
    report["results"]["initial_total"] = result.log.front().total;
    report["results"]["final_total"] = result.log.back().total;
    text << format_line("  initial loss %-12.6f final loss %-12.6f\n",
                        result.log.front().total, result.log.back().total);
    text << "\n  iteration        lr        total         spec        pitch"
            "     duration\n";
    const std::size_t stride = std::max<std::size_t>(result.log.size() / 20, 1);
    std::vector<std::size_t> picks;
    for (std::size_t i = 0; i < result.log.size(); i += stride) picks.push_back(i);
    if (picks.back() != result.log.size() - 1) picks.push_back(result.log.size() - 1);
    for (std::size_t i : picks) {
      const auto& e = result.log[i];
      text << format_line("  %9zu  %.6f  %11.6f  %11.6f  %11.6f  %11.6f\n",
                          e.iteration, e.learning_rate, e.total, e.spec_term,
                          e.pitch_term, e.duration_term);
    }
  }
  const std::string report_path = out_path + ".report.json";
  write_report(report_path, report, text.str());

  std::cout << "trained to iteration " << result.end_iteration << "; ";
  if (!result.log.empty()) {
    std::cout << "loss " << result.log.front().total << " -> "
              << result.log.back().total << "; ";
  }
  std::cout << "checkpoint " << out_path << "; report " << report_path << "\n";
  return 0;
}

std::size_t eval_mcd_order(std::size_t bins) {
  return std::min<std::size_t>(13, bins - 1);
}

int cmd_eval(const std::string& checkpoint_path,
             const std::string& corpus_path, const std::string& out_path) {
  fpf::Checkpoint ck = fpf::load_checkpoint(checkpoint_path);
  fpf::LoadedCorpus loaded = fpf::load_corpus(corpus_path);
  if (loaded.utterances.empty()) {
    throw fpf::InputError("eval: corpus has no utterances");
  }
  RunConfig rc;
  rc.model = ck.model_config;
  rc.train = ck.train_config;
  rc.corpus = loaded.config;
  rc.validate();

  const std::size_t mcd_k = eval_mcd_order(rc.corpus.n_mel_bins);
  double sum_total = 0.0, sum_spec = 0.0, sum_pitch = 0.0, sum_duration = 0.0;
  double sum_mcd = 0.0, sum_ffe = 0.0;
  for (const auto& utt : loaded.utterances) {
    fpf::ForwardInput in;
    in.phoneme_ids = utt.phoneme_ids;
    in.speaker_id = utt.speaker_id;
    in.gt_durations = utt.durations_frames;
    in.gt_pitch_hz = utt.phoneme_pitch_hz;
    fpf::ForwardOptions fo;
    fo.use_gt_duration = true;
    fo.use_gt_pitch = true;
    fpf::ForwardOutput out = ck.model.forward(in, fo);

    fpf::TrainTarget target =
        fpf::make_train_target(utt, ck.model.pitch_stats());
    fpf::LossResult loss = fpf::compute_loss(out, target, rc.train);
    sum_total += loss.breakdown.total;
    const double inv_tm = 1.0 / static_cast<double>(loss.breakdown.frames *
                                                    loss.breakdown.bins);
    sum_spec += (loss.breakdown.spec_losses[0] + loss.breakdown.spec_losses[1] +
                 loss.breakdown.spec_losses[2]) *
                inv_tm;
    sum_pitch += loss.breakdown.pitch_loss;
    sum_duration += loss.breakdown.duration_loss;

    fpf::SynthesisOptions so;
    so.use_gt_duration = true;
    so.use_gt_pitch = true;
    fpf::MelSpectrogram synth = fpf::synthesize(ck.model, utt, so);
    sum_mcd += fpf::mcd(synth, utt.target_mel, mcd_k);
    fpf::F0Track measured = fpf::extract_f0_synthetic(synth, rc.corpus);
    fpf::F0Track reference = fpf::expand_pitch_to_frames(utt);
    sum_ffe += fpf::ffe(reference, measured);
  }
  const double inv_n = 1.0 / static_cast<double>(loaded.utterances.size());

  json report = report_skeleton("eval", rc);
  report["results"] = {
      {"checkpoint_path", checkpoint_path},
      {"corpus_path", corpus_path},
      {"checkpoint_iteration", ck.iteration},
      {"n_utterances", loaded.utterances.size()},
      {"mcd_coefficients", mcd_k},
      {"mean_total_loss", sum_total * inv_n},
      {"mean_spec_loss", sum_spec * inv_n},
      {"mean_pitch_loss", sum_pitch * inv_n},
      {"mean_duration_loss", sum_duration * inv_n},
      {"mean_mcd_db", sum_mcd * inv_n},
      {"mean_ffe_percent", sum_ffe * inv_n},
  };

  std::ostringstream text;
  text << "eval report (teacher-forced)\n"
       << "  checkpoint:  " << checkpoint_path << " (iteration "
       << ck.iteration << ")\n"
       << "  corpus:      " << corpus_path << " ("
       << loaded.utterances.size() << " utterances)\n"
       << format_line("  mean total loss     %12.6f\n", sum_total * inv_n)
       << format_line("  mean spec loss      %12.6f\n", sum_spec * inv_n)
       << format_line("  mean pitch loss     %12.6f\n", sum_pitch * inv_n)
       << format_line("  mean duration loss  %12.6f\n", sum_duration * inv_n)
       << format_line("  mean MCD (dB, K=%zu) %11.6f\n", mcd_k,
                      sum_mcd * inv_n)
       << format_line("  mean FFE (%%)        %12.6f\n", sum_ffe * inv_n);
  write_report(out_path, report, text.str());
  std::cout << "eval report written to " << out_path << "\n";
  return 0;
}

std::vector<double> parse_lambda_list(const std::string& text) {
  std::vector<double> lambdas;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find(',', begin);
    if (end == std::string::npos) end = text.size();
    const std::string item = text.substr(begin, end - begin);
    if (item.empty()) {
      throw fpf::InputError("--lambda: empty entry in \"" + text + "\"");
    }
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(item, &used);
    } catch (const std::exception&) {
      throw fpf::InputError("--lambda: cannot parse \"" + item + "\"");
    }
    if (used != item.size()) {
      throw fpf::InputError("--lambda: trailing junk in \"" + item + "\"");
    }
    lambdas.push_back(value);
    begin = end + 1;
    if (end == text.size()) break;
  }
  if (lambdas.empty()) throw fpf::InputError("--lambda: empty list");
  return lambdas;
}

std::string lambda_file_tag(double lambda) {
  std::string tag = format_line("%+g", lambda);
  for (char& c : tag) {
    if (c == '.') c = 'p';
  }
  return tag;
}

int cmd_sweep(const std::string& checkpoint_path,
              const std::string& corpus_path, const std::string& out_path,
              const std::string& lambda_text, const std::string& dump_dir) {
  fpf::Checkpoint ck = fpf::load_checkpoint(checkpoint_path);
  fpf::LoadedCorpus loaded = fpf::load_corpus(corpus_path);
  RunConfig rc;
  rc.model = ck.model_config;
  rc.train = ck.train_config;
  rc.corpus = loaded.config;
  rc.validate();

  fpf::SweepOptions opts;
  if (!lambda_text.empty()) opts.lambdas = parse_lambda_list(lambda_text);
  opts.corpus = rc.corpus;
  opts.mcd_coefficients = eval_mcd_order(rc.corpus.n_mel_bins);
  fpf::SweepResult sw = fpf::sweep(ck.model, loaded.utterances, opts);

  json report = report_skeleton("sweep", rc);
  json aggregates = json::array();
  for (const auto& a : sw.per_lambda) {
    aggregates.push_back({{"lambda", a.lambda},
                          {"mean_ffe_percent", a.mean_ffe_percent},
                          {"mean_mcd_db", a.mean_mcd_db},
                          {"mean_formant_drift", a.mean_formant_drift},
                          {"mean_excitation_drift", a.mean_excitation_drift}});
  }
  json rows = json::array();
  for (const auto& r : sw.rows) {
    rows.push_back({{"lambda", r.lambda},
                    {"utterance_index", r.utterance_index},
                    {"ffe_percent", r.ffe_percent},
                    {"mcd_db", r.mcd_db},
                    {"formant_drift", r.formant_drift},
                    {"excitation_drift", r.excitation_drift}});
  }
  report["results"] = {
      {"checkpoint_path", checkpoint_path},
      {"corpus_path", corpus_path},
      {"checkpoint_iteration", ck.iteration},
      {"n_utterances", loaded.utterances.size()},
      {"mcd_coefficients", opts.mcd_coefficients},
      {"per_lambda", std::move(aggregates)},
      {"rows", std::move(rows)},
  };

  std::ostringstream text;
  text << "pitch-shift sweep (teacher-forced, " << loaded.utterances.size()
       << " utterances)\n"
       << "  lambda   FFE(%)    MCD(dB)   formant-drift  excitation-drift\n";
  for (const auto& a : sw.per_lambda) {
    text << format_line("  %+6.1f  %7.2f  %9.4f  %13.3e  %16.4f\n", a.lambda,
                        a.mean_ffe_percent, a.mean_mcd_db,
                        a.mean_formant_drift, a.mean_excitation_drift);
  }

  if (!dump_dir.empty()) {
    std::filesystem::create_directories(dump_dir);
    const fpf::PhonemeUtterance& probe = loaded.utterances.front();
    json dumps = json::array();
    for (double lambda : opts.lambdas) {
      fpf::SynthesisOptions so;
      so.lambda_semitones = lambda;
      so.use_gt_duration = true;
      so.use_gt_pitch = true;
      fpf::MelSpectrogram mel = fpf::synthesize(ck.model, probe, so);
      const std::string path = (std::filesystem::path(dump_dir) /
                                ("mel_lambda" + lambda_file_tag(lambda) + ".pgm"))
                                   .string();
      write_mel_pgm(mel, path);
      dumps.push_back(path);
    }
    report["results"]["mel_dumps"] = std::move(dumps);
    text << "  mel dumps (first utterance) in " << dump_dir << "\n";
  }

  write_report(out_path, report, text.str());
  std::cout << text.str();
  std::cout << "sweep report written to " << out_path << "\n";
  return 0;
}

int cmd_selfcheck(std::size_t seeds, bool inject_fault) {
  fpf::SelfCheckOptions opts;
  opts.gradient_seeds = seeds;
  opts.inject_gradient_fault = inject_fault;
  fpf::SelfCheckReport report = fpf::run_selfcheck(opts, &std::cout);
  return report.all_passed() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FastPitchFormant-style text-to-spectrogram toolkit"};
  app.require_subcommand(0, 1);

  bool dump_defaults = false;
  app.add_flag("--dump-defaults", dump_defaults,
               "print the default run configuration as JSON and exit");

  // shared configuration flags (registered per subcommand)
  struct Shared {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
  };
  auto add_shared = [](CLI::App* cmd, Shared& shared) {
    cmd->add_option("--config", shared.config_path,
                    "JSON run configuration file (sections model/train/corpus)");
    cmd->add_option("--set", shared.sets,
                    "override one config value, e.g. --set train.seed=7");
    cmd->add_option("--seed", shared.seed,
                    "set both corpus.seed and train.seed");
  };

  Shared gen_shared;
  std::string gen_out, gen_text;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_shared(gen, gen_shared);
  gen->add_option("--out", gen_out, "corpus output path")->required();
  gen->add_option("--export-text", gen_text,
                  "also write a human-readable JSON inspection copy");

  Shared train_shared;
  std::string train_corpus, train_out, train_resume;
  CLI::App* train = app.add_subcommand("train", "train a model on a corpus");
  add_shared(train, train_shared);
  train->add_option("--corpus", train_corpus, "corpus file from gen-data")
      ->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--resume", train_resume,
                    "checkpoint to continue training from");

  std::string eval_ckpt, eval_corpus, eval_out;
  CLI::App* eval = app.add_subcommand(
      "eval", "teacher-forced loss and metric summary on a corpus");
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--corpus", eval_corpus, "corpus file")->required();
  eval->add_option("--out", eval_out, "report JSON path")->required();

  std::string sweep_ckpt, sweep_corpus, sweep_out, sweep_lambda, sweep_dump;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "pitch-shift sweep with FFE/MCD and decomposition drift");
  sweep->add_option("--checkpoint", sweep_ckpt, "trained checkpoint")
      ->required();
  sweep->add_option("--corpus", sweep_corpus, "corpus file")->required();
  sweep->add_option("--out", sweep_out, "report JSON path")->required();
  sweep->add_option("--lambda", sweep_lambda,
                    "comma-separated semitone shifts (default -8,-6,-4,0,4,6,8)");
  sweep->add_option("--dump-mels", sweep_dump,
                    "directory for per-shift PGM mel images of utterance 0");

  std::size_t selfcheck_seeds = 100;
  bool selfcheck_fault = false;
  CLI::App* selfcheck = app.add_subcommand(
      "selfcheck", "gradient-check suite and metric oracles");
  selfcheck->add_option("--seeds", selfcheck_seeds,
                        "random seeds per gradient section");
  selfcheck->add_flag("--inject-fault", selfcheck_fault,
                      "plant a wrong gradient the suite must detect");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors are exit code 1
  }

  try {
    if (dump_defaults) {
      std::cout << run_config_to_json(RunConfig{}).dump(2) << "\n";
      return 0;
    }
    if (gen->parsed()) {
      RunConfig rc = resolve_config(run_config_to_json(RunConfig{}),
                                    gen_shared.config_path, gen_shared.sets,
                                    gen_shared.seed);
      return cmd_gen_data(rc, gen_out, gen_text);
    }
    if (train->parsed()) {
      json base = run_config_to_json(RunConfig{});
      if (!train_resume.empty()) {
        // resume continues the checkpoint's own training settings unless
        // explicitly overridden
        fpf::Checkpoint ck = fpf::load_checkpoint(train_resume);
        RunConfig from_ck;
        from_ck.model = ck.model_config;
        from_ck.train = ck.train_config;
        base = run_config_to_json(from_ck);
      }
      RunConfig rc = resolve_config(base, train_shared.config_path,
                                    train_shared.sets, train_shared.seed);
      return cmd_train(rc, train_corpus, train_out, train_resume);
    }
    if (eval->parsed()) {
      return cmd_eval(eval_ckpt, eval_corpus, eval_out);
    }
    if (sweep->parsed()) {
      return cmd_sweep(sweep_ckpt, sweep_corpus, sweep_out, sweep_lambda,
                       sweep_dump);
    }
    if (selfcheck->parsed()) {
      return cmd_selfcheck(selfcheck_seeds, selfcheck_fault);
    }
    std::cerr << app.help();
    return 1;
  } catch (const fpf::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const fpf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
