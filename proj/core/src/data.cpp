#include "fpformant/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "container.hpp"
#include "seed_mix.hpp"
#include "json_util.hpp"

namespace fpf {

namespace {

constexpr double kExcitationAmplitude = 2.0;
constexpr double kExcitationSigma = 0.8;
// A residual peak must reach half the excitation amplitude to count as
// voiced evidence.
constexpr double kProminenceThreshold = 0.5 * kExcitationAmplitude;

constexpr std::uint64_t kFormantTag = 0xf0a1f0a1f0a1f0a1ULL;
constexpr std::uint64_t kSpeakerTag = 0x5bee5bee5bee5beeULL;
constexpr std::uint64_t kCorpusTag = 0xc0a9c0a9c0a9c0a9ULL;

using seedmix::mix_seed;
using seedmix::splitmix64;

double gaussian_bump(double x, double center, double sigma) {
  double d = (x - center) / sigma;
  return std::exp(-0.5 * d * d);
}

}  // namespace

void CorpusConfig::validate() const {
  if (n_utterances == 0)
    throw ConfigError("corpus config: n_utterances must be positive");
  if (vocab_size == 0)
    throw ConfigError("corpus config: vocab_size must be positive");
  if (n_speakers == 0)
    throw ConfigError("corpus config: n_speakers must be positive");
  if (n_mel_bins < 2)
    throw ConfigError("corpus config: n_mel_bins must be at least 2");
  if (!(f_min_hz > 0.0))
    throw ConfigError("corpus config: f_min_hz must be positive");
  if (!(f_max_hz > f_min_hz))
    throw ConfigError("corpus config: f_max_hz must exceed f_min_hz");
  if (min_phonemes == 0 || min_phonemes > max_phonemes)
    throw ConfigError(
        "corpus config: phoneme count range [min_phonemes, max_phonemes] is "
        "invalid");
  if (min_duration_frames == 0 || min_duration_frames > max_duration_frames)
    throw ConfigError(
        "corpus config: duration range [min_duration_frames, "
        "max_duration_frames] is invalid");
  if (unvoiced_probability < 0.0 || unvoiced_probability >= 1.0)
    throw ConfigError(
        "corpus config: unvoiced_probability must lie in [0, 1)");
}

std::size_t PhonemeUtterance::total_frames() const {
  std::size_t t = 0;
  for (std::int64_t d : durations_frames) t += static_cast<std::size_t>(d);
  return t;
}

void PhonemeUtterance::validate(const CorpusConfig& cfg) const {
  std::size_t n = phoneme_ids.size();
  if (durations_frames.size() != n || phoneme_pitch_hz.size() != n) {
    throw ContractError("utterance: field lengths disagree");
  }
  if (n == 0) throw ContractError("utterance: empty phoneme sequence");
  for (std::size_t i = 0; i < n; ++i) {
    if (phoneme_ids[i] < 0 ||
        phoneme_ids[i] >= static_cast<std::int64_t>(cfg.total_vocab())) {
      throw ContractError("utterance: phoneme id out of vocabulary");
    }
    if (durations_frames[i] < 1) {
      throw ContractError("utterance: non-positive duration");
    }
    bool unvoiced = phoneme_ids[i] == cfg.unvoiced_id();
    if (unvoiced && phoneme_pitch_hz[i] != 0.0) {
      throw ContractError("utterance: unvoiced phoneme with nonzero pitch");
    }
    if (!unvoiced && phoneme_pitch_hz[i] <= 0.0) {
      throw ContractError("utterance: voiced phoneme without pitch");
    }
  }
  if (speaker_id < 0 ||
      speaker_id >= static_cast<std::int64_t>(cfg.n_speakers)) {
    throw ContractError("utterance: speaker id out of range");
  }
  if (target_mel.frames != total_frames() ||
      target_mel.bins != cfg.n_mel_bins) {
    throw ContractError("utterance: target mel shape does not match "
                        "durations and bin count");
  }
}

std::size_t pitch_to_bin(const CorpusConfig& cfg, double hz) {
  if (hz <= 0.0) return 0;
  double span = std::log(cfg.f_max_hz) - std::log(cfg.f_min_hz);
  double pos = (static_cast<double>(cfg.n_mel_bins) - 1.0) *
               (std::log(hz) - std::log(cfg.f_min_hz)) / span;
  double rounded = std::round(pos);
  double top = static_cast<double>(cfg.n_mel_bins) - 1.0;
  return static_cast<std::size_t>(std::clamp(rounded, 0.0, top));
}

double bin_to_hz(const CorpusConfig& cfg, std::size_t bin) {
  double span = std::log(cfg.f_max_hz) - std::log(cfg.f_min_hz);
  double pos = static_cast<double>(bin) /
               (static_cast<double>(cfg.n_mel_bins) - 1.0);
  return std::exp(std::log(cfg.f_min_hz) + pos * span);
}

std::vector<double> formant_profile(const CorpusConfig& cfg,
                                    std::int64_t phoneme) {
  std::size_t m = cfg.n_mel_bins;
  std::mt19937_64 rng(
      mix_seed(cfg.seed, kFormantTag, static_cast<std::uint64_t>(phoneme)));
  std::uniform_real_distribution<double> center(0.0,
                                                static_cast<double>(m) - 1.0);
  std::uniform_real_distribution<double> width(1.5, 3.0);
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::vector<double> profile(m, 0.0);
  for (int band = 0; band < 2; ++band) {
    double c = center(rng), s = width(rng), a = amp(rng);
    for (std::size_t i = 0; i < m; ++i)
      profile[i] += a * gaussian_bump(static_cast<double>(i), c, s);
  }
  return profile;
}

std::vector<double> excitation_profile(const CorpusConfig& cfg, double hz) {
  std::size_t m = cfg.n_mel_bins;
  std::vector<double> profile(m, 0.0);
  if (hz <= 0.0) return profile;
  double center = static_cast<double>(pitch_to_bin(cfg, hz));
  for (std::size_t i = 0; i < m; ++i)
    profile[i] = kExcitationAmplitude *
                 gaussian_bump(static_cast<double>(i), center,
                               kExcitationSigma);
  return profile;
}

std::vector<double> speaker_offset(const CorpusConfig& cfg,
                                   std::int64_t speaker) {
  std::size_t m = cfg.n_mel_bins;
  std::mt19937_64 rng(
      mix_seed(cfg.seed, kSpeakerTag, static_cast<std::uint64_t>(speaker)));
  std::uniform_real_distribution<double> center(0.0,
                                                static_cast<double>(m) - 1.0);
  std::uniform_real_distribution<double> width(4.0, 6.0);
  std::uniform_real_distribution<double> amp(0.1, 0.3);
  double c = center(rng), s = width(rng), a = amp(rng);
  std::vector<double> profile(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    profile[i] = a * gaussian_bump(static_cast<double>(i), c, s);
  return profile;
}

std::vector<PhonemeUtterance> generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(splitmix64(cfg.seed ^ kCorpusTag));
  std::uniform_int_distribution<std::size_t> n_dist(cfg.min_phonemes,
                                                    cfg.max_phonemes);
  std::uniform_int_distribution<std::int64_t> dur_dist(
      static_cast<std::int64_t>(cfg.min_duration_frames),
      static_cast<std::int64_t>(cfg.max_duration_frames));
  std::uniform_int_distribution<std::int64_t> ph_dist(
      0, static_cast<std::int64_t>(cfg.vocab_size) - 1);
  std::uniform_int_distribution<std::int64_t> spk_dist(
      0, static_cast<std::int64_t>(cfg.n_speakers) - 1);
  std::bernoulli_distribution unvoiced_dist(cfg.unvoiced_probability);
  double lo = std::log2(cfg.f_min_hz), hi = std::log2(cfg.f_max_hz);
  std::uniform_real_distribution<double> start_dist(lo + 0.15, hi - 0.15);
  std::uniform_real_distribution<double> step_dist(-0.08, 0.08);

  std::vector<PhonemeUtterance> corpus;
  corpus.reserve(cfg.n_utterances);
  for (std::size_t u = 0; u < cfg.n_utterances; ++u) {
    PhonemeUtterance utt;
    std::size_t n = n_dist(rng);
    utt.speaker_id = spk_dist(rng);
    double log2f = start_dist(rng);
    for (std::size_t i = 0; i < n; ++i) {
      bool unvoiced = unvoiced_dist(rng);
      utt.phoneme_ids.push_back(unvoiced ? cfg.unvoiced_id() : ph_dist(rng));
      utt.durations_frames.push_back(dur_dist(rng));
      if (unvoiced) {
        utt.phoneme_pitch_hz.push_back(0.0);
      } else {
        log2f = std::clamp(log2f + step_dist(rng), lo, hi);
        utt.phoneme_pitch_hz.push_back(std::exp2(log2f));
      }
    }

    std::vector<double> spk = speaker_offset(cfg, utt.speaker_id);
    utt.target_mel = MelSpectrogram(utt.total_frames(), cfg.n_mel_bins);
    std::size_t t = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> form = formant_profile(cfg, utt.phoneme_ids[i]);
      std::vector<double> exc =
          excitation_profile(cfg, utt.phoneme_pitch_hz[i]);
      for (std::int64_t f = 0; f < utt.durations_frames[i]; ++f, ++t) {
        for (std::size_t m = 0; m < cfg.n_mel_bins; ++m) {
          // association order matters for the exact-decomposition property
          utt.target_mel.at(t, m) = (form[m] + spk[m]) + exc[m];
        }
      }
    }
    corpus.push_back(std::move(utt));
  }
  return corpus;
}

F0Track extract_f0_synthetic(const MelSpectrogram& mel,
                             const CorpusConfig& cfg) {
  cfg.validate();
  std::size_t m = cfg.n_mel_bins;
  if (mel.bins != m) {
    throw ContractError("extract_f0: mel has " + std::to_string(mel.bins) +
                        " bins, corpus declares " + std::to_string(m));
  }
  // hypothesis templates, built once
  std::vector<std::vector<double>> formants;
  for (std::size_t ph = 0; ph < cfg.total_vocab(); ++ph)
    formants.push_back(formant_profile(cfg, static_cast<std::int64_t>(ph)));
  std::vector<std::vector<double>> speakers;
  for (std::size_t s = 0; s < cfg.n_speakers; ++s)
    speakers.push_back(speaker_offset(cfg, static_cast<std::int64_t>(s)));
  std::vector<std::vector<double>> bumps;  // excitation template per bin
  for (std::size_t b = 0; b < m; ++b) {
    std::vector<double> bump(m);
    for (std::size_t i = 0; i < m; ++i)
      bump[i] = kExcitationAmplitude *
                gaussian_bump(static_cast<double>(i),
                              static_cast<double>(b), kExcitationSigma);
    bumps.push_back(std::move(bump));
  }

  F0Track track;
  track.frame_hz.assign(mel.frames, 0.0);
  track.voiced.assign(mel.frames, false);
  std::vector<double> residual(m);
  for (std::size_t t = 0; t < mel.frames; ++t) {
    const double* frame = mel.values.data() + t * m;
    double best_sse = std::numeric_limits<double>::infinity();
    bool best_voiced = false;
    std::size_t best_bin = 0;
    double best_peak = 0.0;
    for (const auto& spk : speakers) {
      for (const auto& form : formants) {
        double peak = -std::numeric_limits<double>::infinity();
        double sse_unvoiced = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          residual[i] = frame[i] - form[i] - spk[i];
          sse_unvoiced += residual[i] * residual[i];
          peak = std::max(peak, residual[i]);
        }
        if (sse_unvoiced < best_sse) {
          best_sse = sse_unvoiced;
          best_voiced = false;
          best_peak = peak;
        }
        for (std::size_t b = 0; b < m; ++b) {
          double sse = 0.0;
          const double* bump = bumps[b].data();
          for (std::size_t i = 0; i < m; ++i) {
            double d = residual[i] - bump[i];
            sse += d * d;
          }
          if (sse < best_sse) {
            best_sse = sse;
            best_voiced = true;
            best_bin = b;
            best_peak = peak;
          }
        }
      }
    }
    if (best_voiced && best_peak >= kProminenceThreshold) {
      track.frame_hz[t] = bin_to_hz(cfg, best_bin);
      track.voiced[t] = true;
    }
  }
  return track;
}

std::vector<double> average_pitch_per_phoneme(
    const F0Track& track, std::span<const std::int64_t> durations) {
  std::size_t total = 0;
  for (std::int64_t d : durations) {
    if (d < 1) throw ContractError("average_pitch: non-positive duration");
    total += static_cast<std::size_t>(d);
  }
  if (total != track.length()) {
    throw ContractError("average_pitch: durations cover " +
                        std::to_string(total) + " frames, track has " +
                        std::to_string(track.length()));
  }
  std::vector<double> result;
  result.reserve(durations.size());
  std::size_t t = 0;
  for (std::int64_t d : durations) {
    double sum = 0.0;
    std::size_t voiced = 0;
    for (std::int64_t f = 0; f < d; ++f, ++t) {
      if (track.voiced[t]) {
        sum += track.frame_hz[t];
        ++voiced;
      }
    }
    result.push_back(voiced == 0 ? 0.0 : sum / static_cast<double>(voiced));
  }
  return result;
}

PitchStats compute_pitch_stats(const std::vector<PhonemeUtterance>& corpus,
                               std::size_t n_speakers) {
  std::vector<double> sum(n_speakers, 0.0), sumsq(n_speakers, 0.0);
  std::vector<std::size_t> count(n_speakers, 0);
  for (const PhonemeUtterance& utt : corpus) {
    std::size_t spk = static_cast<std::size_t>(utt.speaker_id);
    if (spk >= n_speakers) {
      throw ContractError("pitch stats: speaker id beyond speaker count");
    }
    for (double hz : utt.phoneme_pitch_hz) {
      if (hz > 0.0) {
        sum[spk] += hz;
        sumsq[spk] += hz * hz;
        ++count[spk];
      }
    }
  }
  PitchStats stats;
  stats.mean_hz.assign(n_speakers, 0.0);
  stats.std_hz.assign(n_speakers, 1.0);
  for (std::size_t s = 0; s < n_speakers; ++s) {
    if (count[s] == 0) continue;  // neutral identity standardization
    double mean = sum[s] / static_cast<double>(count[s]);
    double var = sumsq[s] / static_cast<double>(count[s]) - mean * mean;
    stats.mean_hz[s] = mean;
    stats.std_hz[s] = std::max(std::sqrt(std::max(var, 0.0)), 1.0);
  }
  return stats;
}

F0Track expand_pitch_to_frames(const PhonemeUtterance& utt) {
  F0Track track;
  track.frame_hz.reserve(utt.total_frames());
  track.voiced.reserve(utt.total_frames());
  for (std::size_t i = 0; i < utt.n_phonemes(); ++i) {
    double hz = utt.phoneme_pitch_hz[i];
    for (std::int64_t f = 0; f < utt.durations_frames[i]; ++f) {
      track.frame_hz.push_back(hz);
      track.voiced.push_back(hz > 0.0);
    }
  }
  return track;
}

// ---- serialization ----

namespace {
constexpr const char* kCorpusMagic = "FPFCORP1";
}

void save_corpus(const std::vector<PhonemeUtterance>& corpus,
                 const CorpusConfig& cfg, const std::string& path) {
  container::File file;
  file.config_json = corpus_config_to_json(cfg);
  for (std::size_t u = 0; u < corpus.size(); ++u) {
    const PhonemeUtterance& utt = corpus[u];
    std::string prefix = "utt" + std::to_string(u) + "/";
    container::Record phon;
    phon.name = prefix + "phonemes";
    phon.dtype = container::kI64;
    phon.dims = {utt.phoneme_ids.size()};
    phon.i64 = utt.phoneme_ids;
    container::Record dur;
    dur.name = prefix + "durations";
    dur.dtype = container::kI64;
    dur.dims = {utt.durations_frames.size()};
    dur.i64 = utt.durations_frames;
    container::Record pitch;
    pitch.name = prefix + "pitch_hz";
    pitch.dtype = container::kF64;
    pitch.dims = {utt.phoneme_pitch_hz.size()};
    pitch.f64 = utt.phoneme_pitch_hz;
    container::Record spk;
    spk.name = prefix + "speaker";
    spk.dtype = container::kI64;
    spk.dims = {};
    spk.i64 = {utt.speaker_id};
    container::Record mel;
    mel.name = prefix + "mel";
    mel.dtype = container::kF64;
    mel.dims = {utt.target_mel.frames, utt.target_mel.bins};
    mel.f64 = utt.target_mel.values;
    file.records.push_back(std::move(phon));
    file.records.push_back(std::move(dur));
    file.records.push_back(std::move(pitch));
    file.records.push_back(std::move(spk));
    file.records.push_back(std::move(mel));
  }
  container::write_file(path, kCorpusMagic, file);
}

LoadedCorpus load_corpus(const std::string& path) {
  container::File file = container::read_file(path, kCorpusMagic);
  LoadedCorpus loaded;
  loaded.config = corpus_config_from_json(file.config_json);
  if (file.records.size() % 5 != 0) {
    throw IoError(path + ": record count " +
                  std::to_string(file.records.size()) +
                  " is not a multiple of the 5 records per utterance");
  }
  std::size_t n_utts = file.records.size() / 5;
  auto expect = [&](std::size_t idx, const std::string& name,
                    std::uint8_t dtype) -> const container::Record& {
    const container::Record& rec = file.records[idx];
    if (rec.name != name) {
      throw IoError(path + ": record " + std::to_string(idx) +
                    ": expected '" + name + "', found '" + rec.name + "'");
    }
    if (rec.dtype != dtype) {
      throw IoError(path + ": record " + std::to_string(idx) + " ('" + name +
                    "') has the wrong dtype");
    }
    return rec;
  };
  for (std::size_t u = 0; u < n_utts; ++u) {
    std::string prefix = "utt" + std::to_string(u) + "/";
    std::size_t base = u * 5;
    PhonemeUtterance utt;
    utt.phoneme_ids = expect(base, prefix + "phonemes", container::kI64).i64;
    utt.durations_frames =
        expect(base + 1, prefix + "durations", container::kI64).i64;
    utt.phoneme_pitch_hz =
        expect(base + 2, prefix + "pitch_hz", container::kF64).f64;
    const container::Record& spk =
        expect(base + 3, prefix + "speaker", container::kI64);
    if (spk.i64.size() != 1) {
      throw IoError(path + ": record " + std::to_string(base + 3) +
                    ": speaker must be a scalar");
    }
    utt.speaker_id = spk.i64[0];
    const container::Record& mel =
        expect(base + 4, prefix + "mel", container::kF64);
    if (mel.dims.size() != 2) {
      throw IoError(path + ": record " + std::to_string(base + 4) +
                    ": mel must be rank 2");
    }
    utt.target_mel.frames = mel.dims[0];
    utt.target_mel.bins = mel.dims[1];
    utt.target_mel.values = mel.f64;
    try {
      utt.validate(loaded.config);
    } catch (const ContractError& e) {
      throw IoError(path + ": utterance " + std::to_string(u) +
                    " is inconsistent: " + e.what());
    }
    loaded.utterances.push_back(std::move(utt));
  }
  return loaded;
}

void export_corpus_text(const std::vector<PhonemeUtterance>& corpus,
                        const CorpusConfig& cfg, const std::string& path) {
  using nlohmann::json;
  json root;
  root["config"] = json::parse(corpus_config_to_json(cfg));
  json utts = json::array();
  for (const PhonemeUtterance& utt : corpus) {
    json j;
    j["phonemes"] = utt.phoneme_ids;
    j["durations"] = utt.durations_frames;
    j["pitch_hz"] = utt.phoneme_pitch_hz;
    j["speaker"] = utt.speaker_id;
    json mel = json::array();
    for (std::size_t t = 0; t < utt.target_mel.frames; ++t) {
      json row = json::array();
      for (std::size_t m = 0; m < utt.target_mel.bins; ++m)
        row.push_back(utt.target_mel.at(t, m));
      mel.push_back(std::move(row));
    }
    j["mel"] = std::move(mel);
    utts.push_back(std::move(j));
  }
  root["utterances"] = std::move(utts);
  std::ofstream stream(path, std::ios::trunc);
  if (!stream) throw IoError(path + ": cannot open for writing");
  stream << root.dump(2) << "\n";
  if (!stream) throw IoError(path + ": write failed");
}

std::string corpus_config_to_json(const CorpusConfig& cfg) {
  nlohmann::json j;
  j["n_utterances"] = cfg.n_utterances;
  j["vocab_size"] = cfg.vocab_size;
  j["n_speakers"] = cfg.n_speakers;
  j["n_mel_bins"] = cfg.n_mel_bins;
  j["f_min_hz"] = cfg.f_min_hz;
  j["f_max_hz"] = cfg.f_max_hz;
  j["min_phonemes"] = cfg.min_phonemes;
  j["max_phonemes"] = cfg.max_phonemes;
  j["min_duration_frames"] = cfg.min_duration_frames;
  j["max_duration_frames"] = cfg.max_duration_frames;
  j["unvoiced_probability"] = cfg.unvoiced_probability;
  j["seed"] = cfg.seed;
  return j.dump();
}

CorpusConfig corpus_config_from_json(const std::string& json_text) {
  using namespace jsonutil;
  json j = parse_object(json_text, "corpus config");
  check_known_keys(j,
                   {"n_utterances", "vocab_size", "n_speakers", "n_mel_bins",
                    "f_min_hz", "f_max_hz", "min_phonemes", "max_phonemes",
                    "min_duration_frames", "max_duration_frames",
                    "unvoiced_probability", "seed"},
                   "corpus config");
  CorpusConfig cfg;
  get_to_if(j, "n_utterances", cfg.n_utterances, "corpus config");
  get_to_if(j, "vocab_size", cfg.vocab_size, "corpus config");
  get_to_if(j, "n_speakers", cfg.n_speakers, "corpus config");
  get_to_if(j, "n_mel_bins", cfg.n_mel_bins, "corpus config");
  get_to_if(j, "f_min_hz", cfg.f_min_hz, "corpus config");
  get_to_if(j, "f_max_hz", cfg.f_max_hz, "corpus config");
  get_to_if(j, "min_phonemes", cfg.min_phonemes, "corpus config");
  get_to_if(j, "max_phonemes", cfg.max_phonemes, "corpus config");
  get_to_if(j, "min_duration_frames", cfg.min_duration_frames,
            "corpus config");
  get_to_if(j, "max_duration_frames", cfg.max_duration_frames,
            "corpus config");
  get_to_if(j, "unvoiced_probability", cfg.unvoiced_probability,
            "corpus config");
  get_to_if(j, "seed", cfg.seed, "corpus config");
  cfg.validate();
  return cfg;
}

}  // namespace fpf
