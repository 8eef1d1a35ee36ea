#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fpformant/error.hpp"
#include "fpformant/mel.hpp"
#include "fpformant/metrics.hpp"

namespace fpf {

/// Synthetic source-filter corpus settings. Phoneme ids 0..vocab_size-1 are
/// voiced; the id vocab_size is the designated unvoiced phoneme.
struct CorpusConfig {
  std::size_t n_utterances = 64;
  std::size_t vocab_size = 16;
  std::size_t n_speakers = 1;
  std::size_t n_mel_bins = 16;
  double f_min_hz = 80.0;
  double f_max_hz = 400.0;
  std::size_t min_phonemes = 4;
  std::size_t max_phonemes = 10;
  std::size_t min_duration_frames = 2;
  std::size_t max_duration_frames = 6;
  double unvoiced_probability = 0.2;
  std::uint64_t seed = 0;

  std::int64_t unvoiced_id() const {
    return static_cast<std::int64_t>(vocab_size);
  }
  /// Embedding-table size needed to cover voiced ids plus the unvoiced id.
  std::size_t total_vocab() const { return vocab_size + 1; }

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// One phoneme-aligned utterance with its additive log-mel target.
struct PhonemeUtterance {
  std::vector<std::int64_t> phoneme_ids;       // [N]
  std::vector<std::int64_t> durations_frames;  // [N], each >= 1
  std::vector<double> phoneme_pitch_hz;        // [N], 0 encodes unvoiced
  std::int64_t speaker_id = 0;
  MelSpectrogram target_mel;                   // [T x M], T = sum durations

  std::size_t n_phonemes() const { return phoneme_ids.size(); }
  std::size_t total_frames() const;
  /// Throws ContractError when field lengths or T are inconsistent.
  void validate(const CorpusConfig& cfg) const;

  bool operator==(const PhonemeUtterance&) const = default;
};

/// Per-speaker pitch statistics over voiced phonemes, used to standardize
/// pitch before it enters the network.
struct PitchStats {
  std::vector<double> mean_hz;    // [n_speakers]
  std::vector<double> std_hz;     // [n_speakers], floored away from zero
};

// ---- pitch <-> mel-bin mapping ----

/// Log-spaced bin center for a pitch: round((M-1) * (log f - log f_min) /
/// (log f_max - log f_min)), clamped into [0, M-1]. Monotone in f.
std::size_t pitch_to_bin(const CorpusConfig& cfg, double hz);
/// Inverse of pitch_to_bin's spacing at a bin center.
double bin_to_hz(const CorpusConfig& cfg, std::size_t bin);

// ---- additive construction profiles (pure functions of cfg) ----

/// Smooth per-phoneme band pattern over mel bins (the vocal-tract filter).
std::vector<double> formant_profile(const CorpusConfig& cfg,
                                    std::int64_t phoneme);
/// Narrow bump centered on pitch_to_bin(hz) (the excitation source);
/// all zeros when hz <= 0 (unvoiced).
std::vector<double> excitation_profile(const CorpusConfig& cfg, double hz);
/// Low-amplitude per-speaker bias pattern.
std::vector<double> speaker_offset(const CorpusConfig& cfg,
                                   std::int64_t speaker);

// ---- corpus operations ----

/// Deterministic under cfg.seed. Every frame is built additively as
/// (formant_profile + speaker_offset) + excitation_profile, in that
/// association order, so the decomposition is bit-reproducible.
std::vector<PhonemeUtterance> generate_corpus(const CorpusConfig& cfg);

/// Matched-filter pitch extraction against the corpus construction: per
/// frame, subtract the best-fitting formant/speaker hypothesis and read the
/// excitation peak; low peak prominence marks the frame unvoiced.
F0Track extract_f0_synthetic(const MelSpectrogram& mel,
                             const CorpusConfig& cfg);

/// Mean of voiced frame values within each phoneme span; spans with no
/// voiced frame yield 0. Requires sum(durations) == track length.
std::vector<double> average_pitch_per_phoneme(
    const F0Track& track, std::span<const std::int64_t> durations);

PitchStats compute_pitch_stats(const std::vector<PhonemeUtterance>& corpus,
                               std::size_t n_speakers);

/// Frame-level expansion of phoneme pitch: each phoneme's Hz repeated for
/// its duration; voiced iff hz > 0.
F0Track expand_pitch_to_frames(const PhonemeUtterance& utt);

// ---- serialization ----

void save_corpus(const std::vector<PhonemeUtterance>& corpus,
                 const CorpusConfig& cfg, const std::string& path);

struct LoadedCorpus {
  CorpusConfig config;
  std::vector<PhonemeUtterance> utterances;
};
LoadedCorpus load_corpus(const std::string& path);

/// Human-readable JSON export for inspection (not the load format).
void export_corpus_text(const std::vector<PhonemeUtterance>& corpus,
                        const CorpusConfig& cfg, const std::string& path);

std::string corpus_config_to_json(const CorpusConfig& cfg);
/// Accepts a JSON object; unknown keys raise ConfigError naming the key.
CorpusConfig corpus_config_from_json(const std::string& json_text);

}  // namespace fpf
