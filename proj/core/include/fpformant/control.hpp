#pragma once

#include <span>
#include <vector>

#include "fpformant/data.hpp"
#include "fpformant/mel.hpp"
#include "fpformant/model.hpp"
#include "fpformant/pitch.hpp"

namespace fpf {

struct SynthesisOptions {
  double lambda_semitones = 0.0;
  bool use_gt_duration = false;
  bool use_gt_pitch = false;
};

/// One utterance through the model with the semitone shift applied to the
/// chosen pitch source; returns the final decoder head's mel.
MelSpectrogram synthesize(const Model& model, const PhonemeUtterance& utt,
                          const SynthesisOptions& opts);

/// The seven shifts evaluated throughout: -8, -6, -4, 0, +4, +6, +8.
std::vector<double> default_lambda_set();

struct SweepOptions {
  std::vector<double> lambdas = default_lambda_set();
  /// Corpus parameters, needed by the synthetic pitch extractor scoring
  /// the synthesized mels.
  CorpusConfig corpus;
  std::size_t mcd_coefficients = 13;
};

/// Per-(shift, utterance) measurements. Drift columns compare
/// decode_single_path mels of the shifted run against the unshifted run
/// (mean per-frame L2 distance); the formant column is expected to sit at
/// zero because that path never sees pitch.
struct SweepRow {
  double lambda = 0.0;
  std::size_t utterance_index = 0;
  double ffe_percent = 0.0;        // extractor vs shifted reference pitch
  double mcd_db = 0.0;             // synthesized shifted vs unshifted
  double formant_drift = 0.0;
  double excitation_drift = 0.0;
};

/// Means over the dataset for one shift.
struct SweepAggregate {
  double lambda = 0.0;
  double mean_ffe_percent = 0.0;
  double mean_mcd_db = 0.0;
  double mean_formant_drift = 0.0;
  double mean_excitation_drift = 0.0;
};

struct SweepResult {
  /// Utterance-major: one block of |lambdas| rows per utterance, shifts in
  /// input order within each block.
  std::vector<SweepRow> rows;
  std::vector<SweepAggregate> per_lambda;  // one per shift, input order
};

/// Teacher-forced pitch-shift sweep: synthesizes every utterance at every
/// shift, scores FFE against the shifted ground-truth pitch, MCD against
/// the unshifted synthesis, and the per-path drift columns.
SweepResult sweep(const Model& model, std::span<const PhonemeUtterance> data,
                  const SweepOptions& opts);

}  // namespace fpf
