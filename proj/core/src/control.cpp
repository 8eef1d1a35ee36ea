#include "fpformant/control.hpp"

#include <cmath>

#include "fpformant/metrics.hpp"

namespace fpf {

namespace {

ForwardOutput run_utterance(const Model& model, const PhonemeUtterance& utt,
                            double lambda, bool gt_duration, bool gt_pitch) {
  ForwardInput input;
  input.phoneme_ids = utt.phoneme_ids;
  input.speaker_id = utt.speaker_id;
  input.gt_durations = utt.durations_frames;
  input.gt_pitch_hz = utt.phoneme_pitch_hz;
  ForwardOptions opts;
  opts.use_gt_duration = gt_duration;
  opts.use_gt_pitch = gt_pitch;
  opts.pitch_shift_semitones = lambda;
  return model.forward(input, opts);
}

double mean_frame_l2(const MelSpectrogram& a, const MelSpectrogram& b) {
  if (!a.same_shape(b)) {
    throw ContractError("mean_frame_l2: mel shapes differ");
  }
  if (a.frames == 0) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < a.frames; ++t) {
    double sq = 0.0;
    for (std::size_t m = 0; m < a.bins; ++m) {
      double d = a.at(t, m) - b.at(t, m);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<double>(a.frames);
}

}  // namespace

MelSpectrogram synthesize(const Model& model, const PhonemeUtterance& utt,
                          const SynthesisOptions& opts) {
  ForwardOutput out = run_utterance(model, utt, opts.lambda_semitones,
                                    opts.use_gt_duration, opts.use_gt_pitch);
  return MelSpectrogram::from_tensor(out.mel3);
}

std::vector<double> default_lambda_set() {
  return {-8.0, -6.0, -4.0, 0.0, 4.0, 6.0, 8.0};
}

SweepResult sweep(const Model& model, std::span<const PhonemeUtterance> data,
                  const SweepOptions& opts) {
  if (opts.lambdas.empty()) {
    throw InputError("sweep: empty shift list");
  }
  if (data.empty()) {
    throw InputError("sweep: empty dataset");
  }

  SweepResult result;
  result.rows.reserve(opts.lambdas.size() * data.size());
  result.per_lambda.assign(opts.lambdas.size(), SweepAggregate{});
  for (std::size_t l = 0; l < opts.lambdas.size(); ++l)
    result.per_lambda[l].lambda = opts.lambdas[l];

  for (std::size_t u = 0; u < data.size(); ++u) {
    const PhonemeUtterance& utt = data[u];

    // unshifted baseline, teacher-forced on both duration and pitch
    ForwardOutput base = run_utterance(model, utt, 0.0, true, true);
    MelSpectrogram base_mel = MelSpectrogram::from_tensor(base.mel3);
    MelSpectrogram base_formant =
        model.decode_single_path(base.formant_repr, true);
    MelSpectrogram base_excitation =
        model.decode_single_path(base.excitation_repr, false);

    F0Track gt_track = expand_pitch_to_frames(utt);

    for (std::size_t l = 0; l < opts.lambdas.size(); ++l) {
      double lambda = opts.lambdas[l];
      ForwardOutput shifted = run_utterance(model, utt, lambda, true, true);
      MelSpectrogram mel = MelSpectrogram::from_tensor(shifted.mel3);

      SweepRow row;
      row.lambda = lambda;
      row.utterance_index = u;

      F0Track reference;
      reference.frame_hz = shift_pitch(gt_track.frame_hz, lambda);
      reference.voiced = gt_track.voiced;
      F0Track measured = extract_f0_synthetic(mel, opts.corpus);
      row.ffe_percent = ffe(reference, measured);

      row.mcd_db = mcd(mel, base_mel, opts.mcd_coefficients);
      row.formant_drift = mean_frame_l2(
          model.decode_single_path(shifted.formant_repr, true), base_formant);
      row.excitation_drift = mean_frame_l2(
          model.decode_single_path(shifted.excitation_repr, false),
          base_excitation);

      SweepAggregate& agg = result.per_lambda[l];
      agg.mean_ffe_percent += row.ffe_percent;
      agg.mean_mcd_db += row.mcd_db;
      agg.mean_formant_drift += row.formant_drift;
      agg.mean_excitation_drift += row.excitation_drift;
      result.rows.push_back(row);
    }
  }

  double inv_n = 1.0 / static_cast<double>(data.size());
  for (SweepAggregate& agg : result.per_lambda) {
    agg.mean_ffe_percent *= inv_n;
    agg.mean_mcd_db *= inv_n;
    agg.mean_formant_drift *= inv_n;
    agg.mean_excitation_drift *= inv_n;
  }
  return result;
}

}  // namespace fpf
