// Tests for the pitch-shift controller and the shift sweep: the semitone
// ratio table, shift application to pitch tracks, synthesis plumbing, and a
// trained-toy-model regression that pins how shift strength moves the
// excitation path while the formant path stays untouched.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

#include "fpformant/control.hpp"
#include "fpformant/data.hpp"
#include "fpformant/error.hpp"
#include "fpformant/metrics.hpp"
#include "fpformant/model.hpp"
#include "fpformant/training.hpp"

using namespace fpf;

namespace {

ModelConfig toy_model_config() {
  ModelConfig mc;
  mc.vocab_size = 7;
  mc.n_speakers = 1;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.head_dim = 8;
  mc.conv_kernel = 3;
  mc.conv_hidden = 16;
  mc.n_encoder_blocks = 2;
  mc.n_generator_blocks = 2;
  mc.n_decoder_blocks = 2;
  mc.n_mel_bins = 12;
  mc.max_frames = 256;
  return mc;
}

CorpusConfig toy_corpus_config() {
  CorpusConfig cc;
  cc.n_utterances = 24;
  cc.vocab_size = 6;
  cc.n_speakers = 1;
  cc.n_mel_bins = 12;
  cc.min_phonemes = 3;
  cc.max_phonemes = 5;
  cc.min_duration_frames = 2;
  cc.max_duration_frames = 4;
  cc.seed = 7;
  return cc;
}

}  // namespace

TEST_CASE("semitone ratio reproduces the tempered-scale table") {
  // Two-decimal ratios for the six nonzero shifts used by the sweep.
  const std::map<double, double> table = {
      {-8.0, 0.63}, {-6.0, 0.71}, {-4.0, 0.79},
      {4.0, 1.26},  {6.0, 1.41},  {8.0, 1.59},
  };
  for (const auto& [semitones, expected] : table) {
    CAPTURE(semitones);
    CHECK(std::abs(semitone_ratio(semitones) - expected) < 0.005);
  }

  // The identity and the octave are exact powers of two.
  CHECK(semitone_ratio(0.0) == 1.0);
  CHECK(std::abs(semitone_ratio(12.0) - 2.0) <= 1e-12);
  CHECK(std::abs(semitone_ratio(-12.0) - 0.5) <= 1e-12);

  // Shift composition multiplies ratios: r(a) * r(b) = r(a + b).
  const std::vector<double> grid = {-8.5, -4.0, -1.25, 0.0, 3.0, 7.5, 12.0};
  for (double a : grid) {
    for (double b : grid) {
      double composed = semitone_ratio(a) * semitone_ratio(b);
      double direct = semitone_ratio(a + b);
      CAPTURE(a);
      CAPTURE(b);
      CHECK(std::abs(composed - direct) <= 1e-12 * std::abs(direct));
    }
  }
}

TEST_CASE("pitch track shifting preserves unvoiced zeros and rejects negatives") {
  const std::vector<double> track = {220.0, 0.0, 110.0, 0.0, 330.0};

  SUBCASE("octave up doubles voiced frames only") {
    std::vector<double> up = shift_pitch(track, 12.0);
    REQUIRE(up.size() == track.size());
    CHECK(up[0] == doctest::Approx(440.0).epsilon(1e-12));
    CHECK(up[1] == 0.0);
    CHECK(up[2] == doctest::Approx(220.0).epsilon(1e-12));
    CHECK(up[3] == 0.0);
    CHECK(up[4] == doctest::Approx(660.0).epsilon(1e-12));
  }

  SUBCASE("zero shift is the identity") {
    std::vector<double> same = shift_pitch(track, 0.0);
    CHECK(same == track);
  }

  SUBCASE("negative pitch is rejected") {
    std::vector<double> bad = {100.0, -1.0};
    CHECK_THROWS_AS(shift_pitch(bad, 2.0), InputError);
  }
}

TEST_CASE("synthesize matches the teacher-forced forward pass") {
  CorpusConfig cc = toy_corpus_config();
  cc.n_utterances = 2;
  auto data = generate_corpus(cc);
  const PhonemeUtterance& utt = data.front();

  Model model(toy_model_config());
  model.init(5);
  model.set_pitch_stats(compute_pitch_stats(data, cc.n_speakers));

  SynthesisOptions opts;
  opts.use_gt_duration = true;
  opts.use_gt_pitch = true;

  ForwardInput in;
  in.phoneme_ids = utt.phoneme_ids;
  in.speaker_id = utt.speaker_id;
  in.gt_durations = utt.durations_frames;
  in.gt_pitch_hz = utt.phoneme_pitch_hz;
  ForwardOptions fo;
  fo.use_gt_duration = true;
  fo.use_gt_pitch = true;
  ForwardOutput out = model.forward(in, fo);

  MelSpectrogram mel = synthesize(model, utt, opts);

  std::size_t total_frames = 0;
  for (std::size_t d : utt.durations_frames) total_frames += d;
  REQUIRE(mel.frames == total_frames);
  REQUIRE(mel.bins == model.config().n_mel_bins);

  REQUIRE(out.mel3.shape() == Shape{mel.frames, mel.bins});
  auto vals = out.mel3.values();
  for (std::size_t t = 0; t < mel.frames; ++t) {
    for (std::size_t b = 0; b < mel.bins; ++b) {
      REQUIRE(mel.at(t, b) == vals[t * mel.bins + b]);
    }
  }

  SUBCASE("free-running synthesis produces one frame block per phoneme") {
    SynthesisOptions free_run;  // predicted durations and pitch
    MelSpectrogram free_mel = synthesize(model, utt, free_run);
    CHECK(free_mel.bins == model.config().n_mel_bins);
    // Every phoneme contributes at least one frame after clamping.
    CHECK(free_mel.frames >= utt.phoneme_ids.size());
  }
}

TEST_CASE("sweep validates its inputs") {
  CorpusConfig cc = toy_corpus_config();
  cc.n_utterances = 2;
  auto data = generate_corpus(cc);

  Model model(toy_model_config());
  model.init(5);
  model.set_pitch_stats(compute_pitch_stats(data, cc.n_speakers));

  SweepOptions opts;
  opts.corpus = cc;
  opts.mcd_coefficients = 10;

  SUBCASE("empty shift list") {
    opts.lambdas.clear();
    CHECK_THROWS_AS(sweep(model, data, opts), InputError);
  }

  SUBCASE("empty dataset") {
    std::vector<PhonemeUtterance> none;
    CHECK_THROWS_AS(sweep(model, none, opts), InputError);
  }

  SUBCASE("cepstral order must stay below the bin count") {
    opts.mcd_coefficients = cc.n_mel_bins;  // needs K < bins
    CHECK_THROWS_AS(sweep(model, data, opts), ConfigError);
  }
}

TEST_CASE("default lambda set spans -8..+8 with the published grid") {
  std::vector<double> expected = {-8.0, -6.0, -4.0, 0.0, 4.0, 6.0, 8.0};
  CHECK(default_lambda_set() == expected);
}

TEST_CASE("trained toy sweep: shifts move the excitation path, never the formant path") {
  // Deterministic recipe; the numeric pins below are regression values
  // recorded from this exact configuration (corpus seed 7, init seed 21,
  // training seed 1) and guard against behavioral drift. Plain blocks
  // instead of subcases so the toy model trains exactly once.
  CorpusConfig cc = toy_corpus_config();
  auto data = generate_corpus(cc);
  auto stats = compute_pitch_stats(data, cc.n_speakers);

  TrainConfig tc;
  tc.batch_size = 4;
  tc.max_iterations = 1000;
  tc.halving_interval = 400;
  tc.seed = 1;

  Model model(toy_model_config());
  model.init(21);
  model.set_pitch_stats(stats);
  OptimizerState opt = make_optimizer_state(model);
  TrainResult result = train(model, data, tc, opt);

  REQUIRE(result.log.size() == tc.max_iterations);
  const double initial = result.log.front().total;
  const double final_loss = result.log.back().total;
  // Recorded: 8.12 -> 0.0071.
  CHECK(final_loss < 0.05);
  CHECK(final_loss < 0.01 * initial);

  SweepOptions so;
  so.corpus = cc;
  so.mcd_coefficients = 10;
  SweepResult sw = sweep(model, data, so);

  REQUIRE(sw.rows.size() == so.lambdas.size() * data.size());
  REQUIRE(sw.per_lambda.size() == so.lambdas.size());

  std::map<double, SweepAggregate> agg;
  for (const auto& a : sw.per_lambda) agg[a.lambda] = a;
  REQUIRE(agg.size() == so.lambdas.size());

  {  // row bookkeeping
    // Rows are utterance-major: one block of |lambdas| rows per utterance.
    std::size_t i = 0;
    for (std::size_t u = 0; u < data.size(); ++u) {
      for (double lambda : so.lambdas) {
        REQUIRE(sw.rows[i].lambda == lambda);
        REQUIRE(sw.rows[i].utterance_index == u);
        ++i;
      }
    }
  }

  {  // the formant path is bit-invariant under every shift
    for (const auto& row : sw.rows) {
      CAPTURE(row.lambda);
      CAPTURE(row.utterance_index);
      REQUIRE(row.formant_drift == 0.0);
      REQUIRE(row.excitation_drift >= 0.0);
    }
  }

  {  // the unshifted column is exactly the baseline
    for (const auto& row : sw.rows) {
      if (row.lambda != 0.0) continue;
      REQUIRE(row.mcd_db == 0.0);
      REQUIRE(row.ffe_percent == 0.0);
      REQUIRE(row.excitation_drift == 0.0);
    }
    CHECK(agg.at(0.0).mean_mcd_db == 0.0);
    CHECK(agg.at(0.0).mean_ffe_percent == 0.0);
    CHECK(agg.at(0.0).mean_excitation_drift == 0.0);
  }

  {  // distortion and excitation drift grow with shift magnitude
    for (const std::vector<double>& ladder :
         {std::vector<double>{0.0, 4.0, 6.0, 8.0},
          std::vector<double>{0.0, -4.0, -6.0, -8.0}}) {
      for (std::size_t i = 1; i < ladder.size(); ++i) {
        CAPTURE(ladder[i]);
        CHECK(agg.at(ladder[i]).mean_mcd_db > agg.at(ladder[i - 1]).mean_mcd_db);
        CHECK(agg.at(ladder[i]).mean_excitation_drift >
              agg.at(ladder[i - 1]).mean_excitation_drift);
      }
    }

    // At the moderate shifts the formant column sits far below half the
    // excitation column (it is exactly zero).
    for (double lambda : {-4.0, 4.0}) {
      CHECK(agg.at(lambda).mean_formant_drift <=
            0.5 * agg.at(lambda).mean_excitation_drift);
    }
  }

  {  // recorded distortion regression values
    // Mean MCD (dB) per shift, recorded from this fixed recipe.
    const std::map<double, double> recorded_mcd = {
        {-8.0, 4.3258}, {-6.0, 2.7419}, {-4.0, 1.3199},
        {4.0, 0.8316},  {6.0, 2.3406},  {8.0, 4.7493},
    };
    for (const auto& [lambda, expected] : recorded_mcd) {
      CAPTURE(lambda);
      CHECK(agg.at(lambda).mean_mcd_db == doctest::Approx(expected).epsilon(0.30));
    }

    // Mean FFE (percent) per shift. The extractor quantizes pitch to mel
    // bins, so moderate shifts already register as frame errors; recorded
    // values, generous absolute band.
    const std::map<double, double> recorded_ffe = {
        {-8.0, 85.54}, {-6.0, 86.91}, {-4.0, 75.21},
        {4.0, 49.26},  {6.0, 86.20},  {8.0, 81.86},
    };
    for (const auto& [lambda, expected] : recorded_ffe) {
      CAPTURE(lambda);
      CHECK(std::abs(agg.at(lambda).mean_ffe_percent - expected) < 20.0);
      CHECK(agg.at(lambda).mean_ffe_percent > 0.0);
      CHECK(agg.at(lambda).mean_ffe_percent <= 100.0);
    }
  }

  {  // an octave shift moves the excitation band upward
    // Compare the excitation-only decode at +12 semitones against the
    // unshifted decode: the argmax mel bin should move up by a sizable
    // fraction of the octave-equivalent bin offset. Recorded: the mean
    // measured shift is 2.54 bins against an octave-equivalent offset of
    // 3.88 bins on this corpus.
    double mean_shift = 0.0;
    double mean_expected = 0.0;
    std::size_t count = 0;
    for (const auto& utt : data) {
      ForwardInput in;
      in.phoneme_ids = utt.phoneme_ids;
      in.speaker_id = utt.speaker_id;
      in.gt_durations = utt.durations_frames;
      in.gt_pitch_hz = utt.phoneme_pitch_hz;
      ForwardOptions base;
      base.use_gt_duration = true;
      base.use_gt_pitch = true;
      ForwardOptions octave = base;
      octave.pitch_shift_semitones = 12.0;
      ForwardOutput out0 = model.forward(in, base);
      ForwardOutput out12 = model.forward(in, octave);
      MelSpectrogram e0 = model.decode_single_path(out0.excitation_repr, false);
      MelSpectrogram e12 = model.decode_single_path(out12.excitation_repr, false);

      F0Track track = expand_pitch_to_frames(utt);
      REQUIRE(track.length() == e0.frames);
      for (std::size_t t = 0; t < track.length(); ++t) {
        if (!track.voiced[t]) continue;
        auto argmax_bin = [&](const MelSpectrogram& m) {
          std::size_t best = 0;
          for (std::size_t b = 1; b < m.bins; ++b) {
            if (m.at(t, b) > m.at(t, best)) best = b;
          }
          return static_cast<double>(best);
        };
        mean_shift += argmax_bin(e12) - argmax_bin(e0);
        mean_expected += static_cast<double>(pitch_to_bin(cc, 2.0 * track.frame_hz[t])) -
                         static_cast<double>(pitch_to_bin(cc, track.frame_hz[t]));
        ++count;
      }
    }
    REQUIRE(count > 0);
    mean_shift /= static_cast<double>(count);
    mean_expected /= static_cast<double>(count);

    CHECK(mean_expected > 3.0);  // sanity: an octave spans several bins here
    // Recorded regression value: 2.541 bins of mean upward movement.
    CHECK(mean_shift == doctest::Approx(2.541).epsilon(0.15));
    CHECK(mean_shift > 1.5);
    CHECK(mean_shift < mean_expected + 0.5);
  }
}
