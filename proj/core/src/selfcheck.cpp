#include "fpformant/selfcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <utility>
#include <vector>

#include "fpformant/data.hpp"
#include "fpformant/mel.hpp"
#include "fpformant/metrics.hpp"
#include "fpformant/model.hpp"
#include "fpformant/pitch.hpp"
#include "fpformant/tensor.hpp"

namespace fpf {
namespace {

// Identity whose backward scales the incoming gradient by 1.1 — a planted
// bug the gradient checker must catch when the fault hook is enabled.
Tensor faulty_identity(const Tensor& a) {
  std::vector<double> v(a.values().begin(), a.values().end());
  Tensor out(a.shape(), std::move(v), a.requires_grad());
  if (Tape* tape = Tape::active(); tape != nullptr && a.requires_grad()) {
    detail::TensorNode* an = a.node();
    detail::TensorNode* on = out.node();
    tape->record(
        [an, on] {
          if (on->grad.empty()) return;
          an->ensure_grad();
          for (std::size_t i = 0; i < on->grad.size(); ++i)
            an->grad[i] += 1.1 * on->grad[i];
        },
        out);
  }
  return out;
}

// Uniform values kept away from zero (magnitude in [0.2, 0.8]) so checks on
// kinked ops never straddle the kink within the finite-difference step.
Tensor away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) {
    double r = u(rng);
    double sign = r < 0.0 ? -1.0 : 1.0;
    x = sign * (0.2 + 0.6 * std::abs(r));
  }
  return Tensor(shape, std::move(v), true);
}

// One gradient probe: max relative error of f's gradient at x.
struct Probe {
  Tensor x;                    // probed tensor (requires gradients)
  std::function<Tensor(const Tensor&)> f;  // scalar loss of the probe
};

double run_probes(const std::vector<Probe>& probes) {
  double worst = 0.0;
  for (const Probe& p : probes) worst = std::max(worst, grad_check(p.f, p.x));
  return worst;
}

// ---- gradient sections -------------------------------------------------

double elementwise_gradient_errors(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto probe = [&](Shape s) { return Tensor::uniform(s, 1.0, rng, true); };
  auto fixed = [&](Shape s) { return Tensor::uniform(s, 1.0, rng, false); };

  Tensor a = probe({3, 4}), b = probe({3, 4});
  Tensor other = fixed({3, 4});
  Tensor coeff = fixed({3, 4});
  Tensor kinked = away_from_zero({3, 4}, rng);

  std::vector<Probe> probes;
  probes.push_back({a, [=](const Tensor& x) { return sum(mul(add(x, other), coeff)); }});
  probes.push_back({b, [=](const Tensor& x) { return sum(mul(add(other, x), coeff)); }});
  probes.push_back({a, [=](const Tensor& x) { return sum(mul(sub(x, other), coeff)); }});
  probes.push_back({b, [=](const Tensor& x) { return sum(mul(sub(other, x), coeff)); }});
  probes.push_back({a, [=](const Tensor& x) { return sum(mul(mul(x, other), coeff)); }});
  probes.push_back({a, [=](const Tensor& x) { return sum(mul(scale(x, 1.37), coeff)); }});
  probes.push_back({a, [=](const Tensor& x) { return sum(mul(add_scalar(x, 0.41), coeff)); }});
  probes.push_back({kinked, [=](const Tensor& x) { return sum(mul(relu(x), coeff)); }});
  probes.push_back({a, [](const Tensor& x) { return sum(x); }});
  return run_probes(probes);
}

double structural_gradient_errors(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto probe = [&](Shape s) { return Tensor::uniform(s, 1.0, rng, true); };
  auto fixed = [&](Shape s) { return Tensor::uniform(s, 1.0, rng, false); };

  Tensor mat = probe({3, 4});
  Tensor row = probe({4});
  Tensor mat_fixed = fixed({3, 4});
  Tensor row_fixed = fixed({4});
  Tensor coeff34 = fixed({3, 4});
  Tensor coeff26 = fixed({2, 6});
  Tensor coeff43 = fixed({4, 3});
  Tensor wide = probe({3, 6});
  Tensor coeff_slice = fixed({3, 3});
  Tensor left = probe({3, 2});
  Tensor right_fixed = fixed({3, 3});
  Tensor coeff_cat = fixed({3, 5});
  Tensor coeff_rep = fixed({6, 4});
  Tensor table = probe({5, 4});
  Tensor coeff_emb = fixed({5, 4});
  std::uint64_t drop_seed = seed * 2654435761ULL + 7ULL;

  std::vector<Probe> probes;
  probes.push_back({mat, [=](const Tensor& x) { return sum(mul(add_row(x, row_fixed), coeff34)); }});
  probes.push_back({row, [=](const Tensor& x) { return sum(mul(add_row(mat_fixed, x), coeff34)); }});
  probes.push_back({mat, [=](const Tensor& x) { return sum(mul(reshape(x, {2, 6}), coeff26)); }});
  probes.push_back({mat, [=](const Tensor& x) { return sum(mul(transpose(x), coeff43)); }});
  probes.push_back({wide, [=](const Tensor& x) { return sum(mul(slice_cols(x, 1, 4), coeff_slice)); }});
  probes.push_back({left, [=](const Tensor& x) {
                      std::vector<Tensor> parts = {x, right_fixed};
                      return sum(mul(concat_cols(parts), coeff_cat));
                    }});
  probes.push_back({mat, [=](const Tensor& x) {
                      const std::vector<std::int64_t> repeats = {2, 1, 3};
                      return sum(mul(repeat_rows(x, repeats), coeff_rep));
                    }});
  probes.push_back({mat, [=](const Tensor& x) {
                      std::mt19937_64 drop_rng(drop_seed);  // same mask per call
                      return sum(mul(dropout(x, 0.3, drop_rng), coeff34));
                    }});
  probes.push_back({table, [=](const Tensor& x) {
                      // Repeated ids exercise gradient scatter-accumulation.
                      const std::vector<std::int64_t> ids = {0, 2, 1, 2, 4};
                      return sum(mul(embedding_lookup(x, ids), coeff_emb));
                    }});
  return run_probes(probes);
}

double kernel_gradient_errors(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto probe = [&](Shape s) { return Tensor::uniform(s, 1.0, rng, true); };
  auto fixed = [&](Shape s) { return Tensor::uniform(s, 1.0, rng, false); };

  Tensor a = probe({3, 4});
  Tensor bmat = probe({4, 5});
  Tensor a_fixed = fixed({3, 4});
  Tensor b_fixed = fixed({4, 5});
  Tensor coeff35 = fixed({3, 5});
  Tensor logits = probe({3, 5});
  Tensor ln_x = probe({4, 6});
  Tensor ln_gain = probe({6});
  Tensor ln_bias = probe({6});
  Tensor ln_gain_fixed = fixed({6});
  Tensor ln_bias_fixed = fixed({6});
  Tensor coeff46 = fixed({4, 6});
  Tensor cx = probe({6, 3});
  Tensor ck = probe({3, 3, 4});
  Tensor cb = probe({4});
  Tensor cx_fixed = fixed({6, 3});
  Tensor ck_fixed = fixed({3, 3, 4});
  Tensor cb_fixed = fixed({4});
  Tensor coeff64 = fixed({6, 4});

  std::vector<Probe> probes;
  probes.push_back({a, [=](const Tensor& x) { return sum(mul(matmul(x, b_fixed), coeff35)); }});
  probes.push_back({bmat, [=](const Tensor& x) { return sum(mul(matmul(a_fixed, x), coeff35)); }});
  probes.push_back({logits, [=](const Tensor& x) { return sum(mul(softmax(x, 1), coeff35)); }});
  probes.push_back({logits, [=](const Tensor& x) { return sum(mul(softmax(x, 0), coeff35)); }});
  probes.push_back({ln_x, [=](const Tensor& x) {
                      return sum(mul(layer_norm(x, ln_gain_fixed, ln_bias_fixed, 1e-5), coeff46));
                    }});
  probes.push_back({ln_gain, [=](const Tensor& x) {
                      return sum(mul(layer_norm(ln_x, x, ln_bias_fixed, 1e-5), coeff46));
                    }});
  probes.push_back({ln_bias, [=](const Tensor& x) {
                      return sum(mul(layer_norm(ln_x, ln_gain_fixed, x, 1e-5), coeff46));
                    }});
  probes.push_back({cx, [=](const Tensor& x) { return sum(mul(conv1d(x, ck_fixed, cb_fixed), coeff64)); }});
  probes.push_back({ck, [=](const Tensor& x) { return sum(mul(conv1d(cx_fixed, x, cb_fixed), coeff64)); }});
  probes.push_back({cb, [=](const Tensor& x) { return sum(mul(conv1d(cx_fixed, ck_fixed, x), coeff64)); }});
  return run_probes(probes);
}

// End-to-end: teacher-forced forward of a 3-phoneme input through a small
// model (d_model 8, 2 heads, 4 mel bins); per seed the model re-initializes
// and a rotating subset of parameter tensors is swept so that across the
// seed loop every parameter is checked many times.
double end_to_end_gradient_error(std::uint64_t seed, std::size_t rotation) {
  ModelConfig mc;
  mc.vocab_size = 5;
  mc.n_speakers = 2;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.head_dim = 4;
  mc.conv_kernel = 3;
  mc.conv_hidden = 8;
  mc.n_encoder_blocks = 1;
  mc.n_generator_blocks = 1;
  mc.n_decoder_blocks = 1;
  mc.n_mel_bins = 4;
  mc.max_frames = 64;

  Model model(mc);
  model.init(seed);
  // Realistic speaker statistics keep the standardized pitch inputs O(1);
  // raw-Hz inputs would saturate the excitation attention softmax and grind
  // those gradients below finite-difference resolution.
  PitchStats stats;
  stats.mean_hz = {140.0, 180.0};
  stats.std_hz = {45.0, 60.0};
  model.set_pitch_stats(std::move(stats));

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  // Small mixing coefficients keep the loss magnitude low so the secant's
  // floating-point cancellation stays below the pass tolerance even for the
  // graph's smallest healthy gradient elements.
  auto fixed = [&](Shape s) { return Tensor::uniform(s, 0.05, rng, false); };
  const std::size_t total_frames = 5;  // durations {2, 1, 2}
  Tensor c1 = fixed({total_frames, mc.n_mel_bins});
  Tensor c2 = fixed({total_frames, mc.n_mel_bins});
  Tensor c3 = fixed({total_frames, mc.n_mel_bins});
  Tensor c4 = fixed({3});
  Tensor c5 = fixed({3});

  const std::vector<std::int64_t> phonemes = {1, 3, 2};
  const std::vector<std::int64_t> durations = {2, 1, 2};
  const std::vector<double> pitch = {110.0, 0.0, 220.0};
  ForwardInput in;
  in.phoneme_ids = phonemes;
  in.speaker_id = seed % mc.n_speakers;
  in.gt_durations = durations;
  in.gt_pitch_hz = pitch;
  ForwardOptions fo;
  fo.use_gt_duration = true;
  fo.use_gt_pitch = true;

  auto loss = [&](const Tensor&) {
    ForwardOutput o = model.forward(in, fo);
    Tensor l = sum(mul(o.mel1, c1));
    l = add(l, sum(mul(o.mel2, c2)));
    l = add(l, sum(mul(o.mel3, c3)));
    l = add(l, sum(mul(o.predicted_log_durations, c4)));
    l = add(l, sum(mul(o.predicted_pitch_std, c5)));
    return l;
  };

  auto params = model.named_parameters();
  // Multi-step checking separates the two finite-difference artifacts a deep
  // graph with ReLUs exhibits (kink straddles at large steps, cancellation
  // noise at small steps) from genuine backward bugs, which no step masks.
  const double steps[] = {1e-4, 1e-5, 1e-6};
  const std::size_t per_seed = 6;
  double worst = 0.0;
  for (std::size_t k = 0; k < per_seed; ++k) {
    std::size_t idx = (rotation * per_seed + k) % params.size();
    worst = std::max(worst, grad_check(loss, params[idx].second,
                                       std::span<const double>(steps)));
  }
  return worst;
}

// ---- non-gradient sections ----------------------------------------------

double ratio_table_error() {
  const std::pair<double, double> table[] = {
      {-8.0, 0.63}, {-6.0, 0.71}, {-4.0, 0.79},
      {4.0, 1.26},  {6.0, 1.41},  {8.0, 1.59},
  };
  double worst = 0.0;
  for (const auto& [semitones, expected] : table)
    worst = std::max(worst, std::abs(semitone_ratio(semitones) - expected));
  return worst;
}

double ratio_exactness_error() {
  double worst = std::abs(semitone_ratio(12.0) - 2.0);
  worst = std::max(worst, std::abs(semitone_ratio(-12.0) - 0.5));
  const double grid[] = {-8.5, -4.0, -1.25, 0.0, 3.0, 7.5, 12.0};
  for (double a : grid) {
    for (double b : grid) {
      double direct = semitone_ratio(a + b);
      double composed = semitone_ratio(a) * semitone_ratio(b);
      worst = std::max(worst, std::abs(composed - direct) / std::abs(direct));
    }
  }
  return worst;
}

double pitch_metric_oracle_error() {
  auto constant_track = [](std::size_t n, double hz) {
    F0Track t;
    t.frame_hz.assign(n, hz);
    t.voiced.assign(n, hz > 0.0);
    return t;
  };
  double worst = 0.0;

  F0Track same = constant_track(8, 120.0);
  worst = std::max(worst, std::abs(ffe(same, same) - 0.0));

  F0Track voiced6 = constant_track(6, 150.0);
  F0Track unvoiced6 = constant_track(6, 0.0);
  worst = std::max(worst, std::abs(ffe(voiced6, unvoiced6) - 100.0));

  // T=10: two voicing flips plus one gross pitch deviation -> 30%.
  F0Track ref, test;
  for (int t = 0; t < 10; ++t) {
    bool v = t < 6;
    ref.frame_hz.push_back(v ? 100.0 : 0.0);
    ref.voiced.push_back(v);
  }
  for (int t = 0; t < 10; ++t) {
    bool v = t < 8;
    test.frame_hz.push_back(v ? (t == 2 ? 130.0 : 100.0) : 0.0);
    test.voiced.push_back(v);
  }
  worst = std::max(worst, std::abs(ffe(ref, test) - 30.0));

  // Deviation measured against the reference: 25% one way, exactly 20%
  // (not an error) the other way.
  F0Track hz100 = constant_track(1, 100.0);
  F0Track hz125 = constant_track(1, 125.0);
  worst = std::max(worst, std::abs(ffe(hz100, hz125) - 100.0));
  worst = std::max(worst, std::abs(ffe(hz125, hz100) - 0.0));
  return worst;
}

MelSpectrogram random_mel(std::size_t frames, std::size_t bins,
                          std::mt19937_64& rng) {
  MelSpectrogram m(frames, bins);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < bins; ++b) m.at(t, b) = u(rng);
  return m;
}

double distortion_self_distance_error() {
  std::mt19937_64 rng(123);
  MelSpectrogram a = random_mel(7, 16, rng);
  return std::abs(mcd(a, a, 13));
}

double distortion_single_coefficient_error() {
  const std::size_t m = 16;
  std::mt19937_64 rng(321);
  MelSpectrogram a = random_mel(1, m, rng);
  MelSpectrogram b = a;
  for (std::size_t n = 0; n < m; ++n) {
    double basis = std::sqrt(2.0 / m) *
                   std::cos(std::numbers::pi * (2.0 * n + 1.0) / (2.0 * m));
    b.at(0, n) += basis;
  }
  double want = (10.0 / std::numbers::ln10) * std::sqrt(2.0);
  return std::abs(mcd(a, b, 13) - want);
}

double cepstral_round_trip_error() {
  std::mt19937_64 rng(213);
  const std::size_t m = 16;
  MelSpectrogram mel = random_mel(1, m, rng);
  std::vector<double> frame(m);
  for (std::size_t n = 0; n < m; ++n) frame[n] = mel.at(0, n);
  std::vector<double> back = spectral_envelope(frame, m - 1);
  double worst = 0.0;
  for (std::size_t n = 0; n < m; ++n)
    worst = std::max(worst, std::abs(back[n] - frame[n]));
  return worst;
}

double injected_fault_error(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor x = Tensor::uniform({3, 4}, 1.0, rng, true);
  Tensor coeff = Tensor::uniform({3, 4}, 1.0, rng, false);
  // Run through the multi-step checker to prove the per-element minimum
  // cannot mask a genuinely wrong backward: the 10% skew survives every step.
  const double steps[] = {1e-4, 1e-5, 1e-6};
  return grad_check(
      [=](const Tensor& t) { return sum(mul(faulty_identity(t), coeff)); }, x,
      std::span<const double>(steps));
}

}  // namespace

SelfCheckReport run_selfcheck(const SelfCheckOptions& opts, std::ostream* out) {
  const auto t0 = std::chrono::steady_clock::now();
  SelfCheckReport report;

  auto add_section = [&](std::string name, double max_error, double tolerance) {
    SelfCheckSection s;
    s.name = std::move(name);
    s.max_error = max_error;
    s.tolerance = tolerance;
    s.passed = max_error <= tolerance;
    if (out != nullptr) {
      *out << std::left << std::setw(38) << s.name << " max err "
           << std::scientific << std::setprecision(3) << s.max_error
           << "  tol " << std::setprecision(1) << s.tolerance << "  "
           << (s.passed ? "pass" : "FAIL") << "\n";
    }
    report.sections.push_back(std::move(s));
  };

  const std::size_t seeds = std::max<std::size_t>(opts.gradient_seeds, 1);
  double elem = 0.0, structural = 0.0, kernel = 0.0, end_to_end = 0.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    std::uint64_t seed = 1000003ULL * (s + 1);
    elem = std::max(elem, elementwise_gradient_errors(seed));
    structural = std::max(structural, structural_gradient_errors(seed));
    kernel = std::max(kernel, kernel_gradient_errors(seed));
    end_to_end = std::max(end_to_end, end_to_end_gradient_error(seed, s));
  }
  add_section("gradients: elementwise ops", elem, 1e-4);
  add_section("gradients: structural ops", structural, 1e-4);
  add_section("gradients: attention/conv kernels", kernel, 1e-4);
  add_section("gradients: end-to-end model", end_to_end, 1e-4);

  add_section("pitch-shift ratio table", ratio_table_error(), 5e-3);
  add_section("pitch-shift octave/composition", ratio_exactness_error(), 1e-12);
  add_section("pitch error metric hand cases", pitch_metric_oracle_error(), 0.0);
  add_section("distortion metric self-distance", distortion_self_distance_error(), 0.0);
  add_section("distortion metric single-coeff", distortion_single_coefficient_error(), 1e-9);
  add_section("cepstral round-trip", cepstral_round_trip_error(), 1e-12);

  if (opts.inject_gradient_fault) {
    add_section("injected-fault detector", injected_fault_error(42), 1e-4);
  }

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  if (out != nullptr) {
    *out << (report.all_passed() ? "selfcheck: PASS" : "selfcheck: FAIL")
         << std::fixed << std::setprecision(2) << " (" << report.seconds
         << " s)\n";
  }
  return report;
}

}  // namespace fpf
