#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fpformant/metrics.hpp"

using namespace fpf;

namespace {

/// Independent long-double DCT oracle: c_k = a_k sum_n x_n cos(pi(2n+1)k/2M).
double naive_dct_coeff(std::span<const double> x, std::size_t k) {
  std::size_t m = x.size();
  long double a = k == 0 ? std::sqrt(1.0L / m) : std::sqrt(2.0L / m);
  long double acc = 0.0L;
  for (std::size_t n = 0; n < m; ++n)
    acc += static_cast<long double>(x[n]) *
           std::cos(std::numbers::pi_v<long double> * (2.0L * n + 1.0L) * k /
                    (2.0L * m));
  return static_cast<double>(a * acc);
}

F0Track constant_track(std::size_t t, double hz) {
  F0Track track;
  track.frame_hz.assign(t, hz);
  track.voiced.assign(t, hz > 0.0);
  return track;
}

MelSpectrogram random_mel(std::size_t frames, std::size_t bins,
                          std::mt19937_64& rng) {
  MelSpectrogram mel(frames, bins);
  std::uniform_real_distribution<double> dist(-1.0, 2.0);
  for (double& v : mel.values) v = dist(rng);
  return mel;
}

double total_variation(std::span<const double> x) {
  double tv = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) tv += std::abs(x[i] - x[i - 1]);
  return tv;
}

}  // namespace

TEST_CASE("ffe: identical tracks score zero") {
  F0Track a = constant_track(8, 120.0);
  CHECK(ffe(a, a) == 0.0);
}

TEST_CASE("ffe: total voicing disagreement scores one hundred") {
  F0Track ref = constant_track(6, 150.0);
  F0Track test = constant_track(6, 0.0);
  CHECK(ffe(ref, test) == 100.0);
}

TEST_CASE("ffe: hand-enumerated mixed case scores thirty percent") {
  // T=10. Reference: frames 0..5 voiced at 100 Hz, 6..9 unvoiced.
  // Test: frames 6,7 flipped to voiced (2 voicing errors); frame 2 voiced
  // at 130 Hz -> |130-100|/100 = 0.30 > 0.20 (1 gross pitch error).
  // Expected: 3 of 10 frames in error -> 30%.
  F0Track ref, test;
  for (int t = 0; t < 10; ++t) {
    bool v = t < 6;
    ref.frame_hz.push_back(v ? 100.0 : 0.0);
    ref.voiced.push_back(v);
  }
  for (int t = 0; t < 10; ++t) {
    bool v = t < 8;
    double hz = 0.0;
    if (v) hz = t == 2 ? 130.0 : 100.0;
    test.frame_hz.push_back(hz);
    test.voiced.push_back(v);
  }
  CHECK(ffe(ref, test) == doctest::Approx(30.0).epsilon(1e-12));
}

TEST_CASE("ffe: deviation ratio is taken against the reference") {
  // 100 -> 119 is 19% of reference (no error); reversed, 119 -> 100 is
  // only 15.9% of the new reference, still no error; but 100 -> 125 is a
  // gross error one way (25%) and exactly at 20% the other way (not >).
  F0Track a = constant_track(1, 100.0);
  F0Track b = constant_track(1, 119.0);
  CHECK(ffe(a, b) == 0.0);
  F0Track c = constant_track(1, 125.0);
  CHECK(ffe(a, c) == 100.0);
  CHECK(ffe(c, a) == 0.0);  // |100-125|/125 = 0.2, not strictly above
}

TEST_CASE("ffe: error contracts") {
  F0Track a = constant_track(4, 100.0);
  F0Track b = constant_track(5, 100.0);
  CHECK_THROWS_AS(ffe(a, b), ContractError);
  F0Track empty;
  CHECK_THROWS_AS(ffe(empty, empty), InputError);
}

TEST_CASE("ffe is bounded in [0, 100]") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> hz(80.0, 400.0);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 20; ++trial) {
    F0Track ref, test;
    for (int t = 0; t < 17; ++t) {
      bool vr = coin(rng), vt = coin(rng);
      ref.frame_hz.push_back(vr ? hz(rng) : 0.0);
      ref.voiced.push_back(vr);
      test.frame_hz.push_back(vt ? hz(rng) : 0.0);
      test.voiced.push_back(vt);
    }
    double e = ffe(ref, test);
    CHECK(e >= 0.0);
    CHECK(e <= 100.0);
  }
}

TEST_CASE("mel_to_cepstrum: constant frame concentrates in c0") {
  MelSpectrogram mel(1, 12);
  for (double& v : mel.values) v = 3.25;
  MelCepstrum cep = mel_to_cepstrum(mel, 11);
  CHECK(cep.at(0, 0) == doctest::Approx(3.25 * std::sqrt(12.0)).epsilon(1e-12));
  for (std::size_t k = 1; k < cep.coeffs; ++k)
    CHECK(std::abs(cep.at(0, k)) < 1e-12);
}

TEST_CASE("mel_to_cepstrum: linear in its input") {
  std::mt19937_64 rng(22);
  MelSpectrogram a = random_mel(3, 10, rng);
  MelSpectrogram b = random_mel(3, 10, rng);
  MelSpectrogram apb(3, 10);
  for (std::size_t i = 0; i < apb.values.size(); ++i)
    apb.values[i] = a.values[i] + b.values[i];
  MelCepstrum ca = mel_to_cepstrum(a, 6);
  MelCepstrum cb = mel_to_cepstrum(b, 6);
  MelCepstrum cab = mel_to_cepstrum(apb, 6);
  for (std::size_t i = 0; i < cab.values.size(); ++i)
    CHECK(cab.values[i] ==
          doctest::Approx(ca.values[i] + cb.values[i]).epsilon(1e-12));
}

TEST_CASE("mel_to_cepstrum matches the naive cosine-sum oracle") {
  std::mt19937_64 rng(23);
  MelSpectrogram mel = random_mel(4, 16, rng);
  MelCepstrum cep = mel_to_cepstrum(mel, 13);
  for (std::size_t t = 0; t < mel.frames; ++t) {
    std::span<const double> frame(mel.values.data() + t * mel.bins, mel.bins);
    for (std::size_t k = 0; k <= 13; ++k) {
      CHECK(cep.at(t, k) ==
            doctest::Approx(naive_dct_coeff(frame, k)).epsilon(1e-12));
    }
  }
}

TEST_CASE("mel_to_cepstrum rejects order >= bin count") {
  MelSpectrogram mel(2, 8);
  CHECK_THROWS_AS(mel_to_cepstrum(mel, 8), ConfigError);
  CHECK_THROWS_AS(mel_to_cepstrum(mel, 9), ConfigError);
  CHECK_NOTHROW(mel_to_cepstrum(mel, 7));
}

TEST_CASE("mcd: identical mels score zero") {
  std::mt19937_64 rng(24);
  MelSpectrogram mel = random_mel(5, 16, rng);
  CHECK(mcd(mel, mel) == 0.0);
}

TEST_CASE("mcd: invariant to per-frame constant offsets") {
  std::mt19937_64 rng(25);
  MelSpectrogram a = random_mel(5, 16, rng);
  MelSpectrogram b = a;
  std::uniform_real_distribution<double> off(-3.0, 3.0);
  for (std::size_t t = 0; t < b.frames; ++t) {
    double c = off(rng);
    for (std::size_t m = 0; m < b.bins; ++m) b.at(t, m) += c;
  }
  CHECK(mcd(a, b) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("mcd: unit difference in c1 gives (10/ln10) * sqrt(2) dB") {
  // Perturb one frame along the k=1 DCT basis vector; orthonormality makes
  // the cepstral difference exactly e_1.
  std::size_t m = 16;
  std::mt19937_64 rng(26);
  MelSpectrogram a = random_mel(1, m, rng);
  MelSpectrogram b = a;
  for (std::size_t n = 0; n < m; ++n) {
    double basis = std::sqrt(2.0 / m) *
                   std::cos(std::numbers::pi * (2.0 * n + 1.0) * 1.0 / (2.0 * m));
    b.at(0, n) += basis;
  }
  double want = (10.0 / std::numbers::ln10) * std::sqrt(2.0);
  CHECK(std::abs(mcd(a, b, 13) - want) < 1e-9);
}

TEST_CASE("mcd: shape mismatch is a contract error") {
  MelSpectrogram a(3, 16), b(4, 16), c(3, 12);
  CHECK_THROWS_AS(mcd(a, b), ContractError);
  CHECK_THROWS_AS(mcd(a, c), ContractError);
}

TEST_CASE("spectral_envelope: full order reconstructs exactly") {
  std::mt19937_64 rng(27);
  MelSpectrogram mel = random_mel(1, 16, rng);
  std::span<const double> frame(mel.values.data(), 16);
  std::vector<double> env = spectral_envelope(frame, 15);
  for (std::size_t n = 0; n < 16; ++n)
    CHECK(env[n] == doctest::Approx(frame[n]).epsilon(1e-12));
}

TEST_CASE("spectral_envelope: constant frame is a fixed point") {
  std::vector<double> frame(10, 1.75);
  for (std::size_t order : {0u, 3u, 9u}) {
    std::vector<double> env = spectral_envelope(frame, order);
    for (double v : env) CHECK(v == doctest::Approx(1.75).epsilon(1e-12));
  }
}

TEST_CASE("spectral_envelope smooths: total variation never grows") {
  std::mt19937_64 rng(28);
  for (int trial = 0; trial < 25; ++trial) {
    MelSpectrogram mel = random_mel(1, 16, rng);
    std::span<const double> frame(mel.values.data(), 16);
    std::vector<double> env = spectral_envelope(frame, 4);
    CHECK(total_variation(env) <= total_variation(frame) + 1e-12);
  }
}

TEST_CASE("spectral_envelope rejects order >= bin count") {
  std::vector<double> frame(8, 0.0);
  CHECK_THROWS_AS(spectral_envelope(frame, 8), ConfigError);
  CHECK_NOTHROW(spectral_envelope(frame, 7));
}
