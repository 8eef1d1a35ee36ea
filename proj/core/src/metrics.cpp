#include "fpformant/metrics.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace fpf {

namespace {

constexpr double kGrossPitchThreshold = 0.2;

/// Orthonormal DCT-II basis entry: a_k * cos(pi * (2n + 1) * k / (2M)).
double dct_basis(std::size_t k, std::size_t n, std::size_t m) {
  double a = k == 0 ? std::sqrt(1.0 / static_cast<double>(m))
                    : std::sqrt(2.0 / static_cast<double>(m));
  return a * std::cos(std::numbers::pi * (2.0 * n + 1.0) * k /
                      (2.0 * static_cast<double>(m)));
}

}  // namespace

double ffe(const F0Track& reference, const F0Track& test) {
  if (reference.frame_hz.size() != reference.voiced.size() ||
      test.frame_hz.size() != test.voiced.size()) {
    throw ContractError("ffe: track has mismatched hz/voicing lengths");
  }
  if (reference.length() != test.length()) {
    throw ContractError("ffe: reference length " +
                        std::to_string(reference.length()) +
                        " != test length " + std::to_string(test.length()));
  }
  std::size_t t_total = reference.length();
  if (t_total == 0) throw InputError("ffe: empty tracks");

  std::size_t errors = 0;
  for (std::size_t t = 0; t < t_total; ++t) {
    bool vr = reference.voiced[t];
    bool vt = test.voiced[t];
    if (vr != vt) {
      ++errors;
    } else if (vr && vt) {
      double fr = reference.frame_hz[t];
      double ft = test.frame_hz[t];
      if (std::abs(ft - fr) / fr > kGrossPitchThreshold) ++errors;
    }
  }
  return 100.0 * static_cast<double>(errors) / static_cast<double>(t_total);
}

MelCepstrum mel_to_cepstrum(const MelSpectrogram& mel, std::size_t K) {
  std::size_t m = mel.bins;
  if (K >= m) {
    throw ConfigError("mel_to_cepstrum: order " + std::to_string(K) +
                      " must be below bin count " + std::to_string(m));
  }
  MelCepstrum cep;
  cep.frames = mel.frames;
  cep.coeffs = K + 1;
  cep.values.assign(cep.frames * cep.coeffs, 0.0);
  // basis[k][n], built once per call
  std::vector<double> basis((K + 1) * m);
  for (std::size_t k = 0; k <= K; ++k)
    for (std::size_t n = 0; n < m; ++n)
      basis[k * m + n] = dct_basis(k, n, m);
  for (std::size_t t = 0; t < mel.frames; ++t) {
    const double* frame = mel.values.data() + t * m;
    double* out = cep.values.data() + t * cep.coeffs;
    for (std::size_t k = 0; k <= K; ++k) {
      const double* row = basis.data() + k * m;
      double acc = 0.0;
      for (std::size_t n = 0; n < m; ++n) acc += row[n] * frame[n];
      out[k] = acc;
    }
  }
  return cep;
}

double mcd(const MelSpectrogram& a, const MelSpectrogram& b, std::size_t K) {
  if (!a.same_shape(b)) {
    throw ContractError("mcd: shape mismatch " + std::to_string(a.frames) +
                        "x" + std::to_string(a.bins) + " vs " +
                        std::to_string(b.frames) + "x" +
                        std::to_string(b.bins));
  }
  MelCepstrum ca = mel_to_cepstrum(a, K);
  MelCepstrum cb = mel_to_cepstrum(b, K);
  double scale = 10.0 / std::numbers::ln10;
  double total = 0.0;
  for (std::size_t t = 0; t < ca.frames; ++t) {
    double sq = 0.0;
    for (std::size_t k = 1; k <= K; ++k) {
      double d = ca.at(t, k) - cb.at(t, k);
      sq += d * d;
    }
    total += scale * std::sqrt(2.0 * sq);
  }
  return ca.frames == 0 ? 0.0 : total / static_cast<double>(ca.frames);
}

std::vector<double> spectral_envelope(std::span<const double> mel_frame,
                                      std::size_t order) {
  std::size_t m = mel_frame.size();
  if (order >= m) {
    throw ConfigError("spectral_envelope: order " + std::to_string(order) +
                      " must be below bin count " + std::to_string(m));
  }
  // Forward DCT up to `order`, then synthesis from the kept coefficients;
  // dropped coefficients are zero so they vanish from the inverse sum.
  std::vector<double> kept(order + 1, 0.0);
  for (std::size_t k = 0; k <= order; ++k) {
    double acc = 0.0;
    for (std::size_t n = 0; n < m; ++n)
      acc += dct_basis(k, n, m) * mel_frame[n];
    kept[k] = acc;
  }
  std::vector<double> env(m, 0.0);
  for (std::size_t n = 0; n < m; ++n) {
    double acc = 0.0;
    for (std::size_t k = 0; k <= order; ++k)
      acc += dct_basis(k, n, m) * kept[k];
    env[n] = acc;
  }
  return env;
}

}  // namespace fpf
