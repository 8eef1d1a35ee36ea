#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fpformant/error.hpp"
#include "fpformant/mel.hpp"

namespace fpf {

/// Frame-level fundamental-frequency track. frame_hz[t] > 0 iff voiced[t].
struct F0Track {
  std::vector<double> frame_hz;
  std::vector<bool> voiced;

  std::size_t length() const { return frame_hz.size(); }
};

/// Truncated mel-cepstral coefficients, row-major [frames x (order+1)].
struct MelCepstrum {
  std::size_t frames = 0;
  std::size_t coeffs = 0;  // order + 1, containing c_0..c_order
  std::vector<double> values;

  double at(std::size_t t, std::size_t k) const { return values[t * coeffs + k]; }
};

/// F0 frame error, in percent of frames: counts voicing-decision mismatches
/// plus frames voiced on both sides whose pitch deviates from the reference
/// by more than 20%. Asymmetric: the deviation ratio uses the reference Hz.
double ffe(const F0Track& reference, const F0Track& test);

/// Orthonormal type-II DCT of each log-mel frame, truncated to c_0..c_K.
/// Requires K < number of mel bins.
MelCepstrum mel_to_cepstrum(const MelSpectrogram& mel, std::size_t K);

/// Mel-cepstral distortion in dB: mean over frames of
/// (10/ln 10) * sqrt(2 * sum_{k=1..K} (c_k^a - c_k^b)^2). c_0 is excluded,
/// making the measure invariant to per-frame constant offsets.
double mcd(const MelSpectrogram& a, const MelSpectrogram& b,
           std::size_t K = 13);

/// Smoothed spectral envelope of one log-mel frame by cepstral liftering:
/// forward DCT, keep coefficients 0..order, inverse DCT. order < bin count.
std::vector<double> spectral_envelope(std::span<const double> mel_frame,
                                      std::size_t order);

}  // namespace fpf
