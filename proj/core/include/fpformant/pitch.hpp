#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "fpformant/error.hpp"

namespace fpf {

/// Frequency ratio of a shift by `semitones`: 2^(semitones/12).
inline double semitone_ratio(double semitones) {
  return std::exp2(semitones / 12.0);
}

/// Multiply every voiced (positive) pitch by 2^(semitones/12); zeros encode
/// unvoiced positions and pass through untouched. Negative input pitch is
/// an InputError.
inline std::vector<double> shift_pitch(std::span<const double> pitch_hz,
                                       double semitones) {
  double ratio = semitone_ratio(semitones);
  std::vector<double> out;
  out.reserve(pitch_hz.size());
  for (double hz : pitch_hz) {
    if (hz < 0.0) {
      throw InputError("shift_pitch: negative pitch " + std::to_string(hz));
    }
    out.push_back(hz > 0.0 ? hz * ratio : 0.0);
  }
  return out;
}

}  // namespace fpf
