#pragma once

#include <cstddef>
#include <vector>

#include "fpformant/tensor.hpp"

namespace fpf {

/// Log-magnitude mel spectrogram, row-major [frames x bins]. Plain data;
/// convert to a Tensor to participate in gradient computation.
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values;

  MelSpectrogram() = default;
  MelSpectrogram(std::size_t frames_, std::size_t bins_)
      : frames(frames_), bins(bins_), values(frames_ * bins_, 0.0) {}

  double& at(std::size_t t, std::size_t m) { return values[t * bins + m]; }
  double at(std::size_t t, std::size_t m) const { return values[t * bins + m]; }

  bool same_shape(const MelSpectrogram& other) const {
    return frames == other.frames && bins == other.bins;
  }
  bool operator==(const MelSpectrogram& other) const {
    return frames == other.frames && bins == other.bins &&
           values == other.values;
  }

  Tensor to_tensor(bool requires_grad = false) const {
    return Tensor(Shape{frames, bins}, values, requires_grad);
  }
  static MelSpectrogram from_tensor(const Tensor& t) {
    if (t.rank() != 2) {
      throw DimensionError("mel from_tensor: expected rank-2 tensor");
    }
    MelSpectrogram mel(t.dim(0), t.dim(1));
    mel.values.assign(t.values().begin(), t.values().end());
    return mel;
  }
};

}  // namespace fpf
