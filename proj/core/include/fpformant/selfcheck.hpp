#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace fpf {

struct SelfCheckOptions {
  /// Random seeds drawn per gradient section (the op suite and the
  /// end-to-end model check each run this many independent trials).
  std::size_t gradient_seeds = 100;
  /// Test hook: routes one probe through an identity op whose backward is
  /// deliberately wrong by 10%, which the suite must flag as a failure.
  bool inject_gradient_fault = false;
};

struct SelfCheckSection {
  std::string name;
  double max_error = 0.0;  // worst error observed across the section
  double tolerance = 0.0;  // section passes iff max_error <= tolerance
  bool passed = false;
};

struct SelfCheckReport {
  std::vector<SelfCheckSection> sections;
  double seconds = 0.0;

  bool all_passed() const {
    for (const auto& s : sections)
      if (!s.passed) return false;
    return !sections.empty();
  }
};

/// Numeric self-verification suite: finite-difference gradient checks for
/// every differentiable op and for the end-to-end model on a small
/// configuration, the pitch-shift ratio table, and the metric oracles
/// (hand-enumerated pitch-error cases, distortion self-distance and
/// single-coefficient value, cepstral round-trip). When `out` is non-null
/// each section prints one aligned line with its max observed error.
SelfCheckReport run_selfcheck(const SelfCheckOptions& opts = {},
                              std::ostream* out = nullptr);

}  // namespace fpf
