#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sketchhash/gradcheck.hpp"

namespace sketchhash {

/// Entry point of the `sketchhash` tool. Writes results to `out`, diagnostics
/// to `err`, and returns the process exit status.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct EncoderGradCheckOptions {
  std::size_t samples = 24;  ///< coordinates per large tensor; 0 checks all
  double epsilon = 1e-6;         ///< step behind ReLU or max-pool kinks
  double smooth_epsilon = 1e-4;  ///< step where the function is smooth or polynomial
  double tolerance = 1e-4;            ///< full objective
  double primitive_tolerance = 1e-6;  ///< each primitive in isolation
};

struct EncoderGradCheck {
  GradCheckResult objective;  ///< full objective through both branches
  GradCheckResult primitives; ///< worst over the isolated primitive checks
  std::size_t parameters = 0;
  bool pass = false;
};

/// Gradient check of the full objective on a four-sketch synthetic batch and
/// of each primitive in isolation. At a step of 1e-6 the smooth recurrent
/// coordinates, whose gradients can be near 1e-8, are limited by roundoff in
/// the loss, so they use the larger smooth step.
EncoderGradCheck gradcheck_encoder(const std::string& profile, std::uint64_t seed,
                                   const EncoderGradCheckOptions& options = {});

}  // namespace sketchhash
