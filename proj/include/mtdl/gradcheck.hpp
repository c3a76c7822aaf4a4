#ifndef MTDL_GRADCHECK_HPP_
#define MTDL_GRADCHECK_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mtdl/model.hpp"

namespace mtdl {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Coordinates checked per parameter tensor (0 = every coordinate). Sampling
  // keeps the full-model sweep inside the runtime budget; picks are drawn
  // from coord_seed and always include the tensor's first coordinate.
  std::size_t coords_per_param = 32;
  std::uint64_t coord_seed = 9001;
};

struct GradCheckEntry {
  std::string param;
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;

  bool pass(double tolerance) const { return max_rel_err < tolerance; }
};

// Relative error with the dead-zone rule: coordinates where both magnitudes
// fall below 1e-8 compare as exactly equal.
double gradcheck_rel_err(double analytic, double numeric);

// Frozen-decision regime: decisions recorded from one hard forward pass are
// pinned as constants, making the network smooth. Controller parameters have
// no path to the loss and must show zero gradient both ways.
GradCheckReport check_frozen(ModelParams& params, const ModelConfig& config,
                             const FeatureSequence& seq, const GradCheckOptions& options = {});

// Surrogate regime: every decision is replaced by its soft score, so the
// whole network (controller included) is smooth and the analytic gradients —
// which equal the straight-through gradients by construction — must match
// finite differences.
GradCheckReport check_surrogate(ModelParams& params, const ModelConfig& config,
                                const FeatureSequence& seq, const GradCheckOptions& options = {});

// Plain-text table: parameter name, coordinates checked, max relative error,
// offending index.
std::string format_report(const GradCheckReport& report);

// Deterministic random sample for the check suites.
FeatureSequence random_sequence(std::size_t length, std::size_t dim, std::size_t classes,
                                std::uint64_t seed);

}  // namespace mtdl

#endif  // MTDL_GRADCHECK_HPP_
