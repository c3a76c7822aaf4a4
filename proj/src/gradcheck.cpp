#include "mtdl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "mtdl/errors.hpp"

namespace mtdl {

double gradcheck_rel_err(double analytic, double numeric) {
  double ma = std::fabs(analytic);
  double mn = std::fabs(numeric);
  if (ma < 1e-8 && mn < 1e-8) return 0.0;
  return std::fabs(analytic - numeric) / std::max(ma, mn);
}

namespace {

double forward_loss(const ModelParams& params, const ModelConfig& config,
                    const FeatureSequence& seq, const ForwardOptions& options) {
  Tape tape;
  ForwardResult fwd = forward_sequence(tape, params, config, seq, options);
  NodeId loss = sequence_loss(tape, fwd.logits, seq.label);
  return tape.scalar_value(loss);
}

std::vector<std::size_t> pick_coords(std::size_t numel, std::size_t budget, std::mt19937_64& rng) {
  std::vector<std::size_t> coords;
  if (budget == 0 || budget >= numel) {
    coords.resize(numel);
    for (std::size_t i = 0; i < numel; ++i) coords[i] = i;
    return coords;
  }
  coords.push_back(0);
  std::uniform_int_distribution<std::size_t> pick(0, numel - 1);
  while (coords.size() < budget) coords.push_back(pick(rng));
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  return coords;
}

GradCheckReport run_check(ModelParams& params, const ModelConfig& config,
                          const FeatureSequence& seq, const ForwardOptions& options,
                          const GradCheckOptions& gc) {
  // Analytic gradients on the smooth graph.
  std::vector<Tensor> analytic;
  {
    Tape tape;
    BoundModel bound = bind_model(tape, params);
    ForwardResult fwd = forward_sequence(tape, bound, config, seq, options);
    NodeId loss = sequence_loss(tape, fwd.logits, seq.label);
    tape.backward(loss);
    analytic.reserve(bound.leaves.size());
    for (NodeId leaf : bound.leaves) analytic.push_back(tape.grad(leaf));
  }

  std::mt19937_64 coord_rng(gc.coord_seed);
  GradCheckReport report;
  std::vector<ParamView> views = param_views(params);
  for (std::size_t p = 0; p < views.size(); ++p) {
    Tensor& theta = *views[p].tensor;
    GradCheckEntry entry;
    entry.param = views[p].name;
    for (std::size_t idx : pick_coords(theta.numel(), gc.coords_per_param, coord_rng)) {
      double keep = theta.data[idx];
      theta.data[idx] = keep + gc.epsilon;
      double up = forward_loss(params, config, seq, options);
      theta.data[idx] = keep - gc.epsilon;
      double down = forward_loss(params, config, seq, options);
      theta.data[idx] = keep;
      double numeric = (up - down) / (2.0 * gc.epsilon);
      double err = gradcheck_rel_err(analytic[p].data[idx], numeric);
      if (err >= entry.max_rel_err) {
        entry.max_rel_err = err;
        entry.worst_index = idx;
        entry.worst_analytic = analytic[p].data[idx];
        entry.worst_numeric = numeric;
      }
      ++entry.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace

GradCheckReport check_frozen(ModelParams& params, const ModelConfig& config,
                             const FeatureSequence& seq, const GradCheckOptions& options) {
  // Record the decisions once from an unperturbed hard pass, then pin them
  // for every evaluation so finite differences see a smooth function.
  std::vector<double> pinned(seq.length);
  {
    Tape tape;
    ForwardResult fwd = forward_sequence(tape, params, config, seq);
    for (std::size_t t = 0; t < seq.length; ++t) {
      pinned[t] = fwd.trace.frames[t].hard;
    }
  }
  ForwardOptions fo;
  fo.mode = DecisionMode::kFrozen;
  fo.pinned = &pinned;
  return run_check(params, config, seq, fo, options);
}

GradCheckReport check_surrogate(ModelParams& params, const ModelConfig& config,
                                const FeatureSequence& seq, const GradCheckOptions& options) {
  ForwardOptions fo;
  fo.mode = DecisionMode::kSurrogate;
  return run_check(params, config, seq, fo, options);
}

std::string format_report(const GradCheckReport& report) {
  std::string out = "parameter                      checked  max_rel_err   worst_index\n";
  char buf[160];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof(buf), "%-30s %7zu  %11.3e  %11zu\n", e.param.c_str(), e.checked,
                  e.max_rel_err, e.worst_index);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "max relative error: %.3e\n", report.max_rel_err);
  out += buf;
  return out;
}

FeatureSequence random_sequence(std::size_t length, std::size_t dim, std::size_t classes,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> cls(0, static_cast<std::uint32_t>(classes - 1));
  FeatureSequence seq;
  seq.length = length;
  seq.dim = dim;
  seq.label = cls(rng);
  seq.features.resize(length * dim);
  for (double& v : seq.features) v = n(rng);
  return seq;
}

}  // namespace mtdl
