#include "mtdl/controller.hpp"

#include <cmath>

#include "mtdl/errors.hpp"

namespace mtdl {

ControllerParams ControllerParams::init(std::size_t feature_dim, std::size_t context_dim,
                                        std::size_t history_dim, std::size_t hidden_dim,
                                        double threshold, std::mt19937_64& rng) {
  if (feature_dim == 0 || context_dim == 0 || history_dim == 0 || hidden_dim == 0) {
    throw ConfigError("controller: dimensions must be >= 1");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("controller: threshold " + std::to_string(threshold) + " outside (0, 1)");
  }
  auto fill = [&rng](Tensor& t, std::size_t fan_in) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.data) v = u(rng);
  };
  ControllerParams p;
  p.feature_weights = Tensor::zeros({hidden_dim, feature_dim});
  p.context_weights = Tensor::zeros({hidden_dim, context_dim});
  p.history_weights = Tensor::zeros({hidden_dim, history_dim});
  p.bias = Tensor::zeros({hidden_dim});
  p.readout = Tensor::zeros({hidden_dim});
  fill(p.feature_weights, feature_dim);
  fill(p.context_weights, context_dim);
  fill(p.history_weights, history_dim);
  for (double& v : p.bias.data) v = 0.5;
  fill(p.readout, hidden_dim);
  p.threshold = threshold;
  return p;
}

BoundController bind_controller(Tape& tape, const ControllerParams& params) {
  BoundController b;
  b.feature_weights = tape.leaf(params.feature_weights);
  b.context_weights = tape.leaf(params.context_weights);
  b.history_weights = tape.leaf(params.history_weights);
  b.bias = tape.leaf(params.bias);
  b.readout = tape.leaf(params.readout);
  b.threshold = params.threshold;
  return b;
}

NodeId controller_score(Tape& tape, const BoundController& ctrl, NodeId feature, NodeId context,
                        NodeId history) {
  NodeId pre = tape.add(tape.add(tape.add(tape.matvec(ctrl.feature_weights, feature),
                                          tape.matvec(ctrl.context_weights, context)),
                                 tape.matvec(ctrl.history_weights, history)),
                        ctrl.bias);
  return tape.dot(ctrl.readout, tape.relu(pre));
}

ControllerDecision controller_decide(Tape& tape, NodeId score, double threshold) {
  ControllerDecision d;
  d.soft = tape.sigmoid(score);
  d.hard = tape.ste_threshold(d.soft, threshold);
  d.soft_value = tape.scalar_value(d.soft);
  d.hard_value = tape.scalar_value(d.hard) > 0.5 ? 1 : 0;
  return d;
}

}  // namespace mtdl
