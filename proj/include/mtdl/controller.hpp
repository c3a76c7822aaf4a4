#ifndef MTDL_CONTROLLER_HPP_
#define MTDL_CONTROLLER_HPP_

#include <cstddef>
#include <random>

#include "mtdl/tape.hpp"
#include "mtdl/tensor.hpp"

namespace mtdl {

// The discrete memory controller. Maps (current feature, context embedding,
// memory history) to a write logit, a soft importance score in (0,1) and a
// hard binary write decision.
struct ControllerParams {
  Tensor feature_weights;  // [k x d]
  Tensor context_weights;  // [k x H]
  Tensor history_weights;  // [k x D]
  Tensor bias;             // [k]; starts at +0.5 so early decisions lean toward writing
  Tensor readout;          // [k]
  double threshold = 0.5;

  static ControllerParams init(std::size_t feature_dim, std::size_t context_dim,
                               std::size_t history_dim, std::size_t hidden_dim, double threshold,
                               std::mt19937_64& rng);
};

struct BoundController {
  NodeId feature_weights;
  NodeId context_weights;
  NodeId history_weights;
  NodeId bias;
  NodeId readout;
  double threshold;
};

BoundController bind_controller(Tape& tape, const ControllerParams& params);

// Write logit: readout . relu(Wf x + Wc context + Wh history + bias).
NodeId controller_score(Tape& tape, const BoundController& ctrl, NodeId feature, NodeId context,
                        NodeId history);

struct ControllerDecision {
  NodeId soft;        // sigmoid of the logit
  NodeId hard;        // STE threshold node
  double soft_value;  // in (0, 1)
  int hard_value;     // 0 or 1; equals [logit > 0] at the default threshold
};

ControllerDecision controller_decide(Tape& tape, NodeId score, double threshold);

}  // namespace mtdl

#endif  // MTDL_CONTROLLER_HPP_
