#include "mtdl/lstm.hpp"

#include <cmath>

#include "mtdl/errors.hpp"

namespace mtdl {

LstmParams LstmParams::init(std::size_t input_dim, std::size_t hidden_dim, std::mt19937_64& rng) {
  if (input_dim == 0 || hidden_dim == 0) {
    throw ConfigError("lstm: dimensions must be >= 1");
  }
  double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  LstmParams p;
  p.input_weights = Tensor::zeros({4 * hidden_dim, input_dim});
  p.recurrent_weights = Tensor::zeros({4 * hidden_dim, hidden_dim});
  p.gate_bias = Tensor::zeros({4 * hidden_dim});
  for (double& v : p.input_weights.data) v = u(rng);
  for (double& v : p.recurrent_weights.data) v = u(rng);
  for (std::size_t i = hidden_dim; i < 2 * hidden_dim; ++i) p.gate_bias.data[i] = 1.0;
  return p;
}

BoundLstm bind_lstm(Tape& tape, const LstmParams& params) {
  BoundLstm b;
  b.input_weights = tape.leaf(params.input_weights);
  b.recurrent_weights = tape.leaf(params.recurrent_weights);
  b.gate_bias = tape.leaf(params.gate_bias);
  b.hidden_dim = params.hidden_dim();
  return b;
}

LstmState initial_lstm_state(Tape& tape, std::size_t hidden_dim) {
  NodeId h = tape.leaf_zeros({hidden_dim});
  NodeId c = tape.leaf_zeros({hidden_dim});
  return {h, c};
}

LstmCandidate lstm_step(Tape& tape, const BoundLstm& lstm, NodeId input, const LstmState& prev) {
  std::size_t h = lstm.hidden_dim;
  NodeId pre = tape.add(tape.add(tape.matvec(lstm.input_weights, input),
                                 tape.matvec(lstm.recurrent_weights, prev.hidden)),
                        lstm.gate_bias);
  NodeId in_gate = tape.sigmoid(tape.slice(pre, 0, h));
  NodeId forget_gate = tape.sigmoid(tape.slice(pre, h, h));
  NodeId cell_input = tape.tanh(tape.slice(pre, 2 * h, h));
  NodeId out_gate = tape.sigmoid(tape.slice(pre, 3 * h, h));
  NodeId cell = tape.add(tape.mul(forget_gate, prev.cell), tape.mul(in_gate, cell_input));
  NodeId hidden = tape.mul(out_gate, tape.tanh(cell));
  return {hidden, cell};
}

LstmState apply_reset(Tape& tape, const LstmCandidate& candidate, NodeId decision) {
  return {tape.scale(candidate.hidden, decision), tape.scale(candidate.cell, decision)};
}

}  // namespace mtdl
