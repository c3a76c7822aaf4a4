#ifndef MTDL_LSTM_HPP_
#define MTDL_LSTM_HPP_

#include <cstddef>
#include <random>

#include "mtdl/tape.hpp"
#include "mtdl/tensor.hpp"

namespace mtdl {

// LSTM cell with a segmental reset: the binary write decision multiplies the
// candidate hidden and cell state, so a skip decision restarts the recurrence
// from zeros.
struct LstmParams {
  // Packed gate rows in the order [input, forget, cell, output].
  Tensor input_weights;      // [4H x d]
  Tensor recurrent_weights;  // [4H x H]
  Tensor gate_bias;          // [4H]; forget slice starts at +1

  std::size_t hidden_dim() const { return gate_bias.numel() / 4; }

  // Uniform [-1/sqrt(H), 1/sqrt(H)] weights, zero bias except forget = +1.
  static LstmParams init(std::size_t input_dim, std::size_t hidden_dim, std::mt19937_64& rng);
};

struct BoundLstm {
  NodeId input_weights;
  NodeId recurrent_weights;
  NodeId gate_bias;
  std::size_t hidden_dim;
};

BoundLstm bind_lstm(Tape& tape, const LstmParams& params);

struct LstmState {
  NodeId hidden;
  NodeId cell;
};

// Candidate state before the reset gate. The candidate hidden vector doubles
// as the context embedding fed to the memory controller.
struct LstmCandidate {
  NodeId hidden;
  NodeId cell;
};

LstmState initial_lstm_state(Tape& tape, std::size_t hidden_dim);

LstmCandidate lstm_step(Tape& tape, const BoundLstm& lstm, NodeId input, const LstmState& prev);

// h_t = s * h_cand, c_t = s * c_cand. With s = 0 the returned state is
// exactly zero; gradient reaches the decision through both products.
LstmState apply_reset(Tape& tape, const LstmCandidate& candidate, NodeId decision);

}  // namespace mtdl

#endif  // MTDL_LSTM_HPP_
