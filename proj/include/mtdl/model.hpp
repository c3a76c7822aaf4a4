#ifndef MTDL_MODEL_HPP_
#define MTDL_MODEL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "mtdl/controller.hpp"
#include "mtdl/data.hpp"
#include "mtdl/lstm.hpp"
#include "mtdl/memory.hpp"
#include "mtdl/tape.hpp"

namespace mtdl {

enum class EmptyMemoryFallback {
  kForceLast,    // write the final frame unconditionally (no controller gradient)
  kFeatureMean,  // classify the mean of all projected frames instead
};

struct ModelConfig {
  std::size_t feature_dim = 32;       // d
  std::size_t lstm_hidden = 128;      // H
  std::size_t memory_dim = 256;       // D
  std::size_t controller_hidden = 64; // k
  std::size_t classes = 5;            // C
  double threshold = 0.5;
  HistoryMode history = HistoryMode::kMean;
  EmptyMemoryFallback fallback = EmptyMemoryFallback::kForceLast;

  void validate() const;
};

struct ModelParams {
  LstmParams lstm;
  Tensor write_projection;  // [D x d]
  ControllerParams controller;
  Tensor class_weights;  // [C x D]
  Tensor class_bias;     // [C]

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);
};

struct ParamView {
  std::string name;
  Tensor* tensor;
};

// Fixed parameter order shared by the optimizer, checkpoints and gradient
// harvesting.
std::vector<ParamView> param_views(ModelParams& params);

struct FrameDecision {
  int t;        // 1-based frame index
  double soft;  // importance score in (0, 1)
  int hard;     // binary write decision
};

// Per-sequence controller record, the artifact's analog of a decision strip.
struct DecisionTrace {
  std::string sequence_id;
  int predicted = -1;
  int label = -1;
  std::vector<FrameDecision> frames;

  double write_rate() const;
};

// Line format: header "# pred=<c> label=<c>" then one "seq_id t a s" row per
// frame.
std::string format_trace(const DecisionTrace& trace);

enum class DecisionMode {
  kHard,       // STE threshold decisions (training and inference)
  kFrozen,     // decisions pinned as constants; the network is smooth
  kSurrogate,  // every decision replaced by its soft score; smooth
};

struct ForwardOptions {
  DecisionMode mode = DecisionMode::kHard;
  // Frozen: required, one 0/1 entry per frame. Surrogate: optional test hook
  // that pins the soft scores to the given constants.
  const std::vector<double>* pinned = nullptr;
  bool capture_states = false;  // record post-reset h/c values per step
};

struct BoundModel {
  std::vector<NodeId> leaves;  // aligned with param_views order
  BoundLstm lstm;
  NodeId write_projection;
  BoundController controller;
  NodeId class_weights;
  NodeId class_bias;
};

BoundModel bind_model(Tape& tape, const ModelParams& params);

struct ForwardResult {
  NodeId logits = 0;
  DecisionTrace trace;
  std::vector<std::size_t> memory_sizes;  // N_t after each step, pre-fallback
  bool fallback_used = false;
  std::vector<Tensor> hidden_states;  // filled when capture_states is set
  std::vector<Tensor> cell_states;

  std::size_t final_memory_size() const {
    return memory_sizes.empty() ? 0 : memory_sizes.back();
  }
};

// Full per-sequence pass: read history, LSTM step, controller decision,
// conditional memory write, segmental reset; then pooled classification.
ForwardResult forward_sequence(Tape& tape, const BoundModel& model, const ModelConfig& config,
                               const FeatureSequence& seq, const ForwardOptions& options = {});

// Convenience overload that binds the parameters itself.
ForwardResult forward_sequence(Tape& tape, const ModelParams& params, const ModelConfig& config,
                               const FeatureSequence& seq, const ForwardOptions& options = {});

NodeId sequence_loss(Tape& tape, NodeId logits, std::uint32_t label);

// Argmax with ties broken toward the lowest index.
int predict(const Tensor& logits);

// Late fusion: elementwise mean of two or more per-class probability vectors.
std::vector<double> fuse_scores(const std::vector<std::vector<double>>& score_lists);

std::vector<double> softmax_probabilities(const Tensor& logits);

}  // namespace mtdl

#endif  // MTDL_MODEL_HPP_
