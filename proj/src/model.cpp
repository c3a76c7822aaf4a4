#include "mtdl/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mtdl/errors.hpp"

namespace mtdl {

void ModelConfig::validate() const {
  if (feature_dim == 0 || lstm_hidden == 0 || memory_dim == 0 || controller_hidden == 0) {
    throw ConfigError("model config: all dimensions must be >= 1");
  }
  if (classes < 2) throw ConfigError("model config: need at least 2 classes");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("model config: threshold " + std::to_string(threshold) + " outside (0, 1)");
  }
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.lstm = LstmParams::init(config.feature_dim, config.lstm_hidden, rng);
  {
    MemoryWriter w = MemoryWriter::init(config.memory_dim, config.feature_dim, rng);
    p.write_projection = std::move(w.projection);
  }
  p.controller = ControllerParams::init(config.feature_dim, config.lstm_hidden, config.memory_dim,
                                        config.controller_hidden, config.threshold, rng);
  double bound = 1.0 / std::sqrt(static_cast<double>(config.memory_dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  p.class_weights = Tensor::zeros({config.classes, config.memory_dim});
  for (double& v : p.class_weights.data) v = u(rng);
  p.class_bias = Tensor::zeros({config.classes});
  return p;
}

std::vector<ParamView> param_views(ModelParams& p) {
  return {
      {"lstm.input_weights", &p.lstm.input_weights},
      {"lstm.recurrent_weights", &p.lstm.recurrent_weights},
      {"lstm.gate_bias", &p.lstm.gate_bias},
      {"memory.write_projection", &p.write_projection},
      {"controller.feature_weights", &p.controller.feature_weights},
      {"controller.context_weights", &p.controller.context_weights},
      {"controller.history_weights", &p.controller.history_weights},
      {"controller.bias", &p.controller.bias},
      {"controller.readout", &p.controller.readout},
      {"classifier.weights", &p.class_weights},
      {"classifier.bias", &p.class_bias},
  };
}

double DecisionTrace::write_rate() const {
  if (frames.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : frames) s += f.hard;
  return s / static_cast<double>(frames.size());
}

std::string format_trace(const DecisionTrace& trace) {
  std::string out = "# pred=" + std::to_string(trace.predicted) +
                    " label=" + std::to_string(trace.label) + "\n";
  char buf[128];
  for (const auto& f : trace.frames) {
    std::snprintf(buf, sizeof(buf), "%s %d %.9g %d\n", trace.sequence_id.c_str(), f.t, f.soft,
                  f.hard);
    out += buf;
  }
  return out;
}

BoundModel bind_model(Tape& tape, const ModelParams& params) {
  // Leaf order must match param_views.
  BoundModel b;
  b.lstm = bind_lstm(tape, params.lstm);
  b.write_projection = tape.leaf(params.write_projection);
  b.controller = bind_controller(tape, params.controller);
  b.class_weights = tape.leaf(params.class_weights);
  b.class_bias = tape.leaf(params.class_bias);
  b.leaves = {b.lstm.input_weights,
              b.lstm.recurrent_weights,
              b.lstm.gate_bias,
              b.write_projection,
              b.controller.feature_weights,
              b.controller.context_weights,
              b.controller.history_weights,
              b.controller.bias,
              b.controller.readout,
              b.class_weights,
              b.class_bias};
  return b;
}

ForwardResult forward_sequence(Tape& tape, const BoundModel& model, const ModelConfig& config,
                               const FeatureSequence& seq, const ForwardOptions& options) {
  if (seq.length == 0) throw ShapeError("forward_sequence: empty sequence");
  if (seq.dim != config.feature_dim) {
    throw ShapeError("forward_sequence: feature dim " + std::to_string(seq.dim) +
                     " does not match configured " + std::to_string(config.feature_dim));
  }
  if (options.mode == DecisionMode::kFrozen) {
    if (options.pinned == nullptr || options.pinned->size() != seq.length) {
      throw ConfigError("forward_sequence: frozen mode needs one pinned decision per frame");
    }
    for (double v : *options.pinned) {
      if (v != 0.0 && v != 1.0) {
        throw ConfigError("forward_sequence: pinned decisions must be 0 or 1");
      }
    }
  }

  ForwardResult result;
  result.memory_sizes.reserve(seq.length);
  result.trace.frames.reserve(seq.length);
  result.trace.label = static_cast<int>(seq.label);

  LstmState state = initial_lstm_state(tape, config.lstm_hidden);
  MemoryModule memory;
  memory.item_dim = config.memory_dim;

  std::vector<NodeId> frame_nodes(seq.length);
  for (std::size_t t = 0; t < seq.length; ++t) {
    Tensor x = Tensor::zeros({seq.dim});
    std::copy_n(seq.frame(t), seq.dim, x.data.begin());
    frame_nodes[t] = tape.leaf(std::move(x));
  }

  for (std::size_t t = 0; t < seq.length; ++t) {
    NodeId input = frame_nodes[t];
    NodeId history = read_history(tape, memory, config.history);
    LstmCandidate candidate = lstm_step(tape, model.lstm, input, state);
    NodeId score = controller_score(tape, model.controller, input, candidate.hidden, history);
    ControllerDecision decision = controller_decide(tape, score, config.threshold);

    NodeId gate = 0;       // multiplies the memory item and the LSTM state
    bool append = false;   // whether this frame enters memory
    int hard = decision.hard_value;
    switch (options.mode) {
      case DecisionMode::kHard:
        gate = decision.hard;
        append = decision.hard_value == 1;
        break;
      case DecisionMode::kFrozen:
        gate = tape.leaf_scalar((*options.pinned)[t]);
        hard = (*options.pinned)[t] == 1.0 ? 1 : 0;
        append = hard == 1;
        break;
      case DecisionMode::kSurrogate:
        gate = options.pinned != nullptr ? tape.leaf_scalar((*options.pinned)[t]) : decision.soft;
        append = true;
        break;
    }

    memory_write(tape, memory, model.write_projection, input, gate, append);
    state = apply_reset(tape, {candidate.hidden, candidate.cell}, gate);

    result.memory_sizes.push_back(memory.size());
    result.trace.frames.push_back({static_cast<int>(t) + 1, decision.soft_value, hard});
    if (options.capture_states) {
      result.hidden_states.push_back(tape.value(state.hidden));
      result.cell_states.push_back(tape.value(state.cell));
    }
  }

  NodeId representation;
  if (memory.empty()) {
    result.fallback_used = true;
    if (config.fallback == EmptyMemoryFallback::kForceLast) {
      memory_write_forced(tape, memory, model.write_projection, frame_nodes.back());
      representation = final_pool(tape, memory, config.history);
    } else {
      MemoryModule all_frames;
      all_frames.item_dim = config.memory_dim;
      for (NodeId f : frame_nodes) {
        memory_write_forced(tape, all_frames, model.write_projection, f);
      }
      representation = final_pool(tape, all_frames, config.history);
    }
  } else {
    representation = final_pool(tape, memory, config.history);
  }

  result.logits = tape.add(tape.matvec(model.class_weights, representation), model.class_bias);
  result.trace.predicted = predict(tape.value(result.logits));
  return result;
}

ForwardResult forward_sequence(Tape& tape, const ModelParams& params, const ModelConfig& config,
                               const FeatureSequence& seq, const ForwardOptions& options) {
  BoundModel model = bind_model(tape, params);
  return forward_sequence(tape, model, config, seq, options);
}

NodeId sequence_loss(Tape& tape, NodeId logits, std::uint32_t label) {
  return tape.softmax_cross_entropy(logits, label);
}

int predict(const Tensor& logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i) {
    if (logits.data[i] > logits.data[best]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<double> fuse_scores(const std::vector<std::vector<double>>& score_lists) {
  if (score_lists.size() < 2) {
    throw ConfigError("fuse_scores: need at least two score vectors");
  }
  std::size_t classes = score_lists[0].size();
  for (const auto& s : score_lists) {
    if (s.size() != classes) {
      throw ShapeError("fuse_scores: length mismatch, " + std::to_string(s.size()) + " vs " +
                       std::to_string(classes));
    }
    double total = 0.0;
    for (double v : s) total += v;
    if (std::fabs(total - 1.0) > 1e-6) {
      throw ConfigError("fuse_scores: probabilities sum to " + std::to_string(total) +
                        ", expected 1");
    }
  }
  std::vector<double> fused(classes, 0.0);
  for (const auto& s : score_lists) {
    for (std::size_t i = 0; i < classes; ++i) fused[i] += s[i];
  }
  for (double& v : fused) v /= static_cast<double>(score_lists.size());
  return fused;
}

std::vector<double> softmax_probabilities(const Tensor& logits) {
  double mx = *std::max_element(logits.data.begin(), logits.data.end());
  std::vector<double> p(logits.numel());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits.data[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

}  // namespace mtdl
