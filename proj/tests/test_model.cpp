#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mtdl/errors.hpp"
#include "mtdl/exact_sum.hpp"
#include "mtdl/model.hpp"
#include "support.hpp"

using namespace mtdl;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.feature_dim = 4;
  c.lstm_hidden = 6;
  c.memory_dim = 5;
  c.controller_hidden = 3;
  c.classes = 3;
  return c;
}

FeatureSequence random_seq(const ModelConfig& c, std::size_t length, std::uint64_t seed) {
  auto gen = test::rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureSequence seq;
  seq.length = length;
  seq.dim = c.feature_dim;
  seq.label = static_cast<std::uint32_t>(seed % c.classes);
  seq.features.resize(length * c.feature_dim);
  for (double& v : seq.features) v = n(gen);
  return seq;
}

// Large positive bias and a positive readout drive every decision to 1;
// a negative readout drives every decision to 0.
void rig_controller(ModelParams& params, bool write_everything) {
  for (double& v : params.controller.bias.data) v = 50.0;
  for (double& v : params.controller.readout.data) {
    v = write_everything ? 0.1 : -0.1;
  }
}

// The pooled representation feeding the classifier: logits = W rep + b.
NodeId representation_node(const Tape& tape, NodeId logits) {
  return tape.node(tape.node(logits).in0).in1;
}

Tensor project(const ModelParams& params, const FeatureSequence& seq, std::size_t t) {
  Tape tape;
  Tensor x = Tensor::zeros({seq.dim});
  std::copy_n(seq.frame(t), seq.dim, x.data.begin());
  NodeId y = tape.matvec(tape.leaf(params.write_projection), tape.leaf(x));
  return tape.value(y);
}

}  // namespace

TEST_CASE("all-write rig fills the memory and pools every projected frame") {
  ModelConfig config = small_config();
  ModelParams params = ModelParams::init(config, 1);
  rig_controller(params, true);
  FeatureSequence seq = random_seq(config, 7, 3);

  Tape tape;
  ForwardResult fwd = forward_sequence(tape, params, config, seq);
  CHECK(fwd.final_memory_size() == seq.length);
  CHECK(!fwd.fallback_used);
  CHECK(fwd.trace.write_rate() == 1.0);

  // rep must equal the exact mean of the projected frames
  Tensor rep = tape.value(representation_node(tape, fwd.logits));
  for (std::size_t j = 0; j < config.memory_dim; ++j) {
    ExactSum acc;
    for (std::size_t t = 0; t < seq.length; ++t) acc.add(project(params, seq, t).data[j]);
    CHECK(rep.data[j] == acc.result() / static_cast<double>(seq.length));
  }
}

TEST_CASE("all-skip rig engages the fallback") {
  ModelConfig config = small_config();
  ModelParams params = ModelParams::init(config, 2);
  rig_controller(params, false);
  FeatureSequence seq = random_seq(config, 6, 4);

  SUBCASE("force-last writes exactly the final frame") {
    Tape tape;
    ForwardResult fwd = forward_sequence(tape, params, config, seq);
    CHECK(fwd.fallback_used);
    CHECK(fwd.final_memory_size() == 0);  // pre-fallback count
    CHECK(fwd.trace.write_rate() == 0.0);
    Tensor rep = tape.value(representation_node(tape, fwd.logits));
    CHECK(rep.data == project(params, seq, seq.length - 1).data);
  }
  SUBCASE("feature-mean pools every projected frame") {
    ModelConfig alt = config;
    alt.fallback = EmptyMemoryFallback::kFeatureMean;
    Tape tape;
    ForwardResult fwd = forward_sequence(tape, params, alt, seq);
    CHECK(fwd.fallback_used);
    Tensor rep = tape.value(representation_node(tape, fwd.logits));
    for (std::size_t j = 0; j < config.memory_dim; ++j) {
      ExactSum acc;
      for (std::size_t t = 0; t < seq.length; ++t) acc.add(project(params, seq, t).data[j]);
      CHECK(rep.data[j] == acc.result() / static_cast<double>(seq.length));
    }
  }
}

TEST_CASE("single-frame sequence with a write classifies that projection") {
  ModelConfig config = small_config();
  ModelParams params = ModelParams::init(config, 5);
  rig_controller(params, true);
  FeatureSequence seq = random_seq(config, 1, 6);
  Tape tape;
  ForwardResult fwd = forward_sequence(tape, params, config, seq);
  CHECK(fwd.final_memory_size() == 1);
  Tensor rep = tape.value(representation_node(tape, fwd.logits));
  CHECK(rep.data == project(params, seq, 0).data);
}

TEST_CASE("forward is deterministic") {
  ModelConfig config = small_config();
  ModelParams params = ModelParams::init(config, 7);
  FeatureSequence seq = random_seq(config, 9, 8);
  Tape t1, t2;
  ForwardResult a = forward_sequence(t1, params, config, seq);
  ForwardResult b = forward_sequence(t2, params, config, seq);
  CHECK(t1.value(a.logits).data == t2.value(b.logits).data);
  REQUIRE(a.trace.frames.size() == b.trace.frames.size());
  for (std::size_t t = 0; t < a.trace.frames.size(); ++t) {
    CHECK(a.trace.frames[t].soft == b.trace.frames[t].soft);
    CHECK(a.trace.frames[t].hard == b.trace.frames[t].hard);
  }
}

TEST_CASE("trace agrees with memory growth and state reset") {
  ModelConfig config = small_config();
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    ModelParams params = ModelParams::init(config, seed);
    FeatureSequence seq = random_seq(config, 10, seed + 100);
    Tape tape;
    ForwardOptions options;
    options.capture_states = true;
    ForwardResult fwd = forward_sequence(tape, params, config, seq, options);
    std::size_t prev = 0;
    for (std::size_t t = 0; t < seq.length; ++t) {
      const auto& frame = fwd.trace.frames[t];
      CHECK((frame.hard == 0 || frame.hard == 1));
      CHECK(frame.soft > 0.0);
      CHECK(frame.soft < 1.0);
      // s_t = 1 iff the memory grew at step t
      CHECK(fwd.memory_sizes[t] == prev + (frame.hard == 1 ? 1 : 0));
      CHECK(fwd.memory_sizes[t] <= t + 1);
      prev = fwd.memory_sizes[t];
      if (frame.hard == 0) {
        for (double v : fwd.hidden_states[t].data) CHECK(v == 0.0);
        for (double v : fwd.cell_states[t].data) CHECK(v == 0.0);
      }
    }
  }
}

TEST_CASE("frozen decisions reroute: a skipped frame between skips cannot reach the loss") {
  ModelConfig config = small_config();
  ModelParams params = ModelParams::init(config, 11);
  FeatureSequence seq = random_seq(config, 8, 12);
  std::vector<double> pinned = {1, 0, 0, 1, 0, 1, 1, 0};

  ForwardOptions options;
  options.mode = DecisionMode::kFrozen;
  options.pinned = &pinned;

  Tape base_tape;
  ForwardResult base = forward_sequence(base_tape, params, config, seq, options);
  std::vector<double> base_logits = base_tape.value(base.logits).data;

  // frame 1 has s=0 and is followed by another s=0 before any write
  FeatureSequence perturbed = seq;
  for (std::size_t j = 0; j < seq.dim; ++j) perturbed.frame(1)[j] += 3.5;
  Tape tape;
  ForwardResult fwd = forward_sequence(tape, params, config, perturbed, options);
  CHECK(tape.value(fwd.logits).data == base_logits);

  // a written frame does reach the loss
  FeatureSequence touched = seq;
  touched.frame(3)[0] += 1.0;
  Tape t3;
  ForwardResult f3 = forward_sequence(t3, params, config, touched, options);
  CHECK(t3.value(f3.logits).data != base_logits);
}

TEST_CASE("hard, frozen-all-ones and pinned surrogate agree bit for bit when rigged") {
  ModelConfig config = small_config();
  ModelParams params = ModelParams::init(config, 13);
  rig_controller(params, true);
  FeatureSequence seq = random_seq(config, 6, 14);

  Tape hard_tape;
  ForwardResult hard = forward_sequence(hard_tape, params, config, seq);
  std::vector<double> hard_logits = hard_tape.value(hard.logits).data;

  std::vector<double> ones(seq.length, 1.0);
  ForwardOptions frozen;
  frozen.mode = DecisionMode::kFrozen;
  frozen.pinned = &ones;
  Tape frozen_tape;
  ForwardResult fz = forward_sequence(frozen_tape, params, config, seq, frozen);
  CHECK(frozen_tape.value(fz.logits).data == hard_logits);

  ForwardOptions surrogate;
  surrogate.mode = DecisionMode::kSurrogate;
  surrogate.pinned = &ones;  // soft scores forced to one
  Tape surrogate_tape;
  ForwardResult sg = forward_sequence(surrogate_tape, params, config, seq, surrogate);
  CHECK(surrogate_tape.value(sg.logits).data == hard_logits);
}

TEST_CASE("surrogate mode writes every frame scaled by its soft score") {
  ModelConfig config = small_config();
  ModelParams params = ModelParams::init(config, 15);
  FeatureSequence seq = random_seq(config, 5, 16);
  ForwardOptions options;
  options.mode = DecisionMode::kSurrogate;
  Tape tape;
  ForwardResult fwd = forward_sequence(tape, params, config, seq, options);
  CHECK(fwd.final_memory_size() == seq.length);
}

TEST_CASE("input validation") {
  ModelConfig config = small_config();
  ModelParams params = ModelParams::init(config, 17);
  Tape tape;
  FeatureSequence empty;
  CHECK_THROWS_AS(forward_sequence(tape, params, config, empty), ShapeError);

  FeatureSequence wrong = random_seq(config, 4, 18);
  wrong.dim = 3;
  wrong.features.resize(wrong.length * wrong.dim);
  CHECK_THROWS_AS(forward_sequence(tape, params, config, wrong), ShapeError);

  FeatureSequence ok = random_seq(config, 4, 19);
  ForwardOptions frozen;
  frozen.mode = DecisionMode::kFrozen;
  CHECK_THROWS_AS(forward_sequence(tape, params, config, ok, frozen), ConfigError);
  std::vector<double> bad = {1, 0.5, 0, 0};
  frozen.pinned = &bad;
  CHECK_THROWS_AS(forward_sequence(tape, params, config, ok, frozen), ConfigError);

  ModelConfig broken = config;
  broken.threshold = 1.0;
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("predict breaks ties toward the lowest index and ignores shifts") {
  CHECK(predict(Tensor::vector({0.1, 0.9})) == 1);
  CHECK(predict(Tensor::vector({0.4, 0.4, 0.4})) == 0);
  auto gen = test::rng(20);
  for (int rep = 0; rep < 100; ++rep) {
    Tensor logits = test::random_vector(5, gen, 3.0);
    Tensor shifted = logits;
    for (double& v : shifted.data) v += 17.25;
    CHECK(predict(logits) == predict(shifted));
  }
}

TEST_CASE("fuse_scores averages probability vectors") {
  std::vector<double> p = {0.7, 0.2, 0.1};
  CHECK(fuse_scores({p, p}) == p);
  std::vector<double> fused = fuse_scores({{1.0, 0.0}, {0.0, 1.0}});
  CHECK(fused == std::vector<double>{0.5, 0.5});
  double total = 0.0;
  for (double v : fuse_scores({{0.3, 0.3, 0.4}, {0.5, 0.25, 0.25}})) total += v;
  CHECK(std::fabs(total - 1.0) < 1e-6);

  CHECK_THROWS_AS(fuse_scores({{0.5, 0.5}, {0.3, 0.3, 0.4}}), ShapeError);
  CHECK_THROWS_AS(fuse_scores({{0.5, 0.6}, {0.5, 0.5}}), ConfigError);
  CHECK_THROWS_AS(fuse_scores({{1.0, 0.0}}), ConfigError);
}

TEST_CASE("trace serialization format") {
  DecisionTrace trace;
  trace.sequence_id = "seq_00003";
  trace.predicted = 2;
  trace.label = 1;
  trace.frames = {{1, 0.75, 1}, {2, 0.25, 0}};
  CHECK(format_trace(trace) ==
        "# pred=2 label=1\n"
        "seq_00003 1 0.75 1\n"
        "seq_00003 2 0.25 0\n");
  CHECK(trace.write_rate() == 0.5);
}
