#include "mtdl/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <thread>

#include "mtdl/config.hpp"
#include "mtdl/errors.hpp"

namespace mtdl {

double schedule_lr(const LrSchedule& schedule, std::size_t step) {
  std::size_t decays = 0;
  if (!schedule.milestones.empty()) {
    for (std::size_t m : schedule.milestones) {
      if (step >= m) ++decays;
    }
  } else {
    decays = schedule.interval == 0 ? 0 : step / schedule.interval;
  }
  return schedule.base * std::pow(schedule.factor, static_cast<double>(decays));
}

LrSchedule spatial_stream_schedule() {
  LrSchedule s;
  s.base = 1e-3;
  s.factor = 0.1;
  s.interval = 6000;
  s.per_epoch = false;
  return s;
}

LrSchedule temporal_stream_schedule() {
  LrSchedule s;
  s.base = 5e-3;
  s.factor = 0.1;
  s.per_epoch = false;
  s.milestones = {48000, 72000};
  return s;
}

OptimState make_optim(const std::vector<ParamView>& views, double momentum) {
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum " + std::to_string(momentum) + " outside [0, 1)");
  }
  OptimState opt;
  opt.momentum = momentum;
  opt.velocity.reserve(views.size());
  for (const auto& v : views) opt.velocity.push_back(Tensor::zeros(v.tensor->shape));
  return opt;
}

double global_grad_norm(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g.data) sq += v * v;
  }
  return std::sqrt(sq);
}

double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip norm must be > 0");
  double norm = global_grad_norm(grads);
  if (norm > max_norm) {
    double s = max_norm / norm;
    for (auto& g : grads) {
      for (double& v : g.data) v *= s;
    }
  }
  return norm;
}

void sgd_step(const std::vector<ParamView>& views, const std::vector<Tensor>& grads,
              OptimState& opt, double lr) {
  if (views.size() != grads.size() || views.size() != opt.velocity.size()) {
    throw ShapeError("sgd_step: parameter/gradient/velocity counts disagree");
  }
  for (std::size_t i = 0; i < views.size(); ++i) {
    Tensor& theta = *views[i].tensor;
    const Tensor& g = grads[i];
    Tensor& v = opt.velocity[i];
    if (!theta.same_shape(g)) {
      throw ShapeError("sgd_step: " + views[i].name + " shape " + theta.shape_str() +
                       " vs gradient " + g.shape_str());
    }
    for (std::size_t j = 0; j < theta.numel(); ++j) {
      v.data[j] = opt.momentum * v.data[j] + g.data[j];
      theta.data[j] -= lr * v.data[j];
    }
  }
  ++opt.step;
}

SampleRun MtdlModel::build(Tape& tape, const FeatureSequence& seq) const {
  BoundModel bound = bind_model(tape, params_);
  ForwardResult fwd = forward_sequence(tape, bound, config_, seq);
  SampleRun run;
  run.loss = sequence_loss(tape, fwd.logits, seq.label);
  run.prediction = fwd.trace.predicted;
  run.write_rate = fwd.trace.write_rate();
  run.param_leaves = bound.leaves;
  return run;
}

BaselineParams BaselineParams::init(const BaselineConfig& config, std::uint64_t seed) {
  if (config.classes < 2) throw ConfigError("baseline: need at least 2 classes");
  std::mt19937_64 rng(seed);
  BaselineParams p;
  p.lstm = LstmParams::init(config.feature_dim, config.lstm_hidden, rng);
  double bound = 1.0 / std::sqrt(static_cast<double>(config.lstm_hidden));
  std::uniform_real_distribution<double> u(-bound, bound);
  p.class_weights = Tensor::zeros({config.classes, config.lstm_hidden});
  for (double& v : p.class_weights.data) v = u(rng);
  p.class_bias = Tensor::zeros({config.classes});
  return p;
}

std::vector<ParamView> param_views(BaselineParams& p) {
  return {
      {"lstm.input_weights", &p.lstm.input_weights},
      {"lstm.recurrent_weights", &p.lstm.recurrent_weights},
      {"lstm.gate_bias", &p.lstm.gate_bias},
      {"classifier.weights", &p.class_weights},
      {"classifier.bias", &p.class_bias},
  };
}

SampleRun LstmBaseline::build(Tape& tape, const FeatureSequence& seq) const {
  if (seq.length == 0) throw ShapeError("baseline: empty sequence");
  if (seq.dim != config_.feature_dim) {
    throw ShapeError("baseline: feature dim " + std::to_string(seq.dim) +
                     " does not match configured " + std::to_string(config_.feature_dim));
  }
  BoundLstm lstm = bind_lstm(tape, params_.lstm);
  NodeId weights = tape.leaf(params_.class_weights);
  NodeId bias = tape.leaf(params_.class_bias);

  LstmState state = initial_lstm_state(tape, config_.lstm_hidden);
  for (std::size_t t = 0; t < seq.length; ++t) {
    Tensor x = Tensor::zeros({seq.dim});
    std::copy_n(seq.frame(t), seq.dim, x.data.begin());
    NodeId input = tape.leaf(std::move(x));
    LstmCandidate cand = lstm_step(tape, lstm, input, state);
    state = {cand.hidden, cand.cell};
  }
  NodeId logits = tape.add(tape.matvec(weights, state.hidden), bias);

  SampleRun run;
  run.loss = sequence_loss(tape, logits, seq.label);
  run.prediction = predict(tape.value(logits));
  run.write_rate = 0.0;
  run.param_leaves = {lstm.input_weights, lstm.recurrent_weights, lstm.gate_bias, weights, bias};
  return run;
}

namespace {

struct SampleSlot {
  std::vector<Tensor> grads;
  double loss = 0.0;
  int prediction = -1;
  double write_rate = 0.0;
  std::exception_ptr error;
};

void run_sample(const TrainableModel& model, const FeatureSequence& seq, bool want_grads,
                SampleSlot& slot) {
  try {
    Tape tape;
    SampleRun run = model.build(tape, seq);
    if (want_grads) {
      tape.backward(run.loss);
      slot.grads.reserve(run.param_leaves.size());
      for (NodeId leaf : run.param_leaves) slot.grads.push_back(tape.grad(leaf));
    }
    slot.loss = tape.scalar_value(run.loss);
    slot.prediction = run.prediction;
    slot.write_rate = run.write_rate;
  } catch (...) {
    slot.error = std::current_exception();
  }
}

// Runs one slot per sample, optionally striped across threads. Results are
// consumed in sample order afterwards, so the thread count never changes the
// outcome.
void run_slots(const TrainableModel& model, const std::vector<FeatureSequence>& data,
               const std::vector<std::size_t>& indices, std::size_t begin, std::size_t count,
               bool want_grads, int threads, std::vector<SampleSlot>& slots) {
  slots.assign(count, SampleSlot{});
  if (threads <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      run_sample(model, data[indices[begin + i]], want_grads, slots[i]);
    }
    return;
  }
  std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = w; i < count; i += workers) {
        run_sample(model, data[indices[begin + i]], want_grads, slots[i]);
      }
    });
  }
  for (auto& t : pool) t.join();
}

void rethrow_with_sample(const SampleSlot& slot, std::size_t sample_index) {
  try {
    std::rethrow_exception(slot.error);
  } catch (const std::exception& e) {
    throw Error("sample " + std::to_string(sample_index) + ": " + e.what());
  }
}

}  // namespace

EpochMetrics train_epoch(const TrainableModel& model, const std::vector<ParamView>& views,
                         const std::vector<FeatureSequence>& data, OptimState& opt,
                         const SgdConfig& config, std::size_t epoch,
                         std::mt19937_64& shuffle_rng) {
  if (data.empty()) throw ConfigError("train_epoch: empty dataset");
  if (config.batch_size == 0) throw ConfigError("train_epoch: batch size must be >= 1");

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  EpochMetrics metrics;
  metrics.predictions.reserve(data.size());
  double loss_sum = 0.0;
  double write_sum = 0.0;
  std::size_t correct = 0;

  std::vector<SampleSlot> slots;
  std::vector<Tensor> batch_grads(views.size());
  bool first_batch = true;

  for (std::size_t start = 0; start < data.size(); start += config.batch_size) {
    std::size_t count = std::min(config.batch_size, data.size() - start);
    run_slots(model, data, order, start, count, /*want_grads=*/true, config.threads, slots);

    for (std::size_t i = 0; i < views.size(); ++i) batch_grads[i] = Tensor::zeros(views[i].tensor->shape);
    for (std::size_t i = 0; i < count; ++i) {
      SampleSlot& slot = slots[i];
      if (slot.error) rethrow_with_sample(slot, order[start + i]);
      for (std::size_t p = 0; p < batch_grads.size(); ++p) {
        for (std::size_t j = 0; j < batch_grads[p].numel(); ++j) {
          batch_grads[p].data[j] += slot.grads[p].data[j];
        }
      }
      loss_sum += slot.loss;
      write_sum += slot.write_rate;
      bool hit = slot.prediction == static_cast<int>(data[order[start + i]].label);
      correct += hit ? 1 : 0;
      metrics.predictions.push_back(slot.prediction);
    }

    double inv = 1.0 / static_cast<double>(count);
    for (auto& g : batch_grads) {
      for (double& v : g.data) v *= inv;
    }
    clip_gradients(batch_grads, config.clip_norm);
    double lr = schedule_lr(config.schedule, config.schedule.per_epoch ? epoch : opt.step);
    if (first_batch) {
      metrics.lr = lr;
      first_batch = false;
    }
    sgd_step(views, batch_grads, opt, lr);
  }

  metrics.mean_loss = loss_sum / static_cast<double>(data.size());
  metrics.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  metrics.write_rate = write_sum / static_cast<double>(data.size());
  return metrics;
}

EvalResult evaluate(const TrainableModel& model, const std::vector<FeatureSequence>& data,
                    int threads) {
  EvalResult result;
  if (data.empty()) return result;

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  // Evaluation needs logits, so rebuild per sample rather than reusing the
  // training slots (they only keep scalars).
  result.predictions.resize(data.size());
  result.probabilities.resize(data.size());
  std::size_t correct = 0;
  double write_sum = 0.0;

  auto eval_one = [&](std::size_t i) {
    Tape tape;
    SampleRun run = model.build(tape, data[i]);
    // The loss node's input holds the logits.
    NodeId logits = tape.node(run.loss).in0;
    result.predictions[i] = run.prediction;
    result.probabilities[i] = softmax_probabilities(tape.value(logits));
    return std::pair<int, double>(run.prediction, run.write_rate);
  };

  if (threads <= 1 || data.size() <= 1) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto [pred, wr] = eval_one(i);
      correct += pred == static_cast<int>(data[i].label) ? 1 : 0;
      write_sum += wr;
    }
  } else {
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), data.size());
    std::vector<double> write_rates(data.size(), 0.0);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (std::size_t i = w; i < data.size(); i += workers) {
            auto [pred, wr] = eval_one(i);
            write_rates[i] = wr;
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      correct += result.predictions[i] == static_cast<int>(data[i].label) ? 1 : 0;
      write_sum += write_rates[i];
    }
  }

  result.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  result.write_rate = write_sum / static_cast<double>(data.size());
  return result;
}

namespace {

constexpr unsigned char kCkptMagic[4] = {0x4D, 0x54, 0x43, 0x4B};  // "MTCK"
constexpr std::uint16_t kCkptVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_tensor(std::string& out, const Tensor& t) {
  out.push_back(static_cast<char>(t.shape.size()));
  for (std::size_t d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data) put_f64(out, v);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  std::uint8_t u8() { return byte(); }
  std::uint16_t u16() {
    std::uint16_t lo = byte();
    std::uint16_t hi = byte();
    return static_cast<std::uint16_t>(lo | (hi << 8));
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string string() {
    std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    std::size_t rank = byte();
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = u32();
      n *= d;
    }
    Tensor t = Tensor::zeros(shape);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = f64();
    return t;
  }
  void expect_magic() {
    need(4);
    if (std::memcmp(buf_.data(), kCkptMagic, 4) != 0) {
      throw ParseError("bad magic, not an MTCK checkpoint (" + path_ + ")", 0);
    }
    pos_ = 4;
  }
  void expect_end() {
    if (pos_ != buf_.size()) {
      throw ParseError("trailing data in checkpoint " + path_, pos_);
    }
  }
  std::size_t pos() const { return pos_; }

 private:
  unsigned char byte() {
    need(1);
    return static_cast<unsigned char>(buf_[pos_++]);
  }
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw ParseError("truncated checkpoint " + path_, buf_.size());
    }
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string buf;
  buf.append(reinterpret_cast<const char*>(kCkptMagic), 4);
  put_u16(buf, kCkptVersion);
  put_string(buf, ckpt.kind);
  put_string(buf, format_kv_text(ckpt.config));
  put_u32(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_string(buf, name);
    put_tensor(buf, tensor);
  }
  buf.push_back(ckpt.has_optim ? 1 : 0);
  if (ckpt.has_optim) {
    put_f64(buf, ckpt.momentum);
    put_u64(buf, ckpt.step);
    put_u32(buf, static_cast<std::uint32_t>(ckpt.velocity.size()));
    for (const auto& v : ckpt.velocity) put_tensor(buf, v);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(buf, path.string());
  r.expect_magic();
  std::uint16_t version = r.u16();
  if (version != kCkptVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  Checkpoint ckpt;
  ckpt.kind = r.string();
  ckpt.config = parse_kv_text(r.string());
  std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.string();
    ckpt.tensors.emplace_back(std::move(name), r.tensor());
  }
  ckpt.has_optim = r.u8() != 0;
  if (ckpt.has_optim) {
    ckpt.momentum = r.f64();
    ckpt.step = r.u64();
    std::uint32_t nv = r.u32();
    ckpt.velocity.reserve(nv);
    for (std::uint32_t i = 0; i < nv; ++i) ckpt.velocity.push_back(r.tensor());
  }
  r.expect_end();
  return ckpt;
}

Checkpoint make_checkpoint(TrainableModel& model, const OptimState* opt) {
  Checkpoint ckpt;
  ckpt.kind = model.kind();
  if (auto* m = dynamic_cast<MtdlModel*>(&model)) {
    ckpt.config = kv_from_model_config(m->config());
  } else if (auto* b = dynamic_cast<LstmBaseline*>(&model)) {
    ckpt.config["feature_dim"] = std::to_string(b->config().feature_dim);
    ckpt.config["lstm_hidden"] = std::to_string(b->config().lstm_hidden);
    ckpt.config["classes"] = std::to_string(b->config().classes);
  }
  for (const auto& view : model.params()) {
    ckpt.tensors.emplace_back(view.name, *view.tensor);
  }
  if (opt != nullptr) {
    ckpt.has_optim = true;
    ckpt.momentum = opt->momentum;
    ckpt.step = opt->step;
    ckpt.velocity = opt->velocity;
  }
  return ckpt;
}

std::unique_ptr<TrainableModel> model_from_checkpoint(const Checkpoint& ckpt) {
  auto assign = [&](std::vector<ParamView> views) {
    if (views.size() != ckpt.tensors.size()) {
      throw ParseError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                           " tensors, expected " + std::to_string(views.size()),
                       0);
    }
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& [name, tensor] = ckpt.tensors[i];
      if (name != views[i].name) {
        throw ParseError("checkpoint tensor '" + name + "' where '" + views[i].name +
                             "' was expected",
                         0);
      }
      if (!views[i].tensor->same_shape(tensor)) {
        throw ShapeError("checkpoint tensor '" + name + "' has shape " + tensor.shape_str() +
                         ", expected " + views[i].tensor->shape_str());
      }
      *views[i].tensor = tensor;
    }
  };

  if (ckpt.kind == "mtdl") {
    ModelConfig config = model_config_from_kv(ckpt.config);
    auto model = std::make_unique<MtdlModel>(config, /*seed=*/0);
    assign(model->params());
    return model;
  }
  if (ckpt.kind == "lstm-baseline") {
    BaselineConfig config;
    config.feature_dim = kv_size(ckpt.config, "feature_dim", config.feature_dim);
    config.lstm_hidden = kv_size(ckpt.config, "lstm_hidden", config.lstm_hidden);
    config.classes = kv_size(ckpt.config, "classes", config.classes);
    auto model = std::make_unique<LstmBaseline>(config, /*seed=*/0);
    assign(model->params());
    return model;
  }
  throw ParseError("unknown model kind '" + ckpt.kind + "' in checkpoint", 0);
}

}  // namespace mtdl
