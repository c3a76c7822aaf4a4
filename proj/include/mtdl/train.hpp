#ifndef MTDL_TRAIN_HPP_
#define MTDL_TRAIN_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mtdl/model.hpp"

namespace mtdl {

// Stepwise geometric decay: lr = base * factor^(floor(step / interval)),
// or, when milestones are given, factor applied once per passed milestone.
struct LrSchedule {
  double base = 1e-3;
  double factor = 0.1;
  std::size_t interval = 20;
  bool per_epoch = true;  // desk-scale default counts epochs, not iterations
  std::vector<std::size_t> milestones;
};

double schedule_lr(const LrSchedule& schedule, std::size_t step);

// Paper-scale presets: spatial stream decays every 6000 iterations from 1e-3
// (18k iterations total); temporal stream starts at 5e-3 and decays after
// 48k and 72k iterations (80k total).
LrSchedule spatial_stream_schedule();
LrSchedule temporal_stream_schedule();

struct SgdConfig {
  LrSchedule schedule;
  double momentum = 0.9;
  double clip_norm = 20.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct OptimState {
  std::vector<Tensor> velocity;  // mirrors parameter shapes
  double momentum = 0.9;
  std::size_t step = 0;
};

OptimState make_optim(const std::vector<ParamView>& views, double momentum);

double global_grad_norm(const std::vector<Tensor>& grads);

// Scales every gradient by max_norm / norm when the global L2 norm exceeds
// max_norm; otherwise leaves them bit-identical. Returns the pre-clip norm.
double clip_gradients(std::vector<Tensor>& grads, double max_norm);

// Classical momentum: v <- mu v + g; theta <- theta - lr v.
void sgd_step(const std::vector<ParamView>& views, const std::vector<Tensor>& grads,
              OptimState& opt, double lr);

// One sample's contribution to a batch: graph already built on a tape.
struct SampleRun {
  NodeId loss = 0;
  int prediction = -1;
  double write_rate = 0.0;
  std::vector<NodeId> param_leaves;  // aligned with params() order
};

class TrainableModel {
 public:
  virtual ~TrainableModel() = default;
  virtual std::string kind() const = 0;
  virtual std::vector<ParamView> params() = 0;
  virtual SampleRun build(Tape& tape, const FeatureSequence& seq) const = 0;
};

// The memory-augmented network.
class MtdlModel : public TrainableModel {
 public:
  MtdlModel(ModelConfig config, std::uint64_t seed)
      : config_(config), params_(ModelParams::init(config, seed)) {}
  MtdlModel(ModelConfig config, ModelParams params)
      : config_(config), params_(std::move(params)) {}

  std::string kind() const override { return "mtdl"; }
  std::vector<ParamView> params() override { return param_views(params_); }
  SampleRun build(Tape& tape, const FeatureSequence& seq) const override;

  const ModelConfig& config() const { return config_; }
  ModelParams& model_params() { return params_; }
  const ModelParams& model_params() const { return params_; }

 private:
  ModelConfig config_;
  ModelParams params_;
};

// Plain LSTM over the whole sequence with a classifier on the last hidden
// state; the reference the memory path is measured against.
struct BaselineConfig {
  std::size_t feature_dim = 32;
  std::size_t lstm_hidden = 128;
  std::size_t classes = 5;
};

struct BaselineParams {
  LstmParams lstm;
  Tensor class_weights;  // [C x H]
  Tensor class_bias;     // [C]

  static BaselineParams init(const BaselineConfig& config, std::uint64_t seed);
};

std::vector<ParamView> param_views(BaselineParams& params);

class LstmBaseline : public TrainableModel {
 public:
  LstmBaseline(BaselineConfig config, std::uint64_t seed)
      : config_(config), params_(BaselineParams::init(config, seed)) {}
  LstmBaseline(BaselineConfig config, BaselineParams params)
      : config_(config), params_(std::move(params)) {}

  std::string kind() const override { return "lstm-baseline"; }
  std::vector<ParamView> params() override { return param_views(params_); }
  SampleRun build(Tape& tape, const FeatureSequence& seq) const override;

  const BaselineConfig& config() const { return config_; }

 private:
  BaselineConfig config_;
  BaselineParams params_;
};

struct EpochMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  double write_rate = 0.0;
  double lr = 0.0;  // learning rate of the first optimizer step of the epoch
  std::vector<int> predictions;  // in shuffled visit order
};

// One pass over the dataset: deterministic shuffle, per-sample gradients
// accumulated in sample-index order (thread count never changes results),
// global-norm clipping, momentum step. Batch loss is the mean of sample
// losses.
EpochMetrics train_epoch(const TrainableModel& model, const std::vector<ParamView>& views,
                         const std::vector<FeatureSequence>& data, OptimState& opt,
                         const SgdConfig& config, std::size_t epoch,
                         std::mt19937_64& shuffle_rng);

struct EvalResult {
  double accuracy = 0.0;
  double write_rate = 0.0;
  std::vector<int> predictions;
  std::vector<std::vector<double>> probabilities;
};

EvalResult evaluate(const TrainableModel& model, const std::vector<FeatureSequence>& data,
                    int threads = 1);

// Versioned checkpoint: model kind, flat key=value config, named parameter
// tensors, optimizer state. Layout documented in the README.
struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> config;
  std::vector<std::pair<std::string, Tensor>> tensors;
  bool has_optim = false;
  double momentum = 0.0;
  std::uint64_t step = 0;
  std::vector<Tensor> velocity;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(TrainableModel& model, const OptimState* opt);
std::unique_ptr<TrainableModel> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace mtdl

#endif  // MTDL_TRAIN_HPP_
