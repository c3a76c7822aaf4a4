#include "mtdl/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtdl/config.hpp"
#include "mtdl/data.hpp"
#include "mtdl/errors.hpp"
#include "mtdl/gradcheck.hpp"
#include "mtdl/model.hpp"
#include "mtdl/train.hpp"

namespace mtdl::cli {

namespace {

namespace fs = std::filesystem;

const std::vector<std::string> kModelKeys = {
    "feature_dim", "lstm_hidden", "memory_dim", "controller_hidden",
    "classes",     "threshold",   "history",    "fallback"};

const std::vector<std::string> kTrainKeys = [] {
  std::vector<std::string> keys = kModelKeys;
  for (const char* k : {"lr", "momentum", "clip", "batch", "epochs", "seed", "lr_decay_interval",
                        "lr_decay_factor", "lr_decay_unit", "threads"}) {
    keys.push_back(k);
  }
  return keys;
}();

const std::vector<std::string> kSpecKeys = {
    "classes",    "dim",  "length",      "segment_length", "noise_scale",
    "distractor_prob", "seed", "train_count", "test_count"};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string format_lr(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

struct GenArgs {
  std::string spec_file;
  std::string out_dir;
  KvMap overrides;
  std::size_t train_count = 2000;
  std::size_t test_count = 500;
  bool train_count_set = false;
  bool test_count_set = false;
};

int run_gen(const GenArgs& a, std::ostream& out) {
  KvMap kv = a.spec_file.empty() ? KvMap{} : read_config_file(a.spec_file);
  require_known_keys(kv, kSpecKeys);
  for (const auto& [k, v] : a.overrides) kv[k] = v;
  SyntheticSpec spec = synthetic_spec_from_kv(kv);
  std::size_t train_count =
      a.train_count_set ? a.train_count : kv_size(kv, "train_count", a.train_count);
  std::size_t test_count =
      a.test_count_set ? a.test_count : kv_size(kv, "test_count", a.test_count);

  fs::path root(a.out_dir);
  fs::create_directories(root / "train");
  fs::create_directories(root / "test");

  auto emit = [&](const std::string& split, const std::vector<FeatureSequence>& set) {
    std::vector<std::string> entries;
    entries.reserve(set.size());
    char name[64];
    for (std::size_t i = 0; i < set.size(); ++i) {
      std::snprintf(name, sizeof(name), "%s/seq_%05zu.mtdl", split.c_str(), i);
      write_feature_file(root / name, set[i]);
      entries.emplace_back(name);
    }
    write_manifest(root / (split + ".manifest"), entries);
  };

  std::vector<FeatureSequence> train_set = generate_synthetic(spec, train_count);
  SyntheticSpec test_spec = spec;
  test_spec.seed = spec.seed + 1;  // disjoint stream for the held-out split
  std::vector<FeatureSequence> test_set = generate_synthetic(test_spec, test_count);
  emit("train", train_set);
  emit("test", test_set);

  out << "wrote " << train_count << " train + " << test_count << " test sequences to " << a.out_dir
      << "\n";
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string config_file;
  std::string out_ckpt;
  KvMap overrides;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  KvMap kv = a.config_file.empty() ? KvMap{} : read_config_file(a.config_file);
  require_known_keys(kv, kTrainKeys);
  for (const auto& [k, v] : a.overrides) kv[k] = v;

  std::vector<FeatureSequence> data = load_manifest(a.manifest);
  if (data.empty()) throw ConfigError("manifest " + a.manifest + " lists no sequences");

  // Feature dim and class count fall back to the data when not configured.
  if (!kv.count("feature_dim")) kv["feature_dim"] = std::to_string(data[0].dim);
  if (!kv.count("classes")) {
    std::uint32_t max_label = 0;
    for (const auto& s : data) max_label = std::max(max_label, s.label);
    kv["classes"] = std::to_string(std::max<std::uint32_t>(max_label + 1, 2));
  }
  ModelConfig mc = model_config_from_kv(kv);

  SgdConfig sc;
  sc.schedule.base = kv_double(kv, "lr", 1e-3);
  sc.schedule.factor = kv_double(kv, "lr_decay_factor", 0.1);
  sc.schedule.interval = kv_size(kv, "lr_decay_interval", 20);
  std::string unit = kv_string(kv, "lr_decay_unit", "epochs");
  if (unit != "epochs" && unit != "iterations") {
    throw ConfigError("lr_decay_unit must be 'epochs' or 'iterations', got '" + unit + "'");
  }
  sc.schedule.per_epoch = unit == "epochs";
  sc.momentum = kv_double(kv, "momentum", 0.9);
  sc.clip_norm = kv_double(kv, "clip", 20.0);
  sc.batch_size = kv_size(kv, "batch", 64);
  sc.epochs = kv_size(kv, "epochs", 50);
  sc.seed = kv_u64(kv, "seed", 0);
  sc.threads = static_cast<int>(kv_size(kv, "threads", 1));

  MtdlModel model(mc, sc.seed);
  std::vector<ParamView> views = model.params();
  OptimState opt = make_optim(views, sc.momentum);
  std::mt19937_64 shuffle_rng(sc.seed);

  out << "# epoch loss acc write_rate lr\n";
  for (std::size_t epoch = 0; epoch < sc.epochs; ++epoch) {
    EpochMetrics m = train_epoch(model, views, data, opt, sc, epoch, shuffle_rng);
    out << (epoch + 1) << " " << format_double(m.mean_loss) << " " << format_double(m.accuracy)
        << " " << format_double(m.write_rate) << " " << format_lr(m.lr) << "\n";
  }

  if (!a.out_ckpt.empty()) {
    save_checkpoint(a.out_ckpt, make_checkpoint(model, &opt));
  }
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& manifest, int threads,
             const std::string& scores_out, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  std::unique_ptr<TrainableModel> model = model_from_checkpoint(ckpt);
  std::vector<FeatureSequence> data = load_manifest(manifest);
  if (data.empty()) throw ConfigError("manifest " + manifest + " lists no sequences");
  EvalResult r = evaluate(*model, data, threads);
  out << "accuracy " << format_double(r.accuracy) << "\n";
  out << "write_rate " << format_double(r.write_rate) << "\n";
  if (!scores_out.empty()) {
    std::ofstream f(scores_out, std::ios::trunc);
    if (!f) throw IoError("cannot open " + scores_out + " for writing");
    char buf[64];
    for (const auto& probs : r.probabilities) {
      for (std::size_t i = 0; i < probs.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s%.9g", i ? " " : "", probs[i]);
        f << buf;
      }
      f << "\n";
    }
  }
  return 0;
}

int run_trace(const std::string& ckpt_path, const std::string& input, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.kind != "mtdl") {
    throw ConfigError("trace needs an mtdl checkpoint, got kind '" + ckpt.kind + "'");
  }
  std::unique_ptr<TrainableModel> loaded = model_from_checkpoint(ckpt);
  auto* model = dynamic_cast<MtdlModel*>(loaded.get());
  FeatureSequence seq = read_feature_file(input);

  Tape tape;
  ForwardResult fwd = forward_sequence(tape, model->model_params(), model->config(), seq);
  std::string id = fs::path(input).stem().string();
  std::replace_if(id.begin(), id.end(), [](char c) { return c == ' ' || c == '\t'; }, '_');
  fwd.trace.sequence_id = id.empty() ? "seq" : id;
  out << format_trace(fwd.trace);
  return 0;
}

struct GradcheckArgs {
  std::string config_file;
  std::string mode = "both";
  std::size_t seeds = 10;
  std::size_t length = 40;
  std::size_t coords = 32;
  double epsilon = 1e-5;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  KvMap kv = a.config_file.empty() ? KvMap{} : read_config_file(a.config_file);
  require_known_keys(kv, kModelKeys);
  ModelConfig mc = model_config_from_kv(kv);

  GradCheckOptions options;
  options.epsilon = a.epsilon;
  options.tolerance = a.tolerance;
  options.coords_per_param = a.coords;

  std::vector<std::string> modes;
  if (a.mode == "both") {
    modes = {"frozen", "surrogate"};
  } else if (a.mode == "frozen" || a.mode == "surrogate") {
    modes = {a.mode};
  } else {
    throw ConfigError("gradcheck mode must be frozen, surrogate or both, got '" + a.mode + "'");
  }

  bool pass = true;
  double worst = 0.0;
  for (const std::string& mode : modes) {
    for (std::size_t seed = 0; seed < a.seeds; ++seed) {
      ModelParams params = ModelParams::init(mc, seed);
      FeatureSequence seq = random_sequence(a.length, mc.feature_dim, mc.classes, seed);
      GradCheckReport report = mode == "frozen" ? check_frozen(params, mc, seq, options)
                                                : check_surrogate(params, mc, seq, options);
      out << "== mode=" << mode << " seed=" << seed << " ==\n" << format_report(report);
      worst = std::max(worst, report.max_rel_err);
      pass = pass && report.pass(options.tolerance);
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "gradcheck: %s (max rel err %.3e, tolerance %.1e)\n",
                pass ? "PASS" : "FAIL", worst, options.tolerance);
  out << buf;
  return pass ? 0 : 3;
}

std::vector<std::vector<double>> read_score_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open score file " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::istringstream in(line);
    std::vector<double> row;
    double v;
    while (in >> v) row.push_back(v);
    if (!in.eof()) {
      throw ParseError("score file " + path + " line " + std::to_string(lineno) +
                           ": not a number",
                       lineno);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("score file " + path + " is empty");
  return rows;
}

int run_fuse(const std::vector<std::string>& files, std::ostream& out) {
  if (files.size() < 2) throw ConfigError("fuse needs at least two score files");
  std::vector<std::vector<std::vector<double>>> streams;
  streams.reserve(files.size());
  for (const auto& f : files) streams.push_back(read_score_file(f));
  std::size_t samples = streams[0].size();
  for (std::size_t s = 1; s < streams.size(); ++s) {
    if (streams[s].size() != samples) {
      throw ShapeError("score files disagree on sample count: " + std::to_string(samples) +
                       " vs " + std::to_string(streams[s].size()));
    }
  }
  for (std::size_t i = 0; i < samples; ++i) {
    std::vector<std::vector<double>> per_stream;
    per_stream.reserve(streams.size());
    for (const auto& s : streams) per_stream.push_back(s[i]);
    std::vector<double> fused = fuse_scores(per_stream);
    int best = 0;
    for (std::size_t c = 1; c < fused.size(); ++c) {
      if (fused[c] > fused[best]) best = static_cast<int>(c);
    }
    out << best << "\n";
  }
  return 0;
}

// Collects value-bearing flag overrides so config-file keys lose to flags.
class Overrides {
 public:
  explicit Overrides(KvMap& kv) : kv_(kv) {}

  void bind(CLI::Option* option, const std::string& key, std::string* storage) {
    entries_.push_back({option, key, storage});
  }

  void apply() {
    for (const auto& e : entries_) {
      if (e.option->count() > 0) kv_[e.key] = *e.storage;
    }
  }

 private:
  struct Entry {
    CLI::Option* option;
    std::string key;
    std::string* storage;
  };
  KvMap& kv_;
  std::vector<Entry> entries_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"memory-augmented temporal dynamic learning network"};
  app.require_subcommand(1);

  // gen
  GenArgs gen;
  std::vector<std::pair<std::string, std::string>> gen_flag_storage;
  auto* gen_cmd = app.add_subcommand("gen", "generate synthetic MTDL feature files + manifests");
  gen_cmd->add_option("--spec", gen.spec_file, "synthetic spec file (key=value)");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  auto* gen_train = gen_cmd->add_option("--train", gen.train_count, "training sequences")
                        ->capture_default_str();
  auto* gen_test =
      gen_cmd->add_option("--test", gen.test_count, "test sequences")->capture_default_str();
  std::string g_classes = "5", g_dim = "32", g_length = "40", g_segment = "8", g_noise = "0.5",
              g_distractor = "0.3", g_seed = "42";
  Overrides gen_over(gen.overrides);
  gen_over.bind(gen_cmd->add_option("--classes", g_classes, "classes C")->capture_default_str(),
                "classes", &g_classes);
  gen_over.bind(gen_cmd->add_option("--dim", g_dim, "feature dimension d")->capture_default_str(),
                "dim", &g_dim);
  gen_over.bind(
      gen_cmd->add_option("--length", g_length, "sequence length T")->capture_default_str(),
      "length", &g_length);
  gen_over.bind(gen_cmd->add_option("--segment", g_segment, "signal segment length L")
                    ->capture_default_str(),
                "segment_length", &g_segment);
  gen_over.bind(
      gen_cmd->add_option("--noise", g_noise, "noise scale sigma")->capture_default_str(),
      "noise_scale", &g_noise);
  gen_over.bind(gen_cmd->add_option("--distractor", g_distractor, "distractor probability")
                    ->capture_default_str(),
                "distractor_prob", &g_distractor);
  gen_over.bind(gen_cmd->add_option("--seed", g_seed, "generator seed")->capture_default_str(),
                "seed", &g_seed);

  // train
  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  train_cmd->add_option("--manifest", train.manifest, "training manifest")->required();
  train_cmd->add_option("--config", train.config_file, "config file (key=value, flags win)");
  train_cmd->add_option("--out", train.out_ckpt, "output checkpoint path");
  std::string t_seed = "0", t_epochs = "50", t_lr = "0.001", t_momentum = "0.9", t_clip = "20",
              t_batch = "64", t_thr = "0.5", t_history = "mean", t_fallback = "force-last",
              t_threads = "1", t_interval = "20", t_factor = "0.1", t_unit = "epochs",
              t_fdim, t_hidden = "128", t_mdim = "256", t_cdim = "64", t_classes;
  Overrides train_over(train.overrides);
  train_over.bind(train_cmd->add_option("--seed", t_seed, "training seed")->capture_default_str(),
                  "seed", &t_seed);
  train_over.bind(train_cmd->add_option("--epochs", t_epochs, "epochs")->capture_default_str(),
                  "epochs", &t_epochs);
  train_over.bind(train_cmd->add_option("--lr", t_lr, "base learning rate")->capture_default_str(),
                  "lr", &t_lr);
  train_over.bind(
      train_cmd->add_option("--momentum", t_momentum, "SGD momentum")->capture_default_str(),
      "momentum", &t_momentum);
  train_over.bind(
      train_cmd->add_option("--clip", t_clip, "global gradient clip norm")->capture_default_str(),
      "clip", &t_clip);
  train_over.bind(
      train_cmd->add_option("--batch", t_batch, "mini-batch size")->capture_default_str(),
      "batch", &t_batch);
  train_over.bind(
      train_cmd->add_option("--thr", t_thr, "controller write threshold")->capture_default_str(),
      "threshold", &t_thr);
  train_over.bind(train_cmd->add_option("--history", t_history, "memory history mode (mean|sum)")
                      ->capture_default_str(),
                  "history", &t_history);
  train_over.bind(train_cmd
                      ->add_option("--fallback", t_fallback,
                                   "empty-memory fallback (force-last|feature-mean)")
                      ->capture_default_str(),
                  "fallback", &t_fallback);
  train_over.bind(
      train_cmd->add_option("--threads", t_threads, "worker threads")->capture_default_str(),
      "threads", &t_threads);
  train_over.bind(train_cmd->add_option("--decay-interval", t_interval, "lr decay interval")
                      ->capture_default_str(),
                  "lr_decay_interval", &t_interval);
  train_over.bind(train_cmd->add_option("--decay-factor", t_factor, "lr decay factor")
                      ->capture_default_str(),
                  "lr_decay_factor", &t_factor);
  train_over.bind(train_cmd->add_option("--decay-unit", t_unit, "decay unit (epochs|iterations)")
                      ->capture_default_str(),
                  "lr_decay_unit", &t_unit);
  train_over.bind(train_cmd->add_option("--feature-dim", t_fdim, "feature dimension d"),
                  "feature_dim", &t_fdim);
  train_over.bind(
      train_cmd->add_option("--lstm-hidden", t_hidden, "LSTM hidden size H")->capture_default_str(),
      "lstm_hidden", &t_hidden);
  train_over.bind(
      train_cmd->add_option("--memory-dim", t_mdim, "memory item size D")->capture_default_str(),
      "memory_dim", &t_mdim);
  train_over.bind(train_cmd->add_option("--controller-hidden", t_cdim, "controller width k")
                      ->capture_default_str(),
                  "controller_hidden", &t_cdim);
  train_over.bind(train_cmd->add_option("--classes", t_classes, "class count C"), "classes",
                  &t_classes);

  // eval
  std::string eval_ckpt, eval_manifest, eval_scores;
  int eval_threads = 1;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "evaluation manifest")->required();
  eval_cmd->add_option("--threads", eval_threads, "worker threads")->capture_default_str();
  eval_cmd->add_option("--scores-out", eval_scores,
                       "write per-sample class probabilities (fuse input)");

  // trace
  std::string trace_ckpt, trace_input;
  auto* trace_cmd = app.add_subcommand("trace", "emit the controller decision trace");
  trace_cmd->add_option("--ckpt", trace_ckpt, "checkpoint path")->required();
  trace_cmd->add_option("--input", trace_input, "MTDL feature file")->required();

  // gradcheck
  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc_cmd->add_option("--config", gc.config_file, "model config file");
  gc_cmd->add_option("--mode", gc.mode, "frozen|surrogate|both")->capture_default_str();
  gc_cmd->add_option("--seeds", gc.seeds, "seeds in the suite")->capture_default_str();
  gc_cmd->add_option("--length", gc.length, "sample length T")->capture_default_str();
  gc_cmd->add_option("--coords", gc.coords, "coordinates per parameter (0 = all)")
      ->capture_default_str();
  gc_cmd->add_option("--eps", gc.epsilon, "central-difference step")->capture_default_str();
  gc_cmd->add_option("--tol", gc.tolerance, "max relative error")->capture_default_str();

  // fuse
  std::vector<std::string> fuse_files;
  auto* fuse_cmd = app.add_subcommand("fuse", "average per-class probability files");
  fuse_cmd->add_option("--scores", fuse_files, "two or more score files")->required()
      ->expected(2, -1);

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("mtdl");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 1;
  } catch (const CLI::CallForAllHelp& e) {
    int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 1;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return 1;
  }

  try {
    if (gen_cmd->parsed()) {
      gen.train_count_set = gen_train->count() > 0;
      gen.test_count_set = gen_test->count() > 0;
      gen_over.apply();
      return run_gen(gen, out);
    }
    if (train_cmd->parsed()) {
      train_over.apply();
      return run_train(train, out);
    }
    if (eval_cmd->parsed()) {
      return run_eval(eval_ckpt, eval_manifest, eval_threads, eval_scores, out);
    }
    if (trace_cmd->parsed()) {
      return run_trace(trace_ckpt, trace_input, out);
    }
    if (gc_cmd->parsed()) {
      return run_gradcheck(gc, out);
    }
    if (fuse_cmd->parsed()) {
      return run_fuse(fuse_files, out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << "no subcommand\n";
  return 1;
}

}  // namespace mtdl::cli
