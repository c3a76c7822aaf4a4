#include "mtdl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "mtdl/errors.hpp"

namespace mtdl {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        t + "'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    kv[key] = value;
  }
  return kv;
}

std::string format_kv_text(const KvMap& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += "=";
    out += v;
    out += "\n";
  }
  return out;
}

KvMap read_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_kv_text(text);
}

void require_known_keys(const KvMap& kv, const std::vector<std::string>& known) {
  for (const auto& [k, v] : kv) {
    if (std::find(known.begin(), known.end(), k) == known.end()) {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
}

double kv_double(const KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as a number");
  }
}

std::size_t kv_size(const KvMap& kv, const std::string& key, std::size_t fallback) {
  return static_cast<std::size_t>(kv_u64(kv, key, fallback));
}

std::uint64_t kv_u64(const KvMap& kv, const std::string& key, std::uint64_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::uint64_t v = 0;
  const char* begin = it->second.data();
  const char* end = begin + it->second.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + it->second +
                      "' as a non-negative integer");
  }
  return v;
}

std::string kv_string(const KvMap& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

HistoryMode history_mode_from_string(const std::string& s) {
  if (s == "mean") return HistoryMode::kMean;
  if (s == "sum") return HistoryMode::kSum;
  throw ConfigError("history mode must be 'mean' or 'sum', got '" + s + "'");
}

std::string to_string(HistoryMode mode) {
  return mode == HistoryMode::kMean ? "mean" : "sum";
}

EmptyMemoryFallback fallback_from_string(const std::string& s) {
  if (s == "force-last") return EmptyMemoryFallback::kForceLast;
  if (s == "feature-mean") return EmptyMemoryFallback::kFeatureMean;
  throw ConfigError("fallback must be 'force-last' or 'feature-mean', got '" + s + "'");
}

std::string to_string(EmptyMemoryFallback fallback) {
  return fallback == EmptyMemoryFallback::kForceLast ? "force-last" : "feature-mean";
}

ModelConfig model_config_from_kv(const KvMap& kv) {
  ModelConfig c;
  c.feature_dim = kv_size(kv, "feature_dim", c.feature_dim);
  c.lstm_hidden = kv_size(kv, "lstm_hidden", c.lstm_hidden);
  c.memory_dim = kv_size(kv, "memory_dim", c.memory_dim);
  c.controller_hidden = kv_size(kv, "controller_hidden", c.controller_hidden);
  c.classes = kv_size(kv, "classes", c.classes);
  c.threshold = kv_double(kv, "threshold", c.threshold);
  c.history = history_mode_from_string(kv_string(kv, "history", to_string(c.history)));
  c.fallback = fallback_from_string(kv_string(kv, "fallback", to_string(c.fallback)));
  c.validate();
  return c;
}

KvMap kv_from_model_config(const ModelConfig& c) {
  KvMap kv;
  kv["feature_dim"] = std::to_string(c.feature_dim);
  kv["lstm_hidden"] = std::to_string(c.lstm_hidden);
  kv["memory_dim"] = std::to_string(c.memory_dim);
  kv["controller_hidden"] = std::to_string(c.controller_hidden);
  kv["classes"] = std::to_string(c.classes);
  kv["threshold"] = std::to_string(c.threshold);
  kv["history"] = to_string(c.history);
  kv["fallback"] = to_string(c.fallback);
  return kv;
}

SyntheticSpec synthetic_spec_from_kv(const KvMap& kv) {
  SyntheticSpec s;
  s.classes = kv_size(kv, "classes", s.classes);
  s.dim = kv_size(kv, "dim", s.dim);
  s.length = kv_size(kv, "length", s.length);
  s.segment_length = kv_size(kv, "segment_length", s.segment_length);
  s.noise_scale = kv_double(kv, "noise_scale", s.noise_scale);
  s.distractor_prob = kv_double(kv, "distractor_prob", s.distractor_prob);
  s.seed = kv_u64(kv, "seed", s.seed);
  s.validate();
  return s;
}

}  // namespace mtdl
