#ifndef MTDL_CONFIG_HPP_
#define MTDL_CONFIG_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mtdl/data.hpp"
#include "mtdl/model.hpp"

namespace mtdl {

using KvMap = std::map<std::string, std::string>;

// Flat "key = value" text, one pair per line; '#' starts a comment.
KvMap parse_kv_text(const std::string& text);
std::string format_kv_text(const KvMap& kv);
KvMap read_config_file(const std::filesystem::path& path);

// Throws ConfigError when kv contains a key not in `known`.
void require_known_keys(const KvMap& kv, const std::vector<std::string>& known);

// Typed accessors; throw ConfigError on malformed values.
double kv_double(const KvMap& kv, const std::string& key, double fallback);
std::size_t kv_size(const KvMap& kv, const std::string& key, std::size_t fallback);
std::uint64_t kv_u64(const KvMap& kv, const std::string& key, std::uint64_t fallback);
std::string kv_string(const KvMap& kv, const std::string& key, const std::string& fallback);

HistoryMode history_mode_from_string(const std::string& s);
std::string to_string(HistoryMode mode);
EmptyMemoryFallback fallback_from_string(const std::string& s);
std::string to_string(EmptyMemoryFallback fallback);

ModelConfig model_config_from_kv(const KvMap& kv);
KvMap kv_from_model_config(const ModelConfig& config);

SyntheticSpec synthetic_spec_from_kv(const KvMap& kv);

}  // namespace mtdl

#endif  // MTDL_CONFIG_HPP_
