#include "mtdl/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "mtdl/errors.hpp"

namespace mtdl {

namespace {

constexpr unsigned char kMagic[4] = {0x4D, 0x54, 0x44, 0x4C};  // "MTDL"
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderSize = 18;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  put_u32(out, bits);
}

std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic spec: need at least 2 classes");
  if (dim == 0 || length == 0) throw ConfigError("synthetic spec: dim and length must be >= 1");
  if (segment_length == 0 || segment_length > length) {
    throw ConfigError("synthetic spec: segment length " + std::to_string(segment_length) +
                      " outside [1, " + std::to_string(length) + "]");
  }
  if (classes > dim) {
    throw ConfigError("synthetic spec: need dim >= classes for orthogonal signatures");
  }
  if (noise_scale < 0.0) throw ConfigError("synthetic spec: noise scale must be >= 0");
  if (distractor_prob < 0.0 || distractor_prob > 1.0) {
    throw ConfigError("synthetic spec: distractor probability outside [0, 1]");
  }
}

std::vector<double> class_signature(const SyntheticSpec& spec, std::size_t cls) {
  std::vector<double> sig(spec.dim, 0.0);
  sig[cls] = 1.0;
  return sig;
}

std::vector<double> distractor_signature(const SyntheticSpec& spec) {
  // Equal projection onto every class signature, so distractor frames look
  // informative but carry no class evidence.
  std::vector<double> sig(spec.dim, 0.0);
  double v = 1.0 / std::sqrt(static_cast<double>(spec.classes));
  for (std::size_t c = 0; c < spec.classes; ++c) sig[c] = v;
  return sig;
}

std::vector<FeatureSequence> generate_synthetic(const SyntheticSpec& spec, std::size_t count) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_scale);
  std::uniform_int_distribution<std::size_t> offset_dist(0, spec.length - spec.segment_length);
  std::bernoulli_distribution distract(spec.distractor_prob);

  // Balanced labels: round-robin assignment, then a seeded shuffle.
  std::vector<std::uint32_t> labels(count);
  for (std::size_t i = 0; i < count; ++i) labels[i] = static_cast<std::uint32_t>(i % spec.classes);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<double> distractor = distractor_signature(spec);

  std::vector<FeatureSequence> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    FeatureSequence& seq = out[i];
    seq.length = spec.length;
    seq.dim = spec.dim;
    seq.label = labels[i];
    seq.features.assign(spec.length * spec.dim, 0.0);
    seq.mask.assign(spec.length, 0);

    std::size_t offset = offset_dist(rng);
    std::vector<double> signature = class_signature(spec, seq.label);
    for (std::size_t t = 0; t < spec.length; ++t) {
      bool in_segment = t >= offset && t < offset + spec.segment_length;
      bool is_distractor = !in_segment && distract(rng);
      double* frame = seq.frame(t);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        double v = noise(rng);
        if (in_segment) v += signature[j];
        if (is_distractor) v += distractor[j];
        // Stored features are 32-bit, matching the file format exactly.
        frame[j] = static_cast<double>(static_cast<float>(v));
      }
      if (in_segment) seq.mask[t] = 1;
    }
  }
  return out;
}

void write_feature_file(const std::filesystem::path& path, const FeatureSequence& seq) {
  if (seq.length == 0 || seq.dim == 0) {
    throw ConfigError("write_feature_file: empty sequence");
  }
  if (seq.features.size() != seq.length * seq.dim) {
    throw ShapeError("write_feature_file: feature buffer length " +
                     std::to_string(seq.features.size()) + " does not match " +
                     std::to_string(seq.length) + " x " + std::to_string(seq.dim));
  }
  std::string buf;
  buf.reserve(kHeaderSize + 4 * seq.features.size());
  buf.append(reinterpret_cast<const char*>(kMagic), 4);
  put_u16(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(seq.length));
  put_u32(buf, static_cast<std::uint32_t>(seq.dim));
  put_u32(buf, seq.label);
  for (double v : seq.features) put_f32(buf, static_cast<float>(v));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("short write to " + path.string());
}

FeatureSequence read_feature_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for reading");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  std::size_t size = buf.size();

  if (size >= 4 && std::memcmp(p, kMagic, 4) != 0) {
    throw ParseError("bad magic, not an MTDL feature file", 0);
  }
  if (size < kHeaderSize) {
    throw ParseError("truncated header: expected " + std::to_string(kHeaderSize) +
                         " bytes, got " + std::to_string(size),
                     size);
  }
  std::uint16_t version = get_u16(p + 4);
  if (version != kVersion) {
    throw ParseError("unsupported version " + std::to_string(version) + ", expected " +
                         std::to_string(kVersion),
                     4);
  }
  std::uint32_t length = get_u32(p + 6);
  std::uint32_t dim = get_u32(p + 10);
  if (length == 0) throw ParseError("sequence length must be >= 1", 6);
  if (dim == 0) throw ParseError("feature dimension must be >= 1", 10);
  std::uint32_t label = get_u32(p + 14);

  std::uint64_t expected = kHeaderSize + 4ull * length * dim;
  if (size < expected) {
    throw ParseError("truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(size),
                     size);
  }
  if (size > expected) {
    throw ParseError("trailing data: expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(size),
                     expected);
  }

  FeatureSequence seq;
  seq.length = length;
  seq.dim = dim;
  seq.label = label;
  seq.features.resize(static_cast<std::size_t>(length) * dim);
  for (std::size_t i = 0; i < seq.features.size(); ++i) {
    seq.features[i] = static_cast<double>(get_f32(p + kHeaderSize + 4 * i));
  }
  return seq;
}

void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& entries) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries) f << e << '\n';
  if (!f) throw IoError("short write to " + path.string());
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  std::filesystem::path base = path.parent_path();
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
      line.pop_back();
    }
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    std::filesystem::path entry(line.substr(start));
    out.push_back(entry.is_absolute() ? entry : base / entry);
  }
  return out;
}

std::vector<FeatureSequence> load_manifest(const std::filesystem::path& path) {
  std::vector<FeatureSequence> out;
  for (const auto& file : read_manifest(path)) {
    out.push_back(read_feature_file(file));
  }
  return out;
}

}  // namespace mtdl
