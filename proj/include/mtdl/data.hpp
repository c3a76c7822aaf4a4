#ifndef MTDL_DATA_HPP_
#define MTDL_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mtdl/tensor.hpp"

namespace mtdl {

// One sample: T per-frame feature vectors plus a class label. The mask marks
// the planted signal frames and exists only for generated data; it is not
// stored in feature files.
struct FeatureSequence {
  std::size_t length = 0;  // T
  std::size_t dim = 0;     // d
  std::vector<double> features;  // [T x d] row-major (frame-major)
  std::uint32_t label = 0;
  std::vector<std::uint8_t> mask;  // empty, or T flags

  const double* frame(std::size_t t) const { return features.data() + t * dim; }
  double* frame(std::size_t t) { return features.data() + t * dim; }
};

// Segmental synthetic task: each sample hides a contiguous run of
// `segment_length` class-signature frames inside noise, with optional
// distractor frames that look informative but are shared across classes.
struct SyntheticSpec {
  std::size_t classes = 5;
  std::size_t dim = 32;
  std::size_t length = 40;          // T
  std::size_t segment_length = 8;   // L
  double noise_scale = 0.5;
  double distractor_prob = 0.3;
  std::uint64_t seed = 42;

  void validate() const;
};

// Orthogonal unit signature for a class (standard basis direction).
std::vector<double> class_signature(const SyntheticSpec& spec, std::size_t cls);

// Signature carried by distractor frames; unit norm, equal overlap with
// every class signature.
std::vector<double> distractor_signature(const SyntheticSpec& spec);

// Deterministic under the spec seed. Labels are balanced to within one
// sample per class. Features are quantized to 32-bit floats so that a
// generate -> write -> read round trip is bit-exact.
std::vector<FeatureSequence> generate_synthetic(const SyntheticSpec& spec, std::size_t count);

// Binary per-frame feature format ("MTDL"): magic 4D 54 44 4C, u16 LE
// version = 1, u32 T, u32 d, u32 label, then T*d little-endian 32-bit floats
// row-major. Values widen to 64-bit on load.
void write_feature_file(const std::filesystem::path& path, const FeatureSequence& seq);
FeatureSequence read_feature_file(const std::filesystem::path& path);

// Dataset manifests: plain text, one feature-file path per line. Relative
// paths resolve against the manifest's directory.
void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& entries);
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path);
std::vector<FeatureSequence> load_manifest(const std::filesystem::path& path);

}  // namespace mtdl

#endif  // MTDL_DATA_HPP_
