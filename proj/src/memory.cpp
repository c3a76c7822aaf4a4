#include "mtdl/memory.hpp"

#include <cmath>

#include "mtdl/errors.hpp"

namespace mtdl {

MemoryWriter MemoryWriter::init(std::size_t item_dim, std::size_t feature_dim,
                                std::mt19937_64& rng) {
  if (item_dim == 0 || feature_dim == 0) {
    throw ConfigError("memory: dimensions must be >= 1");
  }
  double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  std::uniform_real_distribution<double> u(-bound, bound);
  MemoryWriter w;
  w.projection = Tensor::zeros({item_dim, feature_dim});
  for (double& v : w.projection.data) v = u(rng);
  return w;
}

NodeId read_history(Tape& tape, const MemoryModule& memory, HistoryMode mode) {
  if (memory.empty()) {
    return tape.leaf_zeros({memory.item_dim});
  }
  return mode == HistoryMode::kMean ? tape.mean_pool(memory.items)
                                    : tape.sum_pool(memory.items);
}

void memory_write(Tape& tape, MemoryModule& memory, NodeId projection, NodeId feature,
                  NodeId decision, bool append) {
  if (!append) return;
  memory.items.push_back(tape.scale(tape.matvec(projection, feature), decision));
}

void memory_write_forced(Tape& tape, MemoryModule& memory, NodeId projection, NodeId feature) {
  memory.items.push_back(tape.matvec(projection, feature));
}

NodeId final_pool(Tape& tape, const MemoryModule& memory, HistoryMode mode) {
  if (memory.empty()) {
    throw EmptyPoolError("final_pool: memory is empty (fallback not applied?)");
  }
  return mode == HistoryMode::kMean ? tape.mean_pool(memory.items)
                                    : tape.sum_pool(memory.items);
}

}  // namespace mtdl
