#ifndef MTDL_MEMORY_HPP_
#define MTDL_MEMORY_HPP_

#include <cstddef>
#include <random>
#include <vector>

#include "mtdl/tape.hpp"
#include "mtdl/tensor.hpp"

namespace mtdl {

enum class HistoryMode {
  kMean,  // history is the average of all items (default)
  kSum,   // unnormalized sum, kept for ablation
};

// Projection that turns an input feature into a memory item.
struct MemoryWriter {
  Tensor projection;  // [D x d]

  std::size_t item_dim() const { return projection.rows(); }

  static MemoryWriter init(std::size_t item_dim, std::size_t feature_dim, std::mt19937_64& rng);
};

// Growing per-sequence memory. Items are node ids on the sample's tape;
// the list is append-only within a sequence.
struct MemoryModule {
  std::vector<NodeId> items;
  std::size_t item_dim = 0;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
};

// Mean (or sum) of all items; the zero vector when the memory is empty.
NodeId read_history(Tape& tape, const MemoryModule& memory, HistoryMode mode);

// Appends decision * (projection @ feature) when `append` is set. The scale
// by the decision node is forward-neutral (the decision is 1) but carries the
// straight-through gradient into the controller. When `append` is false the
// memory is left untouched and this frame has no write gradient path.
void memory_write(Tape& tape, MemoryModule& memory, NodeId projection, NodeId feature,
                  NodeId decision, bool append);

// Unconditional append without a decision factor (empty-memory fallback).
void memory_write_forced(Tape& tape, MemoryModule& memory, NodeId projection, NodeId feature);

// The classification representation: pooled items of the final memory.
// Throws EmptyPoolError when the memory is empty.
NodeId final_pool(Tape& tape, const MemoryModule& memory, HistoryMode mode);

}  // namespace mtdl

#endif  // MTDL_MEMORY_HPP_
