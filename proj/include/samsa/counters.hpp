#pragma once

#include <cstdint>

namespace samsa {

// Work counters read by the complexity probe and the bench command.
struct OpCounters {
  std::uint64_t selection_work = 0;    // scores scanned while ranking candidates
  std::uint64_t pair_forward = 0;      // pairwise relaxations evaluated in forward
  std::uint64_t pair_backward = 0;     // pairwise relaxations evaluated in backward
  std::uint64_t attention_scores = 0;  // query-key dot products

  void reset() { *this = OpCounters{}; }
};

inline OpCounters& op_counters() {
  thread_local OpCounters counters;
  return counters;
}

}  // namespace samsa
