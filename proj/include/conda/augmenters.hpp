#pragma once

#include <cstdint>
#include <vector>

#include "conda/temporal_graph.hpp"

namespace conda {

enum class DropKind { edge, node };

struct DropPolicy {
  DropKind kind = DropKind::edge;
  double p = 0.0;  // drop probability
  uint64_t seed = 0;
};

// Per-epoch visibility mask over the full log: events outside the training
// range [0, train_end) are always kept; training events are dropped per the
// policy, re-drawn deterministically from (policy.seed, epoch). The log is
// never modified.
std::vector<uint8_t> drop_edges_view(const EventLog& log, const DropPolicy& policy,
                                     size_t train_end, uint64_t epoch);
std::vector<uint8_t> drop_nodes_view(const EventLog& log, const DropPolicy& policy,
                                     size_t train_end, uint64_t epoch);

}  // namespace conda
