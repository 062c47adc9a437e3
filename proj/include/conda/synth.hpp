#pragma once

#include <cstdint>

#include "conda/temporal_graph.hpp"

namespace conda {

// Planted-structure generator: nodes are split into contiguous communities,
// node features carry a noisy community signature, and destinations favor
// recently repeated partners inside the source's community. Fresh draws cross
// community lines with probability cross_p. Deterministic under seed.
struct SynthConfig {
  size_t num_nodes = 200;
  size_t num_events = 5000;
  size_t communities = 2;
  double cross_p = 0.05;     // cross-community probability for fresh draws
  double recur_p = 0.6;      // chance to revisit a recent partner
  size_t recent_window = 5;  // how many recent partners are candidates
  double rate = 1.0;         // exponential inter-event rate
  size_t d_v = 8;
  double feat_noise = 0.1;   // per-node deviation from the community signature
  uint64_t seed = 7;
};

EventLog synth_log(const SynthConfig& cfg);

}  // namespace conda
