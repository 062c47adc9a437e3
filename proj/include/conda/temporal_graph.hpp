#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conda/tensor.hpp"

namespace conda {

struct Event {
  int64_t src = 0;
  int64_t dst = 0;
  double t = 0.0;
  std::vector<double> edge_feat;
  size_t idx = 0;  // ordinal position in the log
};

struct EventLog {
  std::vector<Event> events;
  size_t num_nodes = 0;
  size_t d_e = 0;
  size_t d_v = 0;
  Tensor node_feat;  // [num_nodes, d_v]; empty tensor when d_v == 0

  size_t num_events() const { return events.size(); }
};

// Contiguous chronological ranges [0, train_end), [train_end, val_end),
// [val_end, num_events).
struct ChronoSplit {
  size_t train_end = 0;
  size_t val_end = 0;
  size_t num_events = 0;
  size_t unseen_nodes = 0;  // nodes first appearing after the train boundary
};

struct NeighborSample {
  std::vector<int64_t> neighbor_ids;     // length L, zero-padded
  std::vector<double> neighbor_times;    // length L, zero-padded
  std::vector<double> edge_feats;        // L * d_e, zero-padded, row-major
  std::vector<uint8_t> mask;             // length L, 1 for genuine entries
  size_t real_count = 0;
  int64_t node = 0;
  double query_time = 0.0;
};

struct NegativeSample {
  int64_t src = 0;
  int64_t dst = 0;
  double t = 0.0;
};

// format "jodie": header then "user_id,item_id,timestamp,state_label,f1,...";
// item ids are shifted past the user id range to share one node-id space.
// format "edgelist": "src,dst,t" lines, optional alphabetic header.
// Events are stable-sorted by timestamp and timestamps shifted to start at 0.
EventLog ingest_csv(const std::string& path, const std::string& format);

ChronoSplit chrono_split(const EventLog& log, double r_train, double r_val, double r_test);

// Most-recent-first neighbor lookup over the undirected interaction history.
class NeighborFinder {
 public:
  explicit NeighborFinder(const EventLog& log);

  // The min(L, available) most recent partners of `node` strictly before `t`,
  // ties at equal time broken toward the higher event index. `visible`, when
  // given, is a per-event keep mask (size num_events) applied on top of the
  // time constraint.
  NeighborSample sample(int64_t node, double t, size_t L,
                        const std::vector<uint8_t>* visible = nullptr) const;

 private:
  struct Link {
    double t;
    size_t event_idx;
    int64_t partner;
  };
  const EventLog* log_;
  std::vector<std::vector<Link>> adj_;  // per node, chronological
};

// One uniform negative destination per event in [begin, end); deterministic
// under seed, no collision rejection.
std::vector<NegativeSample> sample_negatives(const EventLog& log, size_t begin, size_t end,
                                             uint64_t seed);

// 2|E_range| / (|V| (|V|-1)); every event in the range counts.
double density(const EventLog& log, size_t begin, size_t end);

size_t count_unique_edges(const EventLog& log);

// Canonical binary event file: magic "CNDE", version u16, num_nodes u64,
// num_events u64, d_v u64, d_e u64, node features as f32, then per event
// src i64, dst i64, t f64, edge features f32. Little-endian throughout.
void save_events(const std::string& path, const EventLog& log);
EventLog load_events(const std::string& path);

}  // namespace conda
