#include "conda/augmenters.hpp"

#include "conda/errors.hpp"
#include "conda/rng.hpp"

namespace conda {

namespace {

void check_policy(const DropPolicy& policy, const EventLog& log, size_t train_end) {
  if (policy.p < 0.0 || policy.p > 1.0) throw ConfigError("drop probability must be in [0,1]");
  if (train_end > log.num_events()) throw ConfigError("train_end exceeds log size");
}

}  // namespace

std::vector<uint8_t> drop_edges_view(const EventLog& log, const DropPolicy& policy,
                                     size_t train_end, uint64_t epoch) {
  check_policy(policy, log, train_end);
  std::vector<uint8_t> visible(log.num_events(), 1);
  Rng rng = Rng(policy.seed).fork("dropedge").fork(epoch);
  for (size_t i = 0; i < train_end; ++i) {
    if (rng.uniform() < policy.p) visible[i] = 0;
  }
  return visible;
}

std::vector<uint8_t> drop_nodes_view(const EventLog& log, const DropPolicy& policy,
                                     size_t train_end, uint64_t epoch) {
  check_policy(policy, log, train_end);
  std::vector<uint8_t> visible(log.num_events(), 1);
  Rng rng = Rng(policy.seed).fork("dropnode").fork(epoch);
  std::vector<uint8_t> dropped(log.num_nodes, 0);
  for (size_t v = 0; v < log.num_nodes; ++v) {
    if (rng.uniform() < policy.p) dropped[v] = 1;
  }
  for (size_t i = 0; i < train_end; ++i) {
    const Event& e = log.events[i];
    if (dropped[static_cast<size_t>(e.src)] || dropped[static_cast<size_t>(e.dst)]) visible[i] = 0;
  }
  return visible;
}

}  // namespace conda
