#include "conda/synth.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <vector>

#include "conda/errors.hpp"
#include "conda/rng.hpp"

namespace conda {

EventLog synth_log(const SynthConfig& cfg) {
  if (cfg.num_nodes < 2) throw ConfigError("synth: need at least 2 nodes");
  if (cfg.num_events == 0) throw ConfigError("synth: need at least 1 event");
  if (cfg.communities == 0 || cfg.communities > cfg.num_nodes / 2) {
    throw ConfigError("synth: communities must be in [1, num_nodes/2]");
  }
  if (cfg.cross_p < 0 || cfg.cross_p > 1 || cfg.recur_p < 0 || cfg.recur_p > 1) {
    throw ConfigError("synth: probabilities must be in [0,1]");
  }
  if (cfg.rate <= 0) throw ConfigError("synth: rate must be positive");
  if (cfg.feat_noise < 0) throw ConfigError("synth: feat_noise must be non-negative");

  Rng rng(cfg.seed);
  Rng feat_rng = rng.fork("features");
  Rng event_rng = rng.fork("events");

  size_t C = cfg.communities;
  auto community_of = [&](size_t node) { return node * C / cfg.num_nodes; };
  // community c spans [lo(c), lo(c+1)); inverse of the block assignment above
  auto community_lo = [&](size_t c) { return (c * cfg.num_nodes + C - 1) / C; };

  EventLog log;
  log.num_nodes = cfg.num_nodes;
  log.d_v = cfg.d_v;
  log.d_e = 0;
  if (cfg.d_v > 0) {
    Tensor signatures({C, cfg.d_v});
    for (double& x : signatures.data) x = feat_rng.normal();
    for (size_t c = 0; c < C; ++c) {
      double norm = 0.0;
      for (size_t j = 0; j < cfg.d_v; ++j) norm += signatures.at2(c, j) * signatures.at2(c, j);
      norm = std::sqrt(norm);
      if (norm > 0) {
        for (size_t j = 0; j < cfg.d_v; ++j) signatures.at2(c, j) /= norm;
      }
    }
    log.node_feat = Tensor({cfg.num_nodes, cfg.d_v});
    for (size_t v = 0; v < cfg.num_nodes; ++v) {
      size_t c = community_of(v);
      for (size_t j = 0; j < cfg.d_v; ++j) {
        log.node_feat.at2(v, j) = signatures.at2(c, j) + cfg.feat_noise * feat_rng.normal();
      }
    }
  }

  std::vector<std::deque<int64_t>> recent(cfg.num_nodes);
  auto remember = [&](int64_t a, int64_t b) {
    auto& q = recent[static_cast<size_t>(a)];
    q.push_back(b);
    if (q.size() > cfg.recent_window) q.pop_front();
  };

  double t = 0.0;
  log.events.reserve(cfg.num_events);
  for (size_t i = 0; i < cfg.num_events; ++i) {
    t += -std::log(1.0 - event_rng.uniform()) / cfg.rate;
    int64_t src = static_cast<int64_t>(event_rng.uniform_int(cfg.num_nodes));
    size_t c = community_of(static_cast<size_t>(src));
    size_t lo = community_lo(c);
    size_t hi = c + 1 < C ? community_lo(c + 1) : cfg.num_nodes;

    int64_t dst = src;
    // recurrence only revisits intra-community partners; cross-community
    // contacts stay one-off noise instead of compounding through the window
    std::vector<int64_t> recurrable;
    for (int64_t p : recent[static_cast<size_t>(src)]) {
      if (community_of(static_cast<size_t>(p)) == c) recurrable.push_back(p);
    }
    if (!recurrable.empty() && event_rng.uniform() < cfg.recur_p) {
      dst = recurrable[event_rng.uniform_int(recurrable.size())];
    } else if (C > 1 && event_rng.uniform() < cfg.cross_p) {
      // fresh cross-community draw
      do {
        dst = static_cast<int64_t>(event_rng.uniform_int(cfg.num_nodes));
      } while (community_of(static_cast<size_t>(dst)) == c);
    } else {
      do {
        dst = static_cast<int64_t>(lo + event_rng.uniform_int(hi - lo));
      } while (dst == src);
    }

    Event e;
    e.src = src;
    e.dst = dst;
    e.t = t;
    e.idx = i;
    log.events.push_back(e);
    remember(src, dst);
    remember(dst, src);
  }
  return log;
}

}  // namespace conda
