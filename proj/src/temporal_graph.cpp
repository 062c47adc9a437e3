#include "conda/temporal_graph.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "conda/errors.hpp"
#include "conda/rng.hpp"

namespace conda {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_num(const std::string& s, size_t line_no, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

int64_t parse_id(const std::string& s, size_t line_no, const std::string& what) {
  double v = parse_num(s, line_no, what);
  if (v < 0 || v != std::floor(v)) {
    throw DataError("line " + std::to_string(line_no) + ": " + what +
                    " must be a non-negative integer, got '" + s + "'");
  }
  return static_cast<int64_t>(v);
}

bool has_alpha(const std::string& s) {
  for (char c : s) {
    if (std::isalpha(static_cast<unsigned char>(c))) return true;
  }
  return false;
}

void finalize_log(EventLog& log) {
  if (log.events.empty()) throw DataError("event log is empty");
  std::stable_sort(log.events.begin(), log.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  double t0 = log.events.front().t;
  for (size_t i = 0; i < log.events.size(); ++i) {
    log.events[i].t -= t0;
    log.events[i].idx = i;
  }
}

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  uint64_t bits;
  if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
    std::memcpy(&bits, &v, 8);
  } else if constexpr (std::is_floating_point_v<T>) {
    uint32_t b32;
    std::memcpy(&b32, &v, 4);
    bits = b32;
  } else {
    bits = static_cast<uint64_t>(v);
  }
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  write_bytes(os, buf, sizeof(T));
}

void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw DataError(std::string("event file truncated while reading ") + what);
  }
}

template <typename T>
T read_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  read_bytes(is, buf, sizeof(T), what);
  uint64_t bits = 0;
  for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<uint64_t>(buf[i]) << (8 * i);
  if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>) {
    T v;
    std::memcpy(&v, &bits, 8);
    return v;
  } else if constexpr (std::is_floating_point_v<T>) {
    uint32_t b32 = static_cast<uint32_t>(bits);
    float f;
    std::memcpy(&f, &b32, 4);
    return f;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

EventLog ingest_csv(const std::string& path, const std::string& format) {
  if (format != "jodie" && format != "edgelist") {
    throw ConfigError("unknown ingest format: " + format);
  }
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset: " + path);

  EventLog log;
  std::string line;
  size_t line_no = 0;

  if (format == "jodie") {
    if (!std::getline(is, line)) throw DataError("empty dataset: " + path);
    line_no = 1;  // header consumed
    std::vector<std::pair<int64_t, int64_t>> raw_pairs;  // (user, item)
    int64_t max_user = -1, max_item = -1;
    bool d_e_known = false;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      auto cols = split_csv(line);
      if (cols.size() < 4) {
        throw DataError("line " + std::to_string(line_no) + ": expected at least 4 columns");
      }
      Event e;
      int64_t user = parse_id(cols[0], line_no, "user id");
      int64_t item = parse_id(cols[1], line_no, "item id");
      e.t = parse_num(cols[2], line_no, "timestamp");
      parse_num(cols[3], line_no, "state label");  // validated, unused
      size_t d_e = cols.size() - 4;
      if (!d_e_known) {
        log.d_e = d_e;
        d_e_known = true;
      } else if (d_e != log.d_e) {
        throw DataError("line " + std::to_string(line_no) + ": feature count " +
                        std::to_string(d_e) + " != " + std::to_string(log.d_e));
      }
      e.edge_feat.reserve(d_e);
      for (size_t i = 4; i < cols.size(); ++i) {
        e.edge_feat.push_back(parse_num(cols[i], line_no, "edge feature"));
      }
      max_user = std::max(max_user, user);
      max_item = std::max(max_item, item);
      raw_pairs.emplace_back(user, item);
      log.events.push_back(std::move(e));
    }
    if (log.events.empty()) throw DataError("no events in dataset: " + path);
    int64_t user_count = max_user + 1;
    for (size_t i = 0; i < log.events.size(); ++i) {
      log.events[i].src = raw_pairs[i].first;
      log.events[i].dst = user_count + raw_pairs[i].second;
    }
    log.num_nodes = static_cast<size_t>(user_count + max_item + 1);
  } else {
    int64_t max_id = -1;
    bool first = true;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) continue;
      if (first && has_alpha(line)) {
        first = false;
        continue;  // header
      }
      first = false;
      auto cols = split_csv(line);
      if (cols.size() != 3) {
        throw DataError("line " + std::to_string(line_no) + ": expected src,dst,t");
      }
      Event e;
      e.src = parse_id(cols[0], line_no, "src");
      e.dst = parse_id(cols[1], line_no, "dst");
      e.t = parse_num(cols[2], line_no, "timestamp");
      max_id = std::max({max_id, e.src, e.dst});
      log.events.push_back(std::move(e));
    }
    if (log.events.empty()) throw DataError("no events in dataset: " + path);
    log.num_nodes = static_cast<size_t>(max_id + 1);
    log.d_e = 0;
  }

  log.d_v = 0;
  finalize_log(log);
  return log;
}

ChronoSplit chrono_split(const EventLog& log, double r_train, double r_val, double r_test) {
  if (r_train <= 0 || r_val <= 0 || r_test <= 0) {
    throw ConfigError("split ratios must be positive");
  }
  if (std::fabs(r_train + r_val + r_test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  size_t n = log.num_events();
  if (n < 3) throw DataError("need at least 3 events to split, got " + std::to_string(n));

  ChronoSplit split;
  split.num_events = n;
  split.train_end = static_cast<size_t>(std::floor(r_train * static_cast<double>(n)));
  split.val_end = static_cast<size_t>(std::floor((r_train + r_val) * static_cast<double>(n)));

  std::vector<uint8_t> seen(log.num_nodes, 0);
  for (size_t i = 0; i < split.train_end; ++i) {
    seen[static_cast<size_t>(log.events[i].src)] = 1;
    seen[static_cast<size_t>(log.events[i].dst)] = 1;
  }
  std::vector<uint8_t> appears(log.num_nodes, 0);
  for (const Event& e : log.events) {
    appears[static_cast<size_t>(e.src)] = 1;
    appears[static_cast<size_t>(e.dst)] = 1;
  }
  for (size_t v = 0; v < log.num_nodes; ++v) {
    if (appears[v] && !seen[v]) ++split.unseen_nodes;
  }
  return split;
}

NeighborFinder::NeighborFinder(const EventLog& log) : log_(&log) {
  adj_.resize(log.num_nodes);
  for (const Event& e : log.events) {
    if (e.src < 0 || e.dst < 0 || static_cast<size_t>(e.src) >= log.num_nodes ||
        static_cast<size_t>(e.dst) >= log.num_nodes) {
      throw DataError("event " + std::to_string(e.idx) + " references node out of range");
    }
    adj_[static_cast<size_t>(e.src)].push_back({e.t, e.idx, e.dst});
    adj_[static_cast<size_t>(e.dst)].push_back({e.t, e.idx, e.src});
  }
}

NeighborSample NeighborFinder::sample(int64_t node, double t, size_t L,
                                      const std::vector<uint8_t>* visible) const {
  if (node < 0 || static_cast<size_t>(node) >= log_->num_nodes) {
    throw DataError("sample_neighbors: node out of range");
  }
  if (L == 0) throw ConfigError("sample_neighbors: L must be positive");

  NeighborSample s;
  s.node = node;
  s.query_time = t;
  s.neighbor_ids.assign(L, 0);
  s.neighbor_times.assign(L, 0.0);
  s.edge_feats.assign(L * log_->d_e, 0.0);
  s.mask.assign(L, 0);

  const auto& links = adj_[static_cast<size_t>(node)];
  // first link with link.t >= t; everything before is eligible
  size_t hi = static_cast<size_t>(
      std::lower_bound(links.begin(), links.end(), t,
                       [](const Link& l, double q) { return l.t < q; }) -
      links.begin());
  size_t filled = 0;
  for (size_t i = hi; i-- > 0 && filled < L;) {
    const Link& l = links[i];
    if (visible && !(*visible)[l.event_idx]) continue;
    s.neighbor_ids[filled] = l.partner;
    s.neighbor_times[filled] = l.t;
    if (log_->d_e > 0) {
      const auto& f = log_->events[l.event_idx].edge_feat;
      std::copy(f.begin(), f.end(), s.edge_feats.begin() + filled * log_->d_e);
    }
    ++filled;
  }
  s.real_count = filled;
  for (size_t i = 0; i < filled; ++i) s.mask[i] = 1;
  return s;
}

std::vector<NegativeSample> sample_negatives(const EventLog& log, size_t begin, size_t end,
                                             uint64_t seed) {
  if (begin > end || end > log.num_events()) {
    throw ConfigError("sample_negatives: bad range");
  }
  Rng rng(seed);
  std::vector<NegativeSample> out;
  out.reserve(end - begin);
  for (size_t i = begin; i < end; ++i) {
    const Event& e = log.events[i];
    out.push_back({e.src, static_cast<int64_t>(rng.uniform_int(log.num_nodes)), e.t});
  }
  return out;
}

double density(const EventLog& log, size_t begin, size_t end) {
  if (log.num_nodes < 2) throw DataError("density: need at least 2 nodes");
  if (begin > end || end > log.num_events()) throw ConfigError("density: bad range");
  double v = static_cast<double>(log.num_nodes);
  return 2.0 * static_cast<double>(end - begin) / (v * (v - 1.0));
}

size_t count_unique_edges(const EventLog& log) {
  std::set<std::pair<int64_t, int64_t>> edges;
  for (const Event& e : log.events) {
    edges.insert({std::min(e.src, e.dst), std::max(e.src, e.dst)});
  }
  return edges.size();
}

void save_events(const std::string& path, const EventLog& log) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open event file for writing: " + path);
  write_bytes(os, "CNDE", 4);
  write_le<uint16_t>(os, 1);
  write_le<uint64_t>(os, log.num_nodes);
  write_le<uint64_t>(os, log.num_events());
  write_le<uint64_t>(os, log.d_v);
  write_le<uint64_t>(os, log.d_e);
  for (size_t i = 0; i < log.num_nodes * log.d_v; ++i) {
    write_le<float>(os, static_cast<float>(log.node_feat.data[i]));
  }
  for (const Event& e : log.events) {
    write_le<int64_t>(os, e.src);
    write_le<int64_t>(os, e.dst);
    write_le<double>(os, e.t);
    for (double f : e.edge_feat) write_le<float>(os, static_cast<float>(f));
  }
  if (!os) throw DataError("event file write failed: " + path);
}

EventLog load_events(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open event file: " + path);
  char magic[4];
  read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, "CNDE", 4) != 0) throw DataError("bad event file magic: " + path);
  uint16_t version = read_le<uint16_t>(is, "version");
  if (version != 1) throw DataError("unsupported event file version: " + std::to_string(version));

  EventLog log;
  log.num_nodes = static_cast<size_t>(read_le<uint64_t>(is, "num_nodes"));
  size_t num_events = static_cast<size_t>(read_le<uint64_t>(is, "num_events"));
  log.d_v = static_cast<size_t>(read_le<uint64_t>(is, "d_v"));
  log.d_e = static_cast<size_t>(read_le<uint64_t>(is, "d_e"));
  if (log.d_v > 0) {
    log.node_feat = Tensor({log.num_nodes, log.d_v});
    for (size_t i = 0; i < log.num_nodes * log.d_v; ++i) {
      log.node_feat.data[i] = static_cast<double>(read_le<float>(is, "node features"));
    }
  }
  log.events.resize(num_events);
  double prev_t = 0.0;
  for (size_t i = 0; i < num_events; ++i) {
    Event& e = log.events[i];
    e.src = read_le<int64_t>(is, "src");
    e.dst = read_le<int64_t>(is, "dst");
    e.t = read_le<double>(is, "timestamp");
    e.idx = i;
    e.edge_feat.resize(log.d_e);
    for (size_t j = 0; j < log.d_e; ++j) {
      e.edge_feat[j] = static_cast<double>(read_le<float>(is, "edge features"));
    }
    if (e.t < prev_t) throw DataError("event file timestamps out of order at index " +
                                      std::to_string(i));
    prev_t = e.t;
    if (e.src < 0 || e.dst < 0 || static_cast<size_t>(e.src) >= log.num_nodes ||
        static_cast<size_t>(e.dst) >= log.num_nodes) {
      throw DataError("event file node id out of range at index " + std::to_string(i));
    }
  }
  return log;
}

}  // namespace conda
