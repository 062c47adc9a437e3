// conda-tgl: ingest event streams, generate synthetic logs, train CTDG link
// predictors with optional Conda/DropEdge/DropNode augmentation, and sweep
// diffusion hyperparameters. Exit codes: 0 ok, 1 usage/config, 2 data,
// 3 numeric fault.
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "conda/config.hpp"
#include "conda/errors.hpp"
#include "conda/synth.hpp"
#include "conda/temporal_graph.hpp"
#include "conda/trainer.hpp"

namespace {

using conda::ConfigError;
using conda::DataError;
using nlohmann::json;

uint64_t fnv1a(uint64_t h, const void* bytes, size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr uint64_t kFnvOffset = 14695981039346656037ULL;

std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open file for hashing: " + path);
  uint64_t h = kFnvOffset;
  char buf[1 << 16];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    h = fnv1a(h, buf, static_cast<size_t>(is.gcount()));
  }
  return hex64(h);
}

// CONDA_TGL_THREADS caps kernel parallelism; every kernel here is
// single-threaded, so any valid cap yields identical results.
int thread_cap() {
  const char* env = std::getenv("CONDA_TGL_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  long v = std::strtol(env, &end, 10);
  if (!end || *end != '\0' || v < 1) {
    throw ConfigError(std::string("CONDA_TGL_THREADS must be a positive integer, got: ") + env);
  }
  return static_cast<int>(v);
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << j.dump(2) << "\n";
  if (!os) throw DataError("write failed: " + path);
}

json config_json(const conda::TrainConfig& cfg) {
  json j;
  for (const auto& [k, v] : conda::config_entries(cfg)) j[k] = v;
  return j;
}

// Deterministic run id from everything that determines the outputs.
std::string run_id(const std::string& command, const json& payload) {
  std::string s = command + payload.dump();
  return hex64(fnv1a(kFnvOffset, s.data(), s.size()));
}

void write_manifest(const std::string& path, const std::string& command, const json& args,
                    const json& extra = {}) {
  json m;
  m["command"] = command;
  m["args"] = args;
  m["thread_cap"] = thread_cap();
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  m["run_id"] = run_id(command, args);
  write_json_file(path, m);
}

json log_stats(const conda::EventLog& log) {
  json s;
  s["num_nodes"] = log.num_nodes;
  s["num_events"] = log.events.size();
  s["d_v"] = log.d_v;
  s["d_e"] = log.d_e;
  s["unique_edges"] = count_unique_edges(log);
  s["density"] = conda::density(log, 0, log.events.size());
  return s;
}

int cmd_ingest(const std::string& input, const std::string& format, const std::string& out) {
  conda::EventLog log = conda::ingest_csv(input, format);
  conda::save_events(out, log);
  json stats = log_stats(log);
  stats["content_hash"] = file_hash(out);
  write_json_file(out + ".stats.json", stats);
  json args{{"input", input}, {"format", format}, {"out", out}};
  write_manifest(out + ".manifest.json", "ingest", args,
                 {{"content_hash", stats["content_hash"]}});
  std::cout << stats.dump() << "\n";
  return 0;
}

int cmd_synth(size_t nodes, size_t events, size_t communities, uint64_t seed,
              const std::string& out) {
  conda::SynthConfig sc;
  sc.num_nodes = nodes;
  sc.num_events = events;
  sc.communities = communities;
  sc.seed = seed;
  conda::EventLog log = conda::synth_log(sc);
  conda::save_events(out, log);
  json stats = log_stats(log);
  stats["content_hash"] = file_hash(out);
  write_json_file(out + ".stats.json", stats);
  json args{{"nodes", nodes},
            {"events", events},
            {"communities", communities},
            {"seed", seed},
            {"out", out}};
  write_manifest(out + ".manifest.json", "synth", args,
                 {{"content_hash", stats["content_hash"]}});
  std::cout << stats.dump() << "\n";
  return 0;
}

struct TrainArgs {
  std::string config_path;
  std::string augmenter;  // optional override
  std::string dataset;    // optional override
  std::string out_dir;    // optional override
  int64_t seed = -1;      // optional override
  std::vector<std::string> sets;  // raw key=value overrides
};

conda::TrainConfig resolve_train_config(const TrainArgs& a) {
  conda::TrainConfig cfg = conda::parse_config_file(a.config_path);
  for (const std::string& kv : a.sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got: " + kv);
    conda::apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.augmenter.empty()) conda::apply_config_entry(cfg, "augmenter", a.augmenter);
  if (!a.dataset.empty()) cfg.dataset = a.dataset;
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  conda::validate_config(cfg);
  return cfg;
}

// Runs one experiment; writes report + manifest under cfg.out_dir.
conda::RunResult train_once(const conda::TrainConfig& cfg, const conda::EventLog& log,
                            const std::string& config_path) {
  std::filesystem::create_directories(cfg.out_dir);
  conda::RunResult res = conda::run_experiment(cfg, log);
  std::filesystem::path out(cfg.out_dir);
  conda::write_report((out / "report.jsonl").string(), cfg, res);
  json args{{"config_path", config_path},
            {"config", config_json(cfg)},
            {"dataset", cfg.dataset},
            {"dataset_hash", file_hash(cfg.dataset)}};
  write_manifest((out / "manifest.json").string(), "train", args,
                 {{"out_dir", cfg.out_dir}});
  return res;
}

int cmd_train(const TrainArgs& a) {
  conda::TrainConfig cfg = resolve_train_config(a);
  conda::EventLog log = conda::load_events(cfg.dataset);
  conda::RunResult res = train_once(cfg, log, a.config_path);
  json out{{"test_ap", res.test_ap},
           {"test_auc", res.test_auc},
           {"best_val_ap", res.best_val_ap},
           {"report", (std::filesystem::path(cfg.out_dir) / "report.jsonl").string()}};
  std::cout << out.dump() << "\n";
  return 0;
}

struct SweepArgs {
  std::string config_path;
  std::string param;  // diff_len | k
  std::vector<std::string> values;
  std::vector<uint64_t> seeds;
  std::string out_dir;  // optional override of the sweep root
};

struct SweepRow {
  std::string value;
  double mean_ap = 0, std_ap = 0, mean_auc = 0, std_auc = 0;
};

SweepRow summarize(const std::string& value, const std::vector<double>& aps,
                   const std::vector<double>& aucs) {
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sdev = [&](const std::vector<double>& v, double m) {
    if (v.size() < 2) return 0.0;
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  SweepRow r;
  r.value = value;
  r.mean_ap = mean(aps);
  r.std_ap = sdev(aps, r.mean_ap);
  r.mean_auc = mean(aucs);
  r.std_auc = sdev(aucs, r.mean_auc);
  return r;
}

int cmd_sweep(const SweepArgs& a) {
  if (a.values.empty()) throw ConfigError("sweep: empty value list");
  if (a.param != "diff_len" && a.param != "k") {
    throw ConfigError("sweep: param must be diff_len or k, got: " + a.param);
  }
  conda::TrainConfig base = conda::parse_config_file(a.config_path);
  std::string root = a.out_dir.empty() ? base.out_dir : a.out_dir;
  std::vector<uint64_t> seeds = a.seeds;
  if (seeds.empty()) seeds = {base.seed, base.seed + 1, base.seed + 2};

  conda::EventLog log = conda::load_events(base.dataset);
  std::filesystem::create_directories(root);

  auto run_cell = [&](conda::TrainConfig cfg, uint64_t seed, const std::string& tag) {
    cfg.seed = seed;
    cfg.out_dir = (std::filesystem::path(root) / tag / ("seed_" + std::to_string(seed))).string();
    conda::validate_config(cfg);
    return train_once(cfg, log, a.config_path);
  };

  // shared baseline row: plain training, same seed set, for the k=0 /
  // dashed-line comparison
  std::vector<double> base_aps, base_aucs;
  for (uint64_t s : seeds) {
    conda::TrainConfig cfg = base;
    conda::apply_config_entry(cfg, "augmenter", "none");
    conda::RunResult r = run_cell(cfg, s, "baseline");
    base_aps.push_back(r.test_ap);
    base_aucs.push_back(r.test_auc);
  }

  std::vector<SweepRow> rows;
  for (const std::string& v : a.values) {
    bool is_zero_k = a.param == "k" && std::strtod(v.c_str(), nullptr) == 0.0;
    if (is_zero_k) {
      // k = 0 injects no noise at all: by definition the baseline
      rows.push_back(summarize(v, base_aps, base_aucs));
      continue;
    }
    std::vector<double> aps, aucs;
    for (uint64_t s : seeds) {
      conda::TrainConfig cfg = base;
      conda::apply_config_entry(cfg, "augmenter", "conda");
      conda::apply_config_entry(cfg, a.param, v);
      std::string tag = a.param + "_" + v;
      for (char& c : tag) {
        if (c == '/' || c == ' ') c = '-';
      }
      conda::RunResult r = run_cell(cfg, s, tag);
      aps.push_back(r.test_ap);
      aucs.push_back(r.test_auc);
    }
    rows.push_back(summarize(v, aps, aucs));
  }
  rows.push_back(summarize("baseline", base_aps, base_aucs));

  std::filesystem::path table_path = std::filesystem::path(root) / "sweep.jsonl";
  std::ofstream os(table_path, std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + table_path.string());
  json seeds_j = seeds;
  for (const SweepRow& r : rows) {
    json j{{"param", a.param},  {"value", r.value},     {"mean_ap", r.mean_ap},
           {"std_ap", r.std_ap}, {"mean_auc", r.mean_auc}, {"std_auc", r.std_auc},
           {"seeds", seeds_j}};
    os << j.dump() << "\n";
    std::cout << j.dump() << "\n";
  }
  if (!os) throw DataError("write failed: " + table_path.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conda-tgl: temporal-graph link prediction with diffusion augmentation"};
  app.require_subcommand(1);

  std::string in_path, in_format = "edgelist", in_out;
  auto* ingest = app.add_subcommand("ingest", "convert a CSV event stream to a binary log");
  ingest->add_option("--input", in_path, "source CSV")->required();
  ingest->add_option("--format", in_format, "jodie|edgelist")
      ->check(CLI::IsMember({"jodie", "edgelist"}));
  ingest->add_option("--out", in_out, "binary event file to write")->required();

  size_t sy_nodes = 200, sy_events = 5000, sy_comm = 2;
  uint64_t sy_seed = 7;
  std::string sy_out;
  auto* synth = app.add_subcommand("synth", "generate a planted-community event log");
  synth->add_option("--nodes", sy_nodes, "node count");
  synth->add_option("--events", sy_events, "event count");
  synth->add_option("--communities", sy_comm, "community count");
  synth->add_option("--seed", sy_seed, "generator seed");
  synth->add_option("--out", sy_out, "binary event file to write")->required();

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "run one training experiment");
  train->add_option("--config", ta.config_path, "key=value config file")->required();
  train->add_option("--augmenter", ta.augmenter, "none|conda|dropedge|dropnode");
  train->add_option("--dataset", ta.dataset, "binary event file (overrides config)");
  train->add_option("--out-dir", ta.out_dir, "output directory (overrides config)");
  train->add_option("--seed", ta.seed, "seed (overrides config)");
  train->add_option("--set", ta.sets, "extra key=value overrides");

  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "sweep diff_len or k over a value list");
  sweep->add_option("--config", sa.config_path, "key=value config file")->required();
  sweep->add_option("--param", sa.param, "diff_len|k")->required();
  sweep->add_option("--values", sa.values, "value list (diff_len accepts L/<div>)")
      ->required()
      ->delimiter(',');
  sweep->add_option("--seeds", sa.seeds, "seed list (default: seed, seed+1, seed+2)")
      ->delimiter(',');
  sweep->add_option("--out-dir", sa.out_dir, "sweep root directory (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    thread_cap();  // validate up front
    if (app.got_subcommand(ingest)) return cmd_ingest(in_path, in_format, in_out);
    if (app.got_subcommand(synth)) return cmd_synth(sy_nodes, sy_events, sy_comm, sy_seed, sy_out);
    if (app.got_subcommand(train)) return cmd_train(ta);
    if (app.got_subcommand(sweep)) return cmd_sweep(sa);
    return 1;
  } catch (const conda::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const conda::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const conda::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const conda::ShapeError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
