#include "conda/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "conda/errors.hpp"

namespace conda {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

size_t to_count(const std::string& key, const std::string& v) {
  double x = to_double(key, v);
  if (x < 0 || x != std::floor(x)) {
    throw ConfigError("config: " + key + " must be a non-negative integer, got '" + v + "'");
  }
  return static_cast<size_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " must be true/false, got '" + v + "'");
}

}  // namespace

void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "dataset") cfg.dataset = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "augmenter") cfg.augmenter = value;
  else if (key == "r_train") cfg.r_train = to_double(key, value);
  else if (key == "r_val") cfg.r_val = to_double(key, value);
  else if (key == "r_test") cfg.r_test = to_double(key, value);
  else if (key == "D") cfg.D = to_count(key, value);
  else if (key == "d_t") cfg.d_t = to_count(key, value);
  else if (key == "L") cfg.L = to_count(key, value);
  else if (key == "blocks") cfg.blocks = to_count(key, value);
  else if (key == "latent_d") cfg.latent_d = to_count(key, value);
  else if (key == "diff_len") cfg.diff_len = value;
  else if (key == "r_ctdg") cfg.r_ctdg = to_count(key, value);
  else if (key == "r_conda") cfg.r_conda = to_count(key, value);
  else if (key == "cycles") cfg.cycles = to_count(key, value);
  else if (key == "final_ctdg") cfg.final_ctdg = to_bool(key, value);
  else if (key == "batch_size") cfg.batch_size = to_count(key, value);
  else if (key == "eval_batch") cfg.eval_batch = to_count(key, value);
  else if (key == "lr") cfg.lr = to_double(key, value);
  else if (key == "dropout") cfg.dropout = to_double(key, value);
  else if (key == "patience") cfg.patience = to_count(key, value);
  else if (key == "N") cfg.N = to_count(key, value);
  else if (key == "k") cfg.k = to_double(key, value);
  else if (key == "alpha_min") cfg.alpha_min = to_double(key, value);
  else if (key == "alpha_max") cfg.alpha_max = to_double(key, value);
  else if (key == "lambda") cfg.lambda = to_double(key, value);
  else if (key == "aug_mode") cfg.aug_mode = value;
  else if (key == "aug_weight") cfg.aug_weight = to_double(key, value);
  else if (key == "drop_p") cfg.drop_p = to_double(key, value);
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(to_count(key, value));
  else throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  TrainConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    apply_config_entry(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return cfg;
}

size_t resolve_diff_len(const std::string& expr, size_t L) {
  std::string s = expr;
  size_t v = 0;
  if (s.rfind("L/", 0) == 0) {
    size_t div = to_count("diff_len divisor", s.substr(2));
    if (div == 0) throw ConfigError("diff_len: divisor must be positive");
    v = std::max<size_t>(1, L / div);
  } else {
    v = to_count("diff_len", s);
  }
  if (v < 1 || v >= L) {
    throw ConfigError("diff_len " + expr + " resolves to " + std::to_string(v) +
                      ", must be in [1, L) with L=" + std::to_string(L));
  }
  return v;
}

size_t resolve_latent_d(const TrainConfig& cfg) {
  size_t d = cfg.latent_d != 0 ? cfg.latent_d : std::max<size_t>(4, cfg.D / 8);
  if (d >= cfg.D) throw ConfigError("latent_d must be below D");
  return d;
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("config: dataset is required");
  if (cfg.augmenter != "none" && cfg.augmenter != "conda" && cfg.augmenter != "dropedge" &&
      cfg.augmenter != "dropnode") {
    throw ConfigError("config: unknown augmenter '" + cfg.augmenter + "'");
  }
  if (cfg.aug_mode != "off" && cfg.aug_mode != "supplement" && cfg.aug_mode != "replace") {
    throw ConfigError("config: unknown aug_mode '" + cfg.aug_mode + "'");
  }
  if (cfg.r_train <= 0 || cfg.r_val <= 0 || cfg.r_test <= 0 ||
      std::fabs(cfg.r_train + cfg.r_val + cfg.r_test - 1.0) > 1e-9) {
    throw ConfigError("config: split ratios must be positive and sum to 1");
  }
  if (cfg.D == 0 || cfg.d_t == 0 || cfg.L < 2 || cfg.blocks == 0) {
    throw ConfigError("config: model dims must be positive (L >= 2)");
  }
  if (cfg.batch_size == 0 || cfg.eval_batch == 0) {
    throw ConfigError("config: batch sizes must be positive");
  }
  if (cfg.r_ctdg == 0) throw ConfigError("config: r_ctdg must be positive");
  if (cfg.cycles == 0) throw ConfigError("config: cycles must be positive");
  if (cfg.lr <= 0) throw ConfigError("config: lr must be positive");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw ConfigError("config: dropout must be in [0,1)");
  if (cfg.drop_p < 0 || cfg.drop_p > 1) throw ConfigError("config: drop_p must be in [0,1]");
  if (cfg.aug_weight < 0) throw ConfigError("config: aug_weight must be non-negative");
  if (cfg.lambda < 0) throw ConfigError("config: lambda must be non-negative");
  resolve_latent_d(cfg);
  if (cfg.augmenter == "conda") {
    resolve_diff_len(cfg.diff_len, cfg.L);
    if (cfg.N < 2) throw ConfigError("config: N must be at least 2");
    if (cfg.r_conda == 0) throw ConfigError("config: r_conda must be positive for conda runs");
  }
}

std::map<std::string, std::string> config_entries(const TrainConfig& cfg) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  std::map<std::string, std::string> m;
  m["dataset"] = cfg.dataset;
  m["out_dir"] = cfg.out_dir;
  m["augmenter"] = cfg.augmenter;
  m["r_train"] = num(cfg.r_train);
  m["r_val"] = num(cfg.r_val);
  m["r_test"] = num(cfg.r_test);
  m["D"] = std::to_string(cfg.D);
  m["d_t"] = std::to_string(cfg.d_t);
  m["L"] = std::to_string(cfg.L);
  m["blocks"] = std::to_string(cfg.blocks);
  m["latent_d"] = std::to_string(cfg.latent_d);
  m["diff_len"] = cfg.diff_len;
  m["r_ctdg"] = std::to_string(cfg.r_ctdg);
  m["r_conda"] = std::to_string(cfg.r_conda);
  m["cycles"] = std::to_string(cfg.cycles);
  m["final_ctdg"] = cfg.final_ctdg ? "true" : "false";
  m["batch_size"] = std::to_string(cfg.batch_size);
  m["eval_batch"] = std::to_string(cfg.eval_batch);
  m["lr"] = num(cfg.lr);
  m["dropout"] = num(cfg.dropout);
  m["patience"] = std::to_string(cfg.patience);
  m["N"] = std::to_string(cfg.N);
  m["k"] = num(cfg.k);
  m["alpha_min"] = num(cfg.alpha_min);
  m["alpha_max"] = num(cfg.alpha_max);
  m["lambda"] = num(cfg.lambda);
  m["aug_mode"] = cfg.aug_mode;
  m["aug_weight"] = num(cfg.aug_weight);
  m["drop_p"] = num(cfg.drop_p);
  m["seed"] = std::to_string(cfg.seed);
  return m;
}

}  // namespace conda
