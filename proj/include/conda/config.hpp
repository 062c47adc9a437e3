#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace conda {

struct TrainConfig {
  std::string dataset;
  std::string out_dir = ".";
  std::string augmenter = "none";  // none | conda | dropedge | dropnode

  double r_train = 0.1, r_val = 0.1, r_test = 0.8;

  size_t D = 64;
  size_t d_t = 32;
  size_t L = 16;
  size_t blocks = 2;
  size_t latent_d = 0;             // 0 -> max(4, D/8)
  std::string diff_len = "L/8";    // integer or "L/<divisor>"

  size_t r_ctdg = 10, r_conda = 10, cycles = 3;
  bool final_ctdg = true;
  size_t batch_size = 128;
  size_t eval_batch = 256;
  double lr = 1e-3;
  double dropout = 0.1;
  size_t patience = 5;

  size_t N = 50;
  double k = 1e-4;
  double alpha_min = 0.1, alpha_max = 0.9;
  double lambda = 1.0;
  std::string aug_mode = "supplement";  // off | supplement | replace
  double aug_weight = 0.5;

  double drop_p = 0.3;
  uint64_t seed = 7;
};

// Flat "key=value" file; '#' starts a comment, blank lines ignored.
TrainConfig parse_config_file(const std::string& path);

// Applies one key=value pair; unknown key or bad value -> ConfigError.
void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value);

void validate_config(const TrainConfig& cfg);

// "L/8" -> max(1, L/8); plain integers pass through. Result must be in [1, L).
size_t resolve_diff_len(const std::string& expr, size_t L);

size_t resolve_latent_d(const TrainConfig& cfg);

// Stable key order; used for the config echo in reports and manifests.
std::map<std::string, std::string> config_entries(const TrainConfig& cfg);

}  // namespace conda
