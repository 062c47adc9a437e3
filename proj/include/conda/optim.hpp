#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "conda/autodiff.hpp"
#include "conda/tensor.hpp"

namespace conda {

// Named parameter registry. Names are hierarchical ("ctdg/encoder/w") so whole
// subtrees can be frozen or checksummed by prefix. Iteration order is always
// lexicographic, which keeps optimizer updates and checkpoints deterministic.
class ParameterStore {
 public:
  Value create(const std::string& name, Tensor init);
  Value get(const std::string& name) const;
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  size_t size() const { return params_.size(); }
  std::vector<std::string> names() const;

  // Freezing a parameter drops it out of gradient flow entirely: its node
  // stops requiring grad and the optimizer skips it.
  void set_frozen(const std::string& prefix, bool frozen);
  bool frozen(const std::string& name) const;

  void zero_grad();

  // FNV-1a over names and float32 little-endian payloads of every parameter
  // under `prefix`. Used to prove frozen weights did not move.
  uint64_t checksum(const std::string& prefix = "") const;

  std::map<std::string, Tensor> export_tensors() const;
  // Copies values into existing parameters; unknown names are an error unless
  // they start with "meta/". Shapes must match.
  void import_tensors(const std::map<std::string, Tensor>& tensors);

  const std::map<std::string, Value>& items() const { return params_; }

 private:
  std::map<std::string, Value> params_;
  std::map<std::string, bool> frozen_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Frozen parameters are skipped; a trainable
// parameter with no accumulated gradient is treated as a wiring bug.
class Adam {
 public:
  explicit Adam(ParameterStore& params, AdamConfig cfg = {});

  void step();
  void zero_grad() { params_.zero_grad(); }
  int64_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor m;
    Tensor v;
  };
  ParameterStore& params_;
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace conda
