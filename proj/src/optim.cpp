#include "conda/optim.hpp"

#include <cmath>
#include <cstring>

#include "conda/errors.hpp"

namespace conda {

namespace {

uint64_t fnv1a(uint64_t h, const void* bytes, size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

constexpr uint64_t kFnvOffset = 14695981039346656037ULL;

}  // namespace

Value ParameterStore::create(const std::string& name, Tensor init) {
  if (params_.count(name)) throw ConfigError("parameter already exists: " + name);
  auto node = std::make_shared<Node>();
  node->value = std::move(init);
  node->requires_grad = true;
  params_[name] = node;
  frozen_[name] = false;
  return node;
}

Value ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParameterStore::set_frozen(const std::string& prefix, bool frozen) {
  bool matched = false;
  for (auto& [name, node] : params_) {
    if (name.rfind(prefix, 0) == 0) {
      frozen_[name] = frozen;
      node->requires_grad = !frozen;
      if (frozen) node->zero_grad();
      matched = true;
    }
  }
  if (!matched) throw ConfigError("set_frozen: no parameters under prefix: " + prefix);
}

bool ParameterStore::frozen(const std::string& name) const {
  auto it = frozen_.find(name);
  if (it == frozen_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [_, node] : params_) node->zero_grad();
}

uint64_t ParameterStore::checksum(const std::string& prefix) const {
  uint64_t h = kFnvOffset;
  for (const auto& [name, node] : params_) {
    if (name.rfind(prefix, 0) != 0) continue;
    h = fnv1a(h, name.data(), name.size());
    for (double x : node->value.data) {
      float f = static_cast<float>(x);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      unsigned char le[4] = {static_cast<unsigned char>(bits & 0xff),
                             static_cast<unsigned char>((bits >> 8) & 0xff),
                             static_cast<unsigned char>((bits >> 16) & 0xff),
                             static_cast<unsigned char>((bits >> 24) & 0xff)};
      h = fnv1a(h, le, 4);
    }
  }
  return h;
}

std::map<std::string, Tensor> ParameterStore::export_tensors() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, node] : params_) out[name] = node->value;
  return out;
}

void ParameterStore::import_tensors(const std::map<std::string, Tensor>& tensors) {
  for (const auto& [name, t] : tensors) {
    if (name.rfind("meta/", 0) == 0) continue;
    auto it = params_.find(name);
    if (it == params_.end()) throw DataError("checkpoint has unknown parameter: " + name);
    if (!it->second->value.same_shape(t)) {
      throw DataError("checkpoint shape mismatch for " + name + ": have " +
                      shape_str(it->second->value.shape) + ", got " + shape_str(t.shape));
    }
    it->second->value = t;
  }
}

Adam::Adam(ParameterStore& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw ConfigError("adam: lr must be positive");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw ConfigError("adam: betas must be in [0,1)");
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, node] : params_.items()) {
    if (params_.frozen(name)) continue;
    if (!node->has_grad()) {
      throw ConfigError("adam: trainable parameter has no gradient: " + name);
    }
    auto& slot = slots_[name];
    if (slot.m.empty()) {
      slot.m = Tensor::zeros(node->value.shape);
      slot.v = Tensor::zeros(node->value.shape);
    }
    for (size_t i = 0; i < node->value.numel(); ++i) {
      double g = node->grad.data[i];
      slot.m.data[i] = cfg_.beta1 * slot.m.data[i] + (1.0 - cfg_.beta1) * g;
      slot.v.data[i] = cfg_.beta2 * slot.v.data[i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = slot.m.data[i] / bc1;
      double vhat = slot.v.data[i] / bc2;
      node->value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  params_.zero_grad();
}

}  // namespace conda
