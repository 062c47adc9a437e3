#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "conda/rng.hpp"
#include "conda/tensor.hpp"

namespace conda {

// One node of the computation graph: a value plus its accumulated gradient.
struct Node {
  Tensor value;
  Tensor grad;  // empty until the backward pass touches it
  bool requires_grad = false;

  bool has_grad() const { return !grad.empty(); }
  // Additive accumulation; fan-out sums naturally.
  void accumulate(const Tensor& g);
  void zero_grad() { grad = Tensor(); }
};

using Value = std::shared_ptr<Node>;

// Reverse-mode tape. Operations record themselves in execution order; the
// backward pass replays them in exact reverse. Not shareable across threads.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  Value leaf(Tensor v, bool requires_grad = false);
  Value constant(Tensor v) { return leaf(std::move(v), false); }

  Value matmul(const Value& a, const Value& b);
  Value add(const Value& a, const Value& b);
  Value sub(const Value& a, const Value& b);
  Value mul(const Value& a, const Value& b);  // elementwise, broadcasting
  Value scalar_mul(const Value& a, double c);
  Value concat(const std::vector<Value>& xs);  // along the last axis
  Value slice(const Value& a, size_t axis, size_t begin, size_t end);
  Value reshape(const Value& a, std::vector<size_t> shape);
  Value sum(const Value& a);        // full reduction to scalar
  Value mean(const Value& a);       // full reduction to scalar
  Value mean_rows(const Value& a);  // [R,C] -> [C], mean over axis 0
  Value relu(const Value& a);
  Value gelu(const Value& a);  // exact erf form
  Value sigmoid(const Value& a);
  Value tanh(const Value& a);
  Value exp(const Value& a);
  Value log(const Value& a);  // input clamped to >= 1e-12
  Value cos(const Value& a);
  Value square(const Value& a);
  // Normalizes the last axis to zero mean / unit variance (no affine part;
  // compose with mul/add for gain and bias).
  Value layer_norm(const Value& a, double eps = 1e-5);
  // Inverted dropout: scales kept entries by 1/(1-p) in training, identity in
  // eval. The mask is drawn from `rng` at record time.
  Value dropout(const Value& a, double p, Rng& rng, bool training);
  Value mse(const Value& pred, const Value& target);
  // Mean of the numerically stable binary cross-entropy on logits.
  Value bce_with_logits(const Value& logits, const Value& labels);

  // Seeds d(loss)/d(loss) = 1 and pulls gradients back through every
  // recorded op. `loss` must be scalar; a tape can be consumed once.
  void backward(const Value& loss);

  void clear();
  bool recording() const { return recording_; }
  size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Value out;
    std::function<void()> pull;
  };

  Value unary(const std::string& op, const Value& a, double (*f)(double), double (*df)(double));
  Value make(Tensor out_value, bool needs_grad);
  void record(const Value& out, std::function<void()> pull);

  std::vector<Entry> entries_;
  bool recording_;
  bool consumed_ = false;
};

}  // namespace conda
