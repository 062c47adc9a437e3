#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "conda/rng.hpp"

namespace conda {

// Dense row-major tensor of 64-bit floats. All training math is double
// precision; 32-bit only appears at checkpoint serialization.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s);
  Tensor(std::vector<size_t> s, std::vector<double> d);

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<size_t> s, double v);
  static Tensor randn(std::vector<size_t> s, Rng& rng);
  // Glorot-uniform in +-sqrt(6/(fan_in+fan_out)).
  static Tensor glorot(size_t fan_in, size_t fan_out, Rng& rng);

  size_t numel() const { return data.size(); }
  size_t rank() const { return shape.size(); }
  size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? (shape.empty() ? 1 : shape[0]) : shape[1]; }

  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }
  double& at2(size_t r, size_t c) { return data[r * shape[1] + c]; }
  double at2(size_t r, size_t c) const { return data[r * shape[1] + c]; }

  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  // Fault-state detector: true when any entry is NaN or Inf.
  bool all_finite() const;

  void fill(double v);
  void add_(const Tensor& o);  // in-place +=, shapes must match
};

size_t shape_numel(const std::vector<size_t>& s);
std::string shape_str(const std::vector<size_t>& s);

// Trailing-dimension (NumPy) broadcast of two shapes; throws ShapeError
// naming `op` when incompatible.
std::vector<size_t> broadcast_shape(const std::string& op, const std::vector<size_t>& a,
                                    const std::vector<size_t>& b);

// out[i] = f(a[bcast], b[bcast]) over the broadcast shape.
Tensor broadcast_apply(const std::string& op, const Tensor& a, const Tensor& b,
                       double (*f)(double, double));

// Sum `g` (shaped like the broadcast output) back down to `target_shape`.
Tensor reduce_to_shape(const Tensor& g, const std::vector<size_t>& target_shape);

// C += A * B, all rank-2. nn: plain, nt: A * B^T, tn: A^T * B.
void matmul_nn_acc(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& c);
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c);

}  // namespace conda
