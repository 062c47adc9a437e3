#include "conda/tensor.hpp"

#include <cmath>
#include <sstream>

#include "conda/errors.hpp"

namespace conda {

Tensor::Tensor(std::vector<size_t> s) : shape(std::move(s)) {
  data.assign(shape_numel(shape), 0.0);
}

Tensor::Tensor(std::vector<size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::full(std::vector<size_t> s, double v) {
  Tensor t(std::move(s));
  t.fill(v);
  return t;
}

Tensor Tensor::randn(std::vector<size_t> s, Rng& rng) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = rng.normal();
  return t;
}

Tensor Tensor::glorot(size_t fan_in, size_t fan_out, Rng& rng) {
  Tensor t({fan_in, fan_out});
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : t.data) x = rng.uniform(-bound, bound);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (double& x : data) x = v;
}

void Tensor::add_(const Tensor& o) {
  if (!same_shape(o)) {
    throw ShapeError("add_: shape " + shape_str(shape) + " vs " + shape_str(o.shape));
  }
  for (size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
}

size_t shape_numel(const std::vector<size_t>& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

std::string shape_str(const std::vector<size_t>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::vector<size_t> broadcast_shape(const std::string& op, const std::vector<size_t>& a,
                                    const std::vector<size_t>& b) {
  size_t rank = std::max(a.size(), b.size());
  std::vector<size_t> out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(op + ": shape " + shape_str(a) + " vs " + shape_str(b));
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

namespace {

// Row-major strides with 0 on broadcast (size-1) dims, aligned to out rank.
std::vector<size_t> bcast_strides(const std::vector<size_t>& shape, size_t out_rank) {
  std::vector<size_t> strides(out_rank, 0);
  size_t s = 1;
  for (size_t i = 0; i < shape.size(); ++i) {
    size_t dim = shape[shape.size() - 1 - i];
    strides[out_rank - 1 - i] = dim == 1 ? 0 : s;
    s *= dim;
  }
  return strides;
}

}  // namespace

Tensor broadcast_apply(const std::string& op, const Tensor& a, const Tensor& b,
                       double (*f)(double, double)) {
  if (a.shape == b.shape) {  // fast path, no index arithmetic
    Tensor out(a.shape);
    for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return out;
  }
  std::vector<size_t> os = broadcast_shape(op, a.shape, b.shape);
  Tensor out(os);
  size_t rank = os.size();
  std::vector<size_t> sa = bcast_strides(a.shape, rank);
  std::vector<size_t> sb = bcast_strides(b.shape, rank);
  std::vector<size_t> idx(rank, 0);
  size_t ia = 0, ib = 0;
  for (size_t flat = 0; flat < out.data.size(); ++flat) {
    out.data[flat] = f(a.data[ia], b.data[ib]);
    for (size_t d = rank; d-- > 0;) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < os[d]) break;
      ia -= sa[d] * os[d];
      ib -= sb[d] * os[d];
      idx[d] = 0;
    }
  }
  return out;
}

Tensor reduce_to_shape(const Tensor& g, const std::vector<size_t>& target_shape) {
  if (g.shape == target_shape) return g;
  Tensor out(target_shape);
  size_t rank = g.shape.size();
  std::vector<size_t> st = bcast_strides(target_shape, rank);
  std::vector<size_t> idx(rank, 0);
  size_t it = 0;
  for (size_t flat = 0; flat < g.data.size(); ++flat) {
    out.data[it] += g.data[flat];
    for (size_t d = rank; d-- > 0;) {
      idx[d]++;
      it += st[d];
      if (idx[d] < g.shape[d]) break;
      it -= st[d] * g.shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

void matmul_nn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* pc = c.data.data();
  for (size_t i = 0; i < m; ++i) {
    for (size_t l = 0; l < k; ++l) {
      double av = pa[i * k + l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      double* crow = pc + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* pc = c.data.data();
  for (size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      pc[i * n + j] += acc;
    }
  }
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  size_t m = a.shape[1], k = a.shape[0], n = b.shape[1];
  const double* pa = a.data.data();
  const double* pb = b.data.data();
  double* pc = c.data.data();
  for (size_t l = 0; l < k; ++l) {
    const double* arow = pa + l * m;
    const double* brow = pb + l * n;
    for (size_t i = 0; i < m; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* crow = pc + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace conda
