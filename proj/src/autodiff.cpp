#include "conda/autodiff.hpp"

#include <cmath>
#include <string>

#include "conda/errors.hpp"

namespace conda {

namespace {

constexpr double kLogClamp = 1e-12;

double add_f(double a, double b) { return a + b; }
double sub_f(double a, double b) { return a - b; }
double mul_f(double a, double b) { return a * b; }

double sigmoid_f(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) grad = Tensor::zeros(value.shape);
  grad.add_(g);
}

Value Tape::leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

Value Tape::make(Tensor out_value, bool needs_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(out_value);
  n->requires_grad = needs_grad;
  return n;
}

void Tape::record(const Value& out, std::function<void()> pull) {
  entries_.push_back({out, std::move(pull)});
}

void Tape::backward(const Value& loss) {
  if (loss->value.numel() != 1) {
    throw ConfigError("backward: loss must be scalar, got shape " + shape_str(loss->value.shape));
  }
  if (entries_.empty()) {
    throw ConfigError("backward: tape is empty");
  }
  if (consumed_) {
    throw ConfigError("backward: tape already consumed");
  }
  consumed_ = true;
  loss->accumulate(Tensor::full(loss->value.shape, 1.0));
  for (size_t i = entries_.size(); i-- > 0;) {
    if (entries_[i].out->has_grad()) entries_[i].pull();
  }
}

void Tape::clear() {
  entries_.clear();
  consumed_ = false;
}

Value Tape::matmul(const Value& a, const Value& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0]) {
    throw ShapeError("matmul: shape " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  }
  Tensor out({av.shape[0], bv.shape[1]});
  matmul_nn_acc(av, bv, out);
  bool needs = recording_ && (a->requires_grad || b->requires_grad);
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, b] {
      if (a->requires_grad) {
        if (a->grad.empty()) a->grad = Tensor::zeros(a->value.shape);
        matmul_nt_acc(o->grad, b->value, a->grad);
      }
      if (b->requires_grad) {
        if (b->grad.empty()) b->grad = Tensor::zeros(b->value.shape);
        matmul_tn_acc(a->value, o->grad, b->grad);
      }
    });
  }
  return o;
}

Value Tape::add(const Value& a, const Value& b) {
  Tensor out = broadcast_apply("add", a->value, b->value, add_f);
  bool needs = recording_ && (a->requires_grad || b->requires_grad);
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, b] {
      if (a->requires_grad) a->accumulate(reduce_to_shape(o->grad, a->value.shape));
      if (b->requires_grad) b->accumulate(reduce_to_shape(o->grad, b->value.shape));
    });
  }
  return o;
}

Value Tape::sub(const Value& a, const Value& b) {
  Tensor out = broadcast_apply("sub", a->value, b->value, sub_f);
  bool needs = recording_ && (a->requires_grad || b->requires_grad);
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, b] {
      if (a->requires_grad) a->accumulate(reduce_to_shape(o->grad, a->value.shape));
      if (b->requires_grad) {
        Tensor g = reduce_to_shape(o->grad, b->value.shape);
        for (double& x : g.data) x = -x;
        b->accumulate(g);
      }
    });
  }
  return o;
}

Value Tape::mul(const Value& a, const Value& b) {
  Tensor out = broadcast_apply("mul", a->value, b->value, mul_f);
  bool needs = recording_ && (a->requires_grad || b->requires_grad);
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, b] {
      if (a->requires_grad) {
        Tensor ga = broadcast_apply("mul", o->grad, b->value, mul_f);
        a->accumulate(reduce_to_shape(ga, a->value.shape));
      }
      if (b->requires_grad) {
        Tensor gb = broadcast_apply("mul", o->grad, a->value, mul_f);
        b->accumulate(reduce_to_shape(gb, b->value.shape));
      }
    });
  }
  return o;
}

Value Tape::scalar_mul(const Value& a, double c) {
  Tensor out = a->value;
  for (double& x : out.data) x *= c;
  bool needs = recording_ && a->requires_grad;
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, c] {
      Tensor g = o->grad;
      for (double& x : g.data) x *= c;
      a->accumulate(g);
    });
  }
  return o;
}

Value Tape::concat(const std::vector<Value>& xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  size_t rank = xs[0]->value.rank();
  if (rank == 0) throw ShapeError("concat: scalars have no axis");
  std::vector<size_t> out_shape = xs[0]->value.shape;
  size_t last = 0;
  for (const Value& x : xs) {
    const auto& s = x->value.shape;
    if (s.size() != rank ||
        !std::equal(s.begin(), s.end() - 1, out_shape.begin(), out_shape.end() - 1)) {
      throw ShapeError("concat: shape " + shape_str(out_shape) + " vs " + shape_str(s));
    }
    last += s.back();
  }
  out_shape.back() = last;
  size_t outer = shape_numel(out_shape) / last;
  Tensor out(out_shape);
  size_t off = 0;
  for (const Value& x : xs) {
    size_t w = x->value.shape.back();
    for (size_t r = 0; r < outer; ++r) {
      for (size_t c = 0; c < w; ++c) out.data[r * last + off + c] = x->value.data[r * w + c];
    }
    off += w;
  }
  bool needs = recording_;
  bool any = false;
  for (const Value& x : xs) any = any || x->requires_grad;
  needs = needs && any;
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, xs, outer, last] {
      size_t off = 0;
      for (const Value& x : xs) {
        size_t w = x->value.shape.back();
        if (x->requires_grad) {
          Tensor g(x->value.shape);
          for (size_t r = 0; r < outer; ++r) {
            for (size_t c = 0; c < w; ++c) g.data[r * w + c] = o->grad.data[r * last + off + c];
          }
          x->accumulate(g);
        }
        off += w;
      }
    });
  }
  return o;
}

Value Tape::slice(const Value& a, size_t axis, size_t begin, size_t end) {
  const Tensor& av = a->value;
  if (axis >= av.rank() || begin >= end || end > av.shape[axis]) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " range [" + std::to_string(begin) +
                     "," + std::to_string(end) + ") on shape " + shape_str(av.shape));
  }
  std::vector<size_t> out_shape = av.shape;
  out_shape[axis] = end - begin;
  size_t inner = 1;
  for (size_t i = axis + 1; i < av.rank(); ++i) inner *= av.shape[i];
  size_t outer = av.numel() / (inner * av.shape[axis]);
  size_t dim = av.shape[axis], w = end - begin;
  Tensor out(out_shape);
  for (size_t r = 0; r < outer; ++r) {
    const double* src = av.data.data() + (r * dim + begin) * inner;
    double* dst = out.data.data() + r * w * inner;
    std::copy(src, src + w * inner, dst);
  }
  bool needs = recording_ && a->requires_grad;
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, outer, inner, dim, begin, w] {
      if (a->grad.empty()) a->grad = Tensor::zeros(a->value.shape);
      for (size_t r = 0; r < outer; ++r) {
        const double* src = o->grad.data.data() + r * w * inner;
        double* dst = a->grad.data.data() + (r * dim + begin) * inner;
        for (size_t i = 0; i < w * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return o;
}

Value Tape::reshape(const Value& a, std::vector<size_t> shape) {
  if (shape_numel(shape) != a->value.numel()) {
    throw ShapeError("reshape: shape " + shape_str(a->value.shape) + " vs " + shape_str(shape));
  }
  Tensor out(shape, a->value.data);
  bool needs = recording_ && a->requires_grad;
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a] {
      Tensor g(a->value.shape, o->grad.data);
      a->accumulate(g);
    });
  }
  return o;
}

Value Tape::sum(const Value& a) {
  double s = 0.0;
  for (double x : a->value.data) s += x;
  bool needs = recording_ && a->requires_grad;
  Value o = make(Tensor::scalar(s), needs);
  if (needs) {
    record(o, [o, a] {
      double g = o->grad.data[0];
      a->accumulate(Tensor::full(a->value.shape, g));
    });
  }
  return o;
}

Value Tape::mean(const Value& a) {
  if (a->value.numel() == 0) throw ShapeError("mean: empty input");
  double s = 0.0;
  for (double x : a->value.data) s += x;
  double n = static_cast<double>(a->value.numel());
  bool needs = recording_ && a->requires_grad;
  Value o = make(Tensor::scalar(s / n), needs);
  if (needs) {
    record(o, [o, a, n] {
      double g = o->grad.data[0] / n;
      a->accumulate(Tensor::full(a->value.shape, g));
    });
  }
  return o;
}

Value Tape::mean_rows(const Value& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) throw ShapeError("mean_rows: need rank 2, got " + shape_str(av.shape));
  size_t r = av.shape[0], c = av.shape[1];
  Tensor out({c});
  for (size_t i = 0; i < r; ++i) {
    for (size_t j = 0; j < c; ++j) out.data[j] += av.data[i * c + j];
  }
  double inv = 1.0 / static_cast<double>(r);
  for (double& x : out.data) x *= inv;
  bool needs = recording_ && a->requires_grad;
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, r, c, inv] {
      Tensor g(a->value.shape);
      for (size_t i = 0; i < r; ++i) {
        for (size_t j = 0; j < c; ++j) g.data[i * c + j] = o->grad.data[j] * inv;
      }
      a->accumulate(g);
    });
  }
  return o;
}

Value Tape::unary(const std::string& op, const Value& a, double (*f)(double),
                  double (*df)(double)) {
  (void)op;
  Tensor out = a->value;
  for (double& x : out.data) x = f(x);
  bool needs = recording_ && a->requires_grad;
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, df] {
      Tensor g(a->value.shape);
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = o->grad.data[i] * df(a->value.data[i]);
      a->accumulate(g);
    });
  }
  return o;
}

Value Tape::relu(const Value& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Value Tape::gelu(const Value& a) {
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); },
      [](double x) {
        return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
               x * 0.3989422804014326779399461 * std::exp(-0.5 * x * x);
      });
}

Value Tape::sigmoid(const Value& a) {
  return unary("sigmoid", a, sigmoid_f, [](double x) {
    double s = sigmoid_f(x);
    return s * (1.0 - s);
  });
}

Value Tape::tanh(const Value& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double x) {
        double t = std::tanh(x);
        return 1.0 - t * t;
      });
}

Value Tape::exp(const Value& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Value Tape::log(const Value& a) {
  return unary(
      "log", a, [](double x) { return std::log(x < kLogClamp ? kLogClamp : x); },
      [](double x) { return x < kLogClamp ? 0.0 : 1.0 / x; });
}

Value Tape::cos(const Value& a) {
  return unary(
      "cos", a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Value Tape::square(const Value& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Value Tape::layer_norm(const Value& a, double eps) {
  const Tensor& av = a->value;
  if (av.rank() == 0) throw ShapeError("layer_norm: scalar input");
  size_t c = av.shape.back();
  size_t r = av.numel() / c;
  Tensor out(av.shape);
  Tensor inv_std({r});
  Tensor xhat(av.shape);
  for (size_t i = 0; i < r; ++i) {
    const double* row = av.data.data() + i * c;
    double mu = 0.0;
    for (size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std.data[i] = is;
    for (size_t j = 0; j < c; ++j) {
      double h = (row[j] - mu) * is;
      xhat.data[i * c + j] = h;
      out.data[i * c + j] = h;
    }
  }
  bool needs = recording_ && a->requires_grad;
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, r, c, inv_std = std::move(inv_std), xhat = std::move(xhat)] {
      Tensor g(a->value.shape);
      double invc = 1.0 / static_cast<double>(c);
      for (size_t i = 0; i < r; ++i) {
        const double* go = o->grad.data.data() + i * c;
        const double* xh = xhat.data.data() + i * c;
        double gsum = 0.0, gxsum = 0.0;
        for (size_t j = 0; j < c; ++j) {
          gsum += go[j];
          gxsum += go[j] * xh[j];
        }
        double is = inv_std.data[i];
        for (size_t j = 0; j < c; ++j) {
          g.data[i * c + j] = is * (go[j] - gsum * invc - xh[j] * gxsum * invc);
        }
      }
      a->accumulate(g);
    });
  }
  return o;
}

Value Tape::dropout(const Value& a, double p, Rng& rng, bool training) {
  if (p < 0.0 || p > 1.0) throw ConfigError("dropout: p must be in [0,1]");
  if (!training || p == 0.0) {
    // identity in eval mode; no rng draw so streams stay aligned
    Tensor out = a->value;
    bool needs = recording_ && a->requires_grad;
    Value o = make(std::move(out), needs);
    if (needs) {
      record(o, [o, a] { a->accumulate(o->grad); });
    }
    return o;
  }
  double scale = p >= 1.0 ? 0.0 : 1.0 / (1.0 - p);
  Tensor mask(a->value.shape);
  for (double& m : mask.data) m = rng.uniform() >= p ? scale : 0.0;
  Tensor out(a->value.shape);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a->value.data[i] * mask.data[i];
  bool needs = recording_ && a->requires_grad;
  Value o = make(std::move(out), needs);
  if (needs) {
    record(o, [o, a, mask = std::move(mask)] {
      Tensor g(a->value.shape);
      for (size_t i = 0; i < g.data.size(); ++i) g.data[i] = o->grad.data[i] * mask.data[i];
      a->accumulate(g);
    });
  }
  return o;
}

Value Tape::mse(const Value& pred, const Value& target) {
  const Tensor& pv = pred->value;
  const Tensor& tv = target->value;
  if (!pv.same_shape(tv)) {
    throw ShapeError("mse: shape " + shape_str(pv.shape) + " vs " + shape_str(tv.shape));
  }
  if (pv.numel() == 0) throw ShapeError("mse: empty input");
  double s = 0.0;
  for (size_t i = 0; i < pv.numel(); ++i) {
    double d = pv.data[i] - tv.data[i];
    s += d * d;
  }
  double n = static_cast<double>(pv.numel());
  bool needs = recording_ && (pred->requires_grad || target->requires_grad);
  Value o = make(Tensor::scalar(s / n), needs);
  if (needs) {
    record(o, [o, pred, target, n] {
      double g = o->grad.data[0] * 2.0 / n;
      if (pred->requires_grad) {
        Tensor gp(pred->value.shape);
        for (size_t i = 0; i < gp.data.size(); ++i) {
          gp.data[i] = g * (pred->value.data[i] - target->value.data[i]);
        }
        pred->accumulate(gp);
      }
      if (target->requires_grad) {
        Tensor gt(target->value.shape);
        for (size_t i = 0; i < gt.data.size(); ++i) {
          gt.data[i] = -g * (pred->value.data[i] - target->value.data[i]);
        }
        target->accumulate(gt);
      }
    });
  }
  return o;
}

Value Tape::bce_with_logits(const Value& logits, const Value& labels) {
  const Tensor& zv = logits->value;
  const Tensor& yv = labels->value;
  if (!zv.same_shape(yv)) {
    throw ShapeError("bce_with_logits: shape " + shape_str(zv.shape) + " vs " +
                     shape_str(yv.shape));
  }
  if (zv.numel() == 0) throw ShapeError("bce_with_logits: empty input");
  // stable form: max(z,0) - z*y + log(1 + exp(-|z|))
  double s = 0.0;
  for (size_t i = 0; i < zv.numel(); ++i) {
    double z = zv.data[i], y = yv.data[i];
    s += (z > 0.0 ? z : 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
  }
  double n = static_cast<double>(zv.numel());
  bool needs = recording_ && (logits->requires_grad || labels->requires_grad);
  Value o = make(Tensor::scalar(s / n), needs);
  if (needs) {
    record(o, [o, logits, labels, n] {
      double g = o->grad.data[0] / n;
      if (logits->requires_grad) {
        Tensor gz(logits->value.shape);
        for (size_t i = 0; i < gz.data.size(); ++i) {
          gz.data[i] = g * (sigmoid_f(logits->value.data[i]) - labels->value.data[i]);
        }
        logits->accumulate(gz);
      }
      if (labels->requires_grad) {
        Tensor gy(labels->value.shape);
        for (size_t i = 0; i < gy.data.size(); ++i) gy.data[i] = -g * logits->value.data[i];
        labels->accumulate(gy);
      }
    });
  }
  return o;
}

}  // namespace conda
