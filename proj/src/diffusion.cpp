#include "conda/diffusion.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "conda/errors.hpp"

namespace conda {

NoiseSchedule build_schedule(size_t N, double k, double alpha_min, double alpha_max) {
  if (N < 2) throw ConfigError("schedule: N must be at least 2");
  if (!(alpha_min > 0.0 && alpha_min < alpha_max && alpha_max < 1.0)) {
    throw ConfigError("schedule: need 0 < alpha_min < alpha_max < 1");
  }
  if (!(k > 0.0 && k <= 1.0)) throw ConfigError("schedule: need 0 < k <= 1");
  if (k * alpha_max >= 1.0) throw ConfigError("schedule: k * alpha_max must stay below 1");

  NoiseSchedule s;
  s.N = N;
  s.k = k;
  s.alpha_min = alpha_min;
  s.alpha_max = alpha_max;
  s.beta.resize(N);
  s.alpha.resize(N);
  s.alpha_bar.resize(N);
  s.beta_tilde.resize(N);
  for (size_t n = 1; n <= N; ++n) {
    double frac = static_cast<double>(n - 1) / static_cast<double>(N - 1);
    s.alpha_bar[n - 1] = 1.0 - k * (alpha_min + frac * (alpha_max - alpha_min));
  }
  for (size_t n = 1; n <= N; ++n) {
    s.alpha[n - 1] = s.alpha_bar[n - 1] / s.ab(n - 1);
    s.beta[n - 1] = 1.0 - s.alpha[n - 1];
    s.beta_tilde[n - 1] =
        n == 1 ? 0.0 : s.beta[n - 1] * (1.0 - s.ab(n - 1)) / (1.0 - s.alpha_bar[n - 1]);
  }
  return s;
}

namespace {

// checks shared by the latent-layout operations
void check_step(const NoiseSchedule& s, size_t n, const char* op) {
  if (n < 1 || n > s.N) {
    throw ConfigError(std::string(op) + ": step " + std::to_string(n) + " outside [1, " +
                      std::to_string(s.N) + "]");
  }
}

}  // namespace

CondaModel::CondaModel(const CondaConfig& cfg, const NoiseSchedule& schedule,
                       ParameterStore& params, Rng& init_rng)
    : cfg_(cfg), sched_(schedule) {
  if (cfg_.d == 0 || cfg_.D == 0 || cfg_.L == 0) throw ConfigError("conda: dims must be positive");
  if (cfg_.d >= cfg_.D) throw ConfigError("conda: latent width d must be below D");
  if (cfg_.diff_len < 1 || cfg_.diff_len >= cfg_.L) {
    throw ConfigError("conda: diff_len must be in [1, L)");
  }
  if (cfg_.step_dim == 0 || cfg_.step_dim % 2 != 0) {
    throw ConfigError("conda: step_dim must be positive and even");
  }
  if (cfg_.vae_hidden == 0) cfg_.vae_hidden = cfg_.D;

  size_t D = cfg_.D, d = cfg_.d, h = cfg_.vae_hidden;
  enc_w1 = params.create("conda/phi/w1", Tensor::glorot(D, h, init_rng));
  enc_b1 = params.create("conda/phi/b1", Tensor::zeros({h}));
  enc_mu_w = params.create("conda/phi/mu_w", Tensor::glorot(h, d, init_rng));
  enc_mu_b = params.create("conda/phi/mu_b", Tensor::zeros({d}));
  enc_lv_w = params.create("conda/phi/lv_w", Tensor::glorot(h, d, init_rng));
  enc_lv_b = params.create("conda/phi/lv_b", Tensor::zeros({d}));

  size_t dd = cfg_.diff_len * d;
  size_t den_in = cfg_.L * d + cfg_.step_dim;
  size_t den_h = 4 * dd;
  den_w1 = params.create("conda/theta/w1", Tensor::glorot(den_in, den_h, init_rng));
  den_b1 = params.create("conda/theta/b1", Tensor::zeros({den_h}));
  den_w2 = params.create("conda/theta/w2", Tensor::glorot(den_h, den_h, init_rng));
  den_b2 = params.create("conda/theta/b2", Tensor::zeros({den_h}));
  den_w3 = params.create("conda/theta/w3", Tensor::glorot(den_h, dd, init_rng));
  den_b3 = params.create("conda/theta/b3", Tensor::zeros({dd}));

  dec_w1 = params.create("conda/psi/w1", Tensor::glorot(d, h, init_rng));
  dec_b1 = params.create("conda/psi/b1", Tensor::zeros({h}));
  dec_w2 = params.create("conda/psi/w2", Tensor::glorot(h, D, init_rng));
  dec_b2 = params.create("conda/psi/b2", Tensor::zeros({D}));
}

CondaModel::Posterior CondaModel::vae_posterior(Tape& tape, const Value& s) const {
  if (s->value.rank() != 2 || s->value.shape[1] != cfg_.D) {
    throw ShapeError("vae_posterior: shape " + shape_str(s->value.shape) + " vs D " +
                     std::to_string(cfg_.D));
  }
  Value h = tape.gelu(tape.add(tape.matmul(s, enc_w1), enc_b1));
  Posterior p;
  p.mu = tape.add(tape.matmul(h, enc_mu_w), enc_mu_b);
  p.log_var = tape.add(tape.matmul(h, enc_lv_w), enc_lv_b);
  return p;
}

Value CondaModel::vae_sample(Tape& tape, const Posterior& post, Rng& rng, bool training) const {
  if (!training) return post.mu;
  Tensor eps = Tensor::randn(post.mu->value.shape, rng);
  Value std = tape.exp(tape.scalar_mul(post.log_var, 0.5));
  return tape.add(post.mu, tape.mul(std, tape.constant(std::move(eps))));
}

Value CondaModel::vae_decode(Tape& tape, const Value& z) const {
  if (z->value.rank() != 2 || z->value.shape[1] != cfg_.d) {
    throw ShapeError("vae_decode: shape " + shape_str(z->value.shape) + " vs d " +
                     std::to_string(cfg_.d));
  }
  Value h = tape.gelu(tape.add(tape.matmul(z, dec_w1), dec_b1));
  return tape.add(tape.matmul(h, dec_w2), dec_b2);
}

Value CondaModel::kl_sum(Tape& tape, const Posterior& post) const {
  Value t = tape.sub(tape.add(tape.square(post.mu), tape.exp(post.log_var)), post.log_var);
  Value s = tape.sum(t);
  Value shifted = tape.add(s, tape.constant(Tensor::scalar(
                                  -static_cast<double>(post.mu->value.numel()))));
  return tape.scalar_mul(shifted, 0.5);
}

Value CondaModel::vae_loss(Tape& tape, const Value& s, size_t batch, Rng& rng,
                           bool training) const {
  if (batch == 0) throw ConfigError("vae_loss: empty batch");
  Posterior post = vae_posterior(tape, s);
  Value z = vae_sample(tape, post, rng, training);
  Value recon = vae_decode(tape, z);
  Value m = tape.mse(recon, s);
  return tape.add(m, tape.scalar_mul(kl_sum(tape, post), 1.0 / static_cast<double>(batch)));
}

Tensor CondaModel::step_embedding(size_t n) const {
  Tensor e({cfg_.step_dim});
  size_t half = cfg_.step_dim / 2;
  for (size_t i = 0; i < half; ++i) {
    double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    double x = static_cast<double>(n) * freq;
    e.data[2 * i] = std::sin(x);
    e.data[2 * i + 1] = std::cos(x);
  }
  return e;
}

Value CondaModel::denoise_predict(Tape& tape, const Value& x_diff, const Value& x_cond,
                                  const std::vector<size_t>& steps) const {
  size_t dd = cfg_.diff_len * cfg_.d;
  size_t cd = (cfg_.L - cfg_.diff_len) * cfg_.d;
  size_t B = steps.size();
  if (x_diff->value.rank() != 2 || x_diff->value.shape[0] != B || x_diff->value.shape[1] != dd ||
      x_cond->value.rank() != 2 || x_cond->value.shape[0] != B || x_cond->value.shape[1] != cd) {
    throw ShapeError("denoise_predict: shape " + shape_str(x_diff->value.shape) + " vs " +
                     shape_str(x_cond->value.shape));
  }
  Tensor emb({B, cfg_.step_dim});
  for (size_t b = 0; b < B; ++b) {
    check_step(sched_, steps[b], "denoise_predict");
    Tensor e = step_embedding(steps[b]);
    std::copy(e.data.begin(), e.data.end(), emb.data.begin() + b * cfg_.step_dim);
  }
  Value in = tape.concat({x_diff, x_cond, tape.constant(std::move(emb))});
  Value h = tape.gelu(tape.add(tape.matmul(in, den_w1), den_b1));
  h = tape.gelu(tape.add(tape.matmul(h, den_w2), den_b2));
  return tape.add(tape.matmul(h, den_w3), den_b3);
}

Value CondaModel::forward_diffuse(Tape& tape, const Value& x0_diff,
                                  const std::vector<size_t>& steps, const Tensor& eps) const {
  size_t B = steps.size();
  if (x0_diff->value.rank() != 2 || x0_diff->value.shape[0] != B ||
      !x0_diff->value.same_shape(eps)) {
    throw ShapeError("forward_diffuse: shape " + shape_str(x0_diff->value.shape) + " vs noise " +
                     shape_str(eps.shape));
  }
  Tensor c_signal({B, 1});
  Tensor c_noise({B, 1});
  for (size_t b = 0; b < B; ++b) {
    check_step(sched_, steps[b], "forward_diffuse");
    double ab = sched_.alpha_bar[steps[b] - 1];
    c_signal.data[b] = std::sqrt(ab);
    c_noise.data[b] = std::sqrt(1.0 - ab);
  }
  Value signal = tape.mul(x0_diff, tape.constant(std::move(c_signal)));
  Value noise = tape.mul(tape.constant(eps), tape.constant(std::move(c_noise)));
  return tape.add(signal, noise);
}

Tensor CondaModel::forward_diffuse(const Tensor& x0_diff, size_t n, const Tensor& eps) const {
  check_step(sched_, n, "forward_diffuse");
  if (!x0_diff.same_shape(eps)) {
    throw ShapeError("forward_diffuse: shape " + shape_str(x0_diff.shape) + " vs noise " +
                     shape_str(eps.shape));
  }
  double ab = sched_.alpha_bar[n - 1];
  double cs = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
  Tensor out(x0_diff.shape);
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] = cs * x0_diff.data[i] + cn * eps.data[i];
  return out;
}

Value CondaModel::diffusion_loss(Tape& tape, const Value& x0_flat, Rng& rng) const {
  size_t Ld = cfg_.L * cfg_.d;
  if (x0_flat->value.rank() != 2 || x0_flat->value.shape[1] != Ld) {
    throw ShapeError("diffusion_loss: shape " + shape_str(x0_flat->value.shape) + " vs L*d " +
                     std::to_string(Ld));
  }
  size_t B = x0_flat->value.shape[0];
  if (B == 0) throw ConfigError("diffusion_loss: empty batch");
  size_t dd = cfg_.diff_len * cfg_.d;

  Value x0_diff = tape.slice(x0_flat, 1, 0, dd);
  Value x0_cond = tape.slice(x0_flat, 1, dd, Ld);
  std::vector<size_t> steps(B);
  for (size_t b = 0; b < B; ++b) steps[b] = 1 + rng.uniform_int(sched_.N);
  Tensor eps = Tensor::randn({B, dd}, rng);
  Value x_n = forward_diffuse(tape, x0_diff, steps, eps);
  Value pred = denoise_predict(tape, x_n, x0_cond, steps);
  Value err = tape.sum(tape.square(tape.sub(x0_diff, pred)));
  return tape.scalar_mul(err, 1.0 / static_cast<double>(B));
}

Value CondaModel::conda_loss(Tape& tape, const Value& s, size_t batch,
                             const ParameterStore& params, Rng& rng) const {
  for (const auto& [name, _] : params.items()) {
    if (name.rfind("ctdg/", 0) == 0 && !params.frozen(name)) {
      throw ConfigError("conda_loss: ctdg parameters must be frozen, found trainable " + name);
    }
  }
  if (batch == 0 || s->value.rank() != 2 || s->value.shape[0] != batch * cfg_.L) {
    throw ShapeError("conda_loss: shape " + shape_str(s->value.shape) + " vs batch " +
                     std::to_string(batch) + " of L=" + std::to_string(cfg_.L));
  }
  Posterior post = vae_posterior(tape, s);
  Value z = vae_sample(tape, post, rng, true);
  Value recon = vae_decode(tape, z);
  Value vae = tape.add(tape.mse(recon, s),
                       tape.scalar_mul(kl_sum(tape, post), 1.0 / static_cast<double>(batch)));
  Value z_flat = tape.reshape(z, {batch, cfg_.L * cfg_.d});
  Value diff = diffusion_loss(tape, z_flat, rng);
  return tape.add(diff, tape.scalar_mul(vae, cfg_.lambda));
}

Tensor CondaModel::posterior_step(const Tensor& x_n, const Tensor& x0_hat, size_t n,
                                  Rng& rng) const {
  check_step(sched_, n, "posterior_step");
  if (!x_n.same_shape(x0_hat)) {
    throw ShapeError("posterior_step: shape " + shape_str(x_n.shape) + " vs " +
                     shape_str(x0_hat.shape));
  }
  double ab_n = sched_.alpha_bar[n - 1];
  double ab_prev = sched_.ab(n - 1);
  double a_n = sched_.alpha[n - 1];
  double c_xn = std::sqrt(a_n) * (1.0 - ab_prev) / (1.0 - ab_n);
  double c_x0 = std::sqrt(ab_prev) * sched_.beta[n - 1] / (1.0 - ab_n);
  double sigma = n >= 2 ? std::sqrt(sched_.beta_tilde[n - 1]) : 0.0;
  Tensor out(x_n.shape);
  for (size_t i = 0; i < out.numel(); ++i) {
    out.data[i] = c_xn * x_n.data[i] + c_x0 * x0_hat.data[i];
    if (sigma > 0.0) out.data[i] += sigma * rng.normal();
  }
  return out;
}

Tensor CondaModel::reverse_sample(const Tensor& x0_flat, Rng& rng) const {
  size_t Ld = cfg_.L * cfg_.d;
  if (x0_flat.rank() != 2 || x0_flat.shape[1] != Ld) {
    throw ShapeError("reverse_sample: shape " + shape_str(x0_flat.shape) + " vs L*d " +
                     std::to_string(Ld));
  }
  size_t B = x0_flat.shape[0];
  size_t dd = cfg_.diff_len * cfg_.d;
  size_t cd = Ld - dd;

  Tensor diff({B, dd});
  Tensor cond({B, cd});
  for (size_t b = 0; b < B; ++b) {
    std::memcpy(diff.data.data() + b * dd, x0_flat.data.data() + b * Ld, dd * sizeof(double));
    std::memcpy(cond.data.data() + b * cd, x0_flat.data.data() + b * Ld + dd,
                cd * sizeof(double));
  }

  Tensor eps = Tensor::randn({B, dd}, rng);
  Tensor x = forward_diffuse(diff, sched_.N, eps);

  std::vector<size_t> steps(B);
  for (size_t n = sched_.N; n >= 1; --n) {
    Tape tape(false);
    std::fill(steps.begin(), steps.end(), n);
    Value pred =
        denoise_predict(tape, tape.constant(x), tape.constant(cond), steps);
    x = posterior_step(x, pred->value, n, rng);
  }

  Tensor out({B, Ld});
  for (size_t b = 0; b < B; ++b) {
    std::memcpy(out.data.data() + b * Ld, x.data.data() + b * dd, dd * sizeof(double));
    std::memcpy(out.data.data() + b * Ld + dd, cond.data.data() + b * cd, cd * sizeof(double));
  }
  return out;
}

Tensor CondaModel::generate(const Tensor& s, size_t batch, Rng& rng) const {
  if (batch == 0 || s.rank() != 2 || s.shape[0] != batch * cfg_.L || s.shape[1] != cfg_.D) {
    throw ShapeError("generate: shape " + shape_str(s.shape) + " vs batch " +
                     std::to_string(batch) + " of [" + std::to_string(cfg_.L) + "," +
                     std::to_string(cfg_.D) + "]");
  }
  Tape tape(false);
  Posterior post = vae_posterior(tape, tape.constant(s));
  Tensor z = post.mu->value;  // eval-mode sample
  Tensor z_flat(std::vector<size_t>{batch, cfg_.L * cfg_.d}, z.data);
  Tensor regen = reverse_sample(z_flat, rng);
  Tensor z_rows(std::vector<size_t>{batch * cfg_.L, cfg_.d}, std::move(regen.data));
  Value out = vae_decode(tape, tape.constant(std::move(z_rows)));
  return out->value;
}

}  // namespace conda
