#include "conda/ctdg_model.hpp"

#include <cmath>
#include <string>

#include "conda/errors.hpp"

namespace conda {

TimeEncoding::TimeEncoding(size_t d_t) {
  if (d_t == 0) throw ConfigError("time encoding dimension must be positive");
  w_.resize(d_t);
  for (size_t i = 0; i < d_t; ++i) {
    double expo = d_t == 1 ? 0.0 : static_cast<double>(i) * 9.0 / static_cast<double>(d_t - 1);
    w_[i] = std::pow(10.0, -expo);
  }
}

void TimeEncoding::encode(double dt, double* out) const {
  for (size_t i = 0; i < w_.size(); ++i) out[i] = std::cos(w_[i] * dt);
}

CtdgModel::CtdgModel(const CtdgConfig& cfg, size_t d_v, size_t d_e, ParameterStore& params,
                     Rng& init_rng)
    : cfg_(cfg), d_v_(d_v), d_e_(d_e), time_enc_(cfg.d_t) {
  if (cfg.L == 0 || cfg.D == 0 || cfg.blocks == 0) {
    throw ConfigError("ctdg model dims must be positive");
  }
  size_t d_in = input_dim();
  size_t D = cfg_.D, L = cfg_.L, hL = L, hD = 4 * D;

  w_in_ = params.create("ctdg/encoder/w", Tensor::glorot(d_in, D, init_rng));
  b_in_ = params.create("ctdg/encoder/b", Tensor::zeros({D}));
  blocks_.resize(cfg_.blocks);
  for (size_t i = 0; i < cfg_.blocks; ++i) {
    std::string p = "ctdg/mixer" + std::to_string(i) + "/";
    auto& b = blocks_[i];
    b.tok_w1 = params.create(p + "token_w1", Tensor::glorot(hL, L, init_rng));
    b.tok_b1 = params.create(p + "token_b1", Tensor::zeros({hL, 1}));
    b.tok_w2 = params.create(p + "token_w2", Tensor::glorot(L, hL, init_rng));
    b.tok_b2 = params.create(p + "token_b2", Tensor::zeros({L, 1}));
    b.ch_w1 = params.create(p + "channel_w1", Tensor::glorot(D, hD, init_rng));
    b.ch_b1 = params.create(p + "channel_b1", Tensor::zeros({hD}));
    b.ch_w2 = params.create(p + "channel_w2", Tensor::glorot(hD, D, init_rng));
    b.ch_b2 = params.create(p + "channel_b2", Tensor::zeros({D}));
  }
  pred_w1 = params.create("ctdg/predictor/w1", Tensor::glorot(2 * D, D, init_rng));
  pred_b1 = params.create("ctdg/predictor/b1", Tensor::zeros({D}));
  pred_w2 = params.create("ctdg/predictor/w2", Tensor::glorot(D, 1, init_rng));
  pred_b2 = params.create("ctdg/predictor/b2", Tensor::zeros({1}));
}

Tensor CtdgModel::build_inputs(const std::vector<NeighborSample>& samples,
                               const EventLog& log) const {
  if (samples.empty()) throw ConfigError("build_inputs: empty batch");
  if (log.d_v != d_v_ || log.d_e != d_e_) {
    throw ShapeError("build_inputs: log features (" + std::to_string(log.d_v) + "," +
                     std::to_string(log.d_e) + ") vs model (" + std::to_string(d_v_) + "," +
                     std::to_string(d_e_) + ")");
  }
  size_t L = cfg_.L, d_in = input_dim();
  Tensor rows({samples.size() * L, d_in});
  for (size_t b = 0; b < samples.size(); ++b) {
    const NeighborSample& s = samples[b];
    if (s.mask.size() != L) {
      throw ShapeError("build_inputs: sample length " + std::to_string(s.mask.size()) +
                       " vs configured L " + std::to_string(L));
    }
    for (size_t j = 0; j < L; ++j) {
      double* row = rows.data.data() + (b * L + j) * d_in;
      if (s.mask[j]) {
        auto nb = static_cast<size_t>(s.neighbor_ids[j]);
        for (size_t f = 0; f < d_v_; ++f) row[f] = log.node_feat.at2(nb, f);
        for (size_t f = 0; f < d_e_; ++f) row[d_v_ + f] = s.edge_feats[j * d_e_ + f];
        time_enc_.encode(s.query_time - s.neighbor_times[j], row + d_v_ + d_e_);
      } else {
        // zero features, dt = 0 -> all-ones time block
        time_enc_.encode(0.0, row + d_v_ + d_e_);
      }
    }
  }
  return rows;
}

Value CtdgModel::encode_sequence(Tape& tape, const Value& rows) const {
  return tape.add(tape.matmul(rows, w_in_), b_in_);
}

Value CtdgModel::mean_pool(Tape& tape, const Value& x, size_t batch) const {
  size_t L = cfg_.L;
  auto it = pool_cache_.find(batch);
  if (it == pool_cache_.end()) {
    Tensor p = Tensor::zeros({batch, batch * L});
    double inv = 1.0 / static_cast<double>(L);
    for (size_t b = 0; b < batch; ++b) {
      for (size_t j = 0; j < L; ++j) p.at2(b, b * L + j) = inv;
    }
    it = pool_cache_.emplace(batch, Tape(false).constant(std::move(p))).first;
  }
  return tape.matmul(it->second, x);
}

Value CtdgModel::mixer_block(Tape& tape, const Value& x, size_t batch, size_t block, Rng& rng,
                             bool training) const {
  const auto& bp = blocks_[block];
  size_t L = cfg_.L, D = cfg_.D, hL = L;

  // token mixing across the L axis, per sequence
  Value y = tape.layer_norm(x);
  std::vector<Value> pieces(batch);
  for (size_t b = 0; b < batch; ++b) {
    Value yb = tape.slice(y, 0, b * L, (b + 1) * L);
    pieces[b] = tape.reshape(tape.add(tape.matmul(bp.tok_w1, yb), bp.tok_b1), {1, hL * D});
  }
  Value h = tape.reshape(tape.concat(pieces), {batch * hL, D});
  h = tape.dropout(tape.gelu(h), cfg_.dropout, rng, training);
  for (size_t b = 0; b < batch; ++b) {
    Value hb = tape.slice(h, 0, b * hL, (b + 1) * hL);
    pieces[b] = tape.reshape(tape.add(tape.matmul(bp.tok_w2, hb), bp.tok_b2), {1, L * D});
  }
  Value tok = tape.reshape(tape.concat(pieces), {batch * L, D});
  Value x1 = tape.add(x, tok);

  // channel mixing across D, rowwise
  Value y2 = tape.layer_norm(x1);
  Value h2 = tape.add(tape.matmul(y2, bp.ch_w1), bp.ch_b1);
  h2 = tape.dropout(tape.gelu(h2), cfg_.dropout, rng, training);
  Value ch = tape.add(tape.matmul(h2, bp.ch_w2), bp.ch_b2);
  return tape.add(x1, ch);
}

Value CtdgModel::backbone(Tape& tape, const Value& seqs, size_t batch, Rng& rng,
                          bool training) const {
  if (batch == 0 || seqs->value.rank() != 2 || seqs->value.shape[0] != batch * cfg_.L ||
      seqs->value.shape[1] != cfg_.D) {
    throw ShapeError("backbone: shape " + shape_str(seqs->value.shape) + " vs batch " +
                     std::to_string(batch) + " of [" + std::to_string(cfg_.L) + "," +
                     std::to_string(cfg_.D) + "]");
  }
  Value x = seqs;
  for (size_t i = 0; i < cfg_.blocks; ++i) x = mixer_block(tape, x, batch, i, rng, training);
  return mean_pool(tape, x, batch);
}

Value CtdgModel::predict_link(Tape& tape, const Value& hu, const Value& hv) const {
  if (!hu->value.same_shape(hv->value) || hu->value.rank() != 2 ||
      hu->value.shape[1] != cfg_.D) {
    throw ShapeError("predict_link: shape " + shape_str(hu->value.shape) + " vs " +
                     shape_str(hv->value.shape));
  }
  Value pair = tape.concat({hu, hv});
  Value h = tape.relu(tape.add(tape.matmul(pair, pred_w1), pred_b1));
  return tape.add(tape.matmul(h, pred_w2), pred_b2);
}

Value CtdgModel::ctdg_loss(Tape& tape, const Value& logits, const Tensor& labels) const {
  return tape.bce_with_logits(logits, tape.constant(labels));
}

}  // namespace conda
