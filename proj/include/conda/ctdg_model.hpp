#pragma once

#include <map>
#include <vector>

#include "conda/autodiff.hpp"
#include "conda/optim.hpp"
#include "conda/temporal_graph.hpp"

namespace conda {

// Fixed (non-trainable) cosine time encoding with the geometric frequency
// ladder w_i = 10^(-i*9/(d_t-1)); encode(0) is the all-ones vector.
class TimeEncoding {
 public:
  explicit TimeEncoding(size_t d_t);
  size_t dim() const { return w_.size(); }
  void encode(double dt, double* out) const;

 private:
  std::vector<double> w_;
};

struct CtdgConfig {
  size_t D = 64;       // model width
  size_t d_t = 32;     // time encoding dim
  size_t L = 16;       // neighbors per query
  size_t blocks = 2;   // mixer depth
  double dropout = 0.1;
};

// Sequence encoder + MLP-Mixer backbone + link predictor. All parameters are
// registered under "ctdg/" in the shared store.
class CtdgModel {
 public:
  CtdgModel(const CtdgConfig& cfg, size_t d_v, size_t d_e, ParameterStore& params, Rng& init_rng);

  const CtdgConfig& config() const { return cfg_; }
  size_t input_dim() const { return d_v_ + d_e_ + cfg_.d_t; }

  // Raw per-slot rows [node_feat || edge_feat || time_encode(dt)] for a batch
  // of neighbor samples, stacked to [B*L, d_in]. Padded slots get zero
  // features and dt = 0.
  Tensor build_inputs(const std::vector<NeighborSample>& samples, const EventLog& log) const;

  // Rowwise linear projection [R, d_in] -> [R, D].
  Value encode_sequence(Tape& tape, const Value& rows) const;

  // Mixer backbone over `batch` stacked sequences: [batch*L, D] -> [batch, D].
  Value backbone(Tape& tape, const Value& seqs, size_t batch, Rng& rng, bool training) const;

  // Row-aligned pair logits: [P, D] x [P, D] -> [P, 1].
  Value predict_link(Tape& tape, const Value& hu, const Value& hv) const;

  // Mean BCE over logits vs 0/1 labels.
  Value ctdg_loss(Tape& tape, const Value& logits, const Tensor& labels) const;

 private:
  Value mixer_block(Tape& tape, const Value& x, size_t batch, size_t block, Rng& rng,
                    bool training) const;
  Value mean_pool(Tape& tape, const Value& x, size_t batch) const;

  CtdgConfig cfg_;
  size_t d_v_, d_e_;
  TimeEncoding time_enc_;
  Value w_in_, b_in_;
  struct BlockParams {
    Value tok_w1, tok_b1, tok_w2, tok_b2;
    Value ch_w1, ch_b1, ch_w2, ch_b2;
  };
  std::vector<BlockParams> blocks_;
  Value pred_w1, pred_b1, pred_w2, pred_b2;
  mutable std::map<size_t, Value> pool_cache_;  // constant 1/L pooling matrices by batch
};

}  // namespace conda
