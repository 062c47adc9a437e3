#include "conda/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>

#include <json.hpp>

#include "conda/augmenters.hpp"
#include "conda/checkpoint.hpp"
#include "conda/ctdg_model.hpp"
#include "conda/diffusion.hpp"
#include "conda/errors.hpp"
#include "conda/metrics.hpp"

namespace conda {

namespace {

int64_t elapsed_ms(std::chrono::steady_clock::time_point t0) {
  auto dt = std::chrono::steady_clock::now() - t0;
  return std::chrono::duration_cast<std::chrono::milliseconds>(dt).count();
}

struct Trainer {
  const TrainConfig& cfg;
  const EventLog& log;
  ChronoSplit split;
  NeighborFinder finder;
  ParameterStore params;
  std::unique_ptr<CtdgModel> model;
  std::unique_ptr<CondaModel> conda;
  Adam opt;

  Rng dropout_rng, train_neg_rng, conda_rng, aug_rng;
  uint64_t drop_seed = 0;
  std::vector<NegativeSample> val_negs, test_negs;

  size_t global_epoch = 0;
  double best_val_ap = -1.0;
  double last_val_ap = 0.0, last_val_auc = 0.0;
  size_t diff_len = 0, latent_d = 0;
  RunResult result;

  Trainer(const TrainConfig& c, const EventLog& l)
      : cfg(c),
        log(l),
        split(chrono_split(l, c.r_train, c.r_val, c.r_test)),
        finder(l),
        opt(params, AdamConfig{c.lr, 0.9, 0.999, 1e-8}),
        dropout_rng(0),
        train_neg_rng(0),
        conda_rng(0),
        aug_rng(0) {
    validate_config(cfg);
    Rng master(cfg.seed);
    Rng init_rng = master.fork("init");
    CtdgConfig mc{cfg.D, cfg.d_t, cfg.L, cfg.blocks, cfg.dropout};
    model = std::make_unique<CtdgModel>(mc, log.d_v, log.d_e, params, init_rng);
    if (cfg.augmenter == "conda") {
      diff_len = resolve_diff_len(cfg.diff_len, cfg.L);
      latent_d = resolve_latent_d(cfg);
      NoiseSchedule sched = build_schedule(cfg.N, cfg.k, cfg.alpha_min, cfg.alpha_max);
      CondaConfig cc;
      cc.L = cfg.L;
      cc.D = cfg.D;
      cc.d = latent_d;
      cc.diff_len = diff_len;
      cc.lambda = cfg.lambda;
      conda = std::make_unique<CondaModel>(cc, sched, params, init_rng);
    }
    dropout_rng = master.fork("dropout");
    train_neg_rng = master.fork("neg_train");
    conda_rng = master.fork("conda");
    aug_rng = master.fork("aug");
    drop_seed = master.fork("drop").seed();
    val_negs = sample_negatives(log, split.train_end, split.val_end,
                                master.fork("neg_val").seed());
    test_negs = sample_negatives(log, split.val_end, split.num_events,
                                 master.fork("neg_test").seed());
    result.checkpoint_path =
        (std::filesystem::path(cfg.out_dir) / "best.ckpt").string();
  }

  // samples for events [begin, end): u block, v block, then negative block
  std::vector<NeighborSample> build_samples(size_t begin, size_t end,
                                            const std::vector<int64_t>& neg_dst,
                                            const std::vector<uint8_t>* view) const {
    size_t n = end - begin;
    std::vector<NeighborSample> samples(3 * n);
    for (size_t i = 0; i < n; ++i) {
      const Event& e = log.events[begin + i];
      samples[i] = finder.sample(e.src, e.t, cfg.L, view);
      samples[n + i] = finder.sample(e.dst, e.t, cfg.L, view);
      samples[2 * n + i] = finder.sample(neg_dst[i], e.t, cfg.L, view);
    }
    return samples;
  }

  // same layout for an explicit event-index list (training under drop views)
  std::vector<NeighborSample> build_samples(const std::vector<size_t>& idxs,
                                            const std::vector<int64_t>& neg_dst,
                                            const std::vector<uint8_t>* view) const {
    size_t n = idxs.size();
    std::vector<NeighborSample> samples(3 * n);
    for (size_t i = 0; i < n; ++i) {
      const Event& e = log.events[idxs[i]];
      samples[i] = finder.sample(e.src, e.t, cfg.L, view);
      samples[n + i] = finder.sample(e.dst, e.t, cfg.L, view);
      samples[2 * n + i] = finder.sample(neg_dst[i], e.t, cfg.L, view);
    }
    return samples;
  }

  static Tensor pair_labels(size_t n) {
    Tensor labels({2 * n, 1});
    for (size_t i = 0; i < n; ++i) labels.data[i] = 1.0;
    return labels;
  }

  // logits for (hu, hv) positives and (hu, hn) negatives, stacked to [2n, 1]
  Value pair_logits(Tape& tape, const Value& hu, const Value& hv, const Value& hn) const {
    size_t n = hu->value.shape[0];
    Value pos = model->predict_link(tape, hu, hv);
    Value neg = model->predict_link(tape, hu, hn);
    Value row = tape.concat({tape.reshape(pos, {1, n}), tape.reshape(neg, {1, n})});
    return tape.reshape(row, {2 * n, 1});
  }

  double ctdg_train_batch(const std::vector<size_t>& idxs, bool aug,
                          const std::vector<uint8_t>* view) {
    size_t n = idxs.size();
    std::vector<int64_t> neg_dst(n);
    for (size_t i = 0; i < n; ++i) {
      neg_dst[i] = static_cast<int64_t>(train_neg_rng.uniform_int(log.num_nodes));
    }
    auto samples = build_samples(idxs, neg_dst, view);
    Tensor rows = model->build_inputs(samples, log);

    Tape tape;
    Value s = model->encode_sequence(tape, tape.constant(std::move(rows)));
    Value h = model->backbone(tape, s, 3 * n, dropout_rng, true);
    Value hu = tape.slice(h, 0, 0, n);
    Value hv = tape.slice(h, 0, n, 2 * n);
    Value hn = tape.slice(h, 0, 2 * n, 3 * n);
    Tensor labels = pair_labels(n);
    Value loss;
    if (!aug || cfg.aug_mode != "replace") {
      loss = model->ctdg_loss(tape, pair_logits(tape, hu, hv, hn), labels);
    }
    if (aug) {
      size_t L = cfg.L, D = cfg.D;
      Tensor s_uv({2 * n * L, D});
      std::memcpy(s_uv.data.data(), s->value.data.data(), s_uv.numel() * sizeof(double));
      Tensor regen = conda->generate(s_uv, 2 * n, aug_rng);
      Value ha = model->backbone(tape, tape.constant(std::move(regen)), 2 * n, dropout_rng, true);
      Value au = tape.slice(ha, 0, 0, n);
      Value av = tape.slice(ha, 0, n, 2 * n);
      Value aug_loss = model->ctdg_loss(tape, pair_logits(tape, au, av, hn), labels);
      loss = cfg.aug_mode == "replace" ? aug_loss
                                       : tape.add(loss, tape.scalar_mul(aug_loss, cfg.aug_weight));
    }
    double lv = loss->value.data[0];
    tape.backward(loss);
    opt.step();
    return lv;
  }

  double ctdg_train_epoch(bool aug, const std::vector<uint8_t>* view) {
    std::vector<size_t> train_events;
    train_events.reserve(split.train_end);
    for (size_t i = 0; i < split.train_end; ++i) {
      if (!view || (*view)[i]) train_events.push_back(i);
    }
    if (train_events.empty()) return 0.0;  // fully dropped epoch (p near 1)
    double total = 0.0;
    size_t count = 0;
    for (size_t at = 0; at < train_events.size(); at += cfg.batch_size) {
      size_t hi = std::min(at + cfg.batch_size, train_events.size());
      std::vector<size_t> idxs(train_events.begin() + at, train_events.begin() + hi);
      double lv = ctdg_train_batch(idxs, aug, view);
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite ctdg loss at global epoch " +
                           std::to_string(global_epoch));
      }
      total += lv * static_cast<double>(idxs.size());
      count += idxs.size();
    }
    return total / static_cast<double>(count);
  }

  // frozen-encoder sequence embeddings for all training events (u and v),
  // computed once per conda phase
  Tensor encode_train_sequences() {
    size_t n = split.train_end;
    Tensor all({2 * n * cfg.L, cfg.D});
    Tape tape(false);
    for (size_t at = 0; at < n; at += cfg.eval_batch) {
      size_t hi = std::min(at + cfg.eval_batch, n);
      size_t m = hi - at;
      std::vector<NeighborSample> samples(2 * m);
      for (size_t i = 0; i < m; ++i) {
        const Event& e = log.events[at + i];
        samples[i] = finder.sample(e.src, e.t, cfg.L, nullptr);
        samples[m + i] = finder.sample(e.dst, e.t, cfg.L, nullptr);
      }
      Tensor rows = model->build_inputs(samples, log);
      Value s = model->encode_sequence(tape, tape.constant(std::move(rows)));
      // u rows land in the first half, v rows in the second
      size_t row_bytes = cfg.L * cfg.D;
      for (size_t i = 0; i < m; ++i) {
        std::memcpy(all.data.data() + (at + i) * row_bytes,
                    s->value.data.data() + i * row_bytes, row_bytes * sizeof(double));
        std::memcpy(all.data.data() + (n + at + i) * row_bytes,
                    s->value.data.data() + (m + i) * row_bytes, row_bytes * sizeof(double));
      }
    }
    return all;
  }

  double conda_train_epoch(const Tensor& s_all) {
    size_t total_seq = 2 * split.train_end;
    double total = 0.0;
    size_t count = 0;
    size_t row_bytes = cfg.L * cfg.D;
    for (size_t at = 0; at < total_seq; at += cfg.batch_size) {
      size_t hi = std::min(at + cfg.batch_size, total_seq);
      size_t m = hi - at;
      Tensor chunk({m * cfg.L, cfg.D});
      std::memcpy(chunk.data.data(), s_all.data.data() + at * row_bytes,
                  m * row_bytes * sizeof(double));
      Tape tape;
      Value loss = conda->conda_loss(tape, tape.constant(std::move(chunk)), m, params, conda_rng);
      double lv = loss->value.data[0];
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite conda loss at global epoch " +
                           std::to_string(global_epoch));
      }
      tape.backward(loss);
      opt.step();
      total += lv * static_cast<double>(m);
      count += m;
    }
    return total / static_cast<double>(count);
  }

  std::pair<double, double> evaluate(size_t begin, size_t end,
                                     const std::vector<NegativeSample>& negs) {
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(2 * (end - begin));
    labels.reserve(2 * (end - begin));
    for (size_t at = begin; at < end; at += cfg.eval_batch) {
      size_t hi = std::min(at + cfg.eval_batch, end);
      size_t m = hi - at;
      std::vector<int64_t> neg_dst(m);
      for (size_t i = 0; i < m; ++i) neg_dst[i] = negs[at - begin + i].dst;
      auto samples = build_samples(at, hi, neg_dst, nullptr);
      Tensor rows = model->build_inputs(samples, log);
      Tape tape(false);
      Value s = model->encode_sequence(tape, tape.constant(std::move(rows)));
      Value h = model->backbone(tape, s, 3 * m, dropout_rng, false);
      Value hu = tape.slice(h, 0, 0, m);
      Value hv = tape.slice(h, 0, m, 2 * m);
      Value hn = tape.slice(h, 0, 2 * m, 3 * m);
      Value pos = model->predict_link(tape, hu, hv);
      Value neg = model->predict_link(tape, hu, hn);
      for (size_t i = 0; i < m; ++i) {
        scores.push_back(pos->value.data[i]);
        labels.push_back(1);
      }
      for (size_t i = 0; i < m; ++i) {
        scores.push_back(neg->value.data[i]);
        labels.push_back(0);
      }
    }
    return {average_precision(scores, labels), roc_auc(scores, labels)};
  }

  void save_best() {
    auto tensors = params.export_tensors();
    if (conda) {
      Tensor meta({7});
      meta.data = {static_cast<double>(cfg.N),          cfg.k,
                   cfg.alpha_min,                        cfg.alpha_max,
                   static_cast<double>(diff_len),        static_cast<double>(latent_d),
                   cfg.lambda};
      tensors["meta/schedule"] = std::move(meta);
    }
    save_checkpoint(result.checkpoint_path, tensors);
  }

  void ctdg_phase(size_t cycle, bool aug) {
    if (conda) {
      params.set_frozen("conda/", true);
      params.set_frozen("ctdg/", false);
    }
    uint64_t frozen_cs = conda ? params.checksum("conda/") : 0;
    size_t since_best = 0;
    for (size_t e = 1; e <= cfg.r_ctdg; ++e) {
      ++global_epoch;
      auto t0 = std::chrono::steady_clock::now();
      std::vector<uint8_t> view;
      const std::vector<uint8_t>* vp = nullptr;
      if (cfg.augmenter == "dropedge") {
        view = drop_edges_view(log, {DropKind::edge, cfg.drop_p, drop_seed}, split.train_end,
                               global_epoch);
        vp = &view;
      } else if (cfg.augmenter == "dropnode") {
        view = drop_nodes_view(log, {DropKind::node, cfg.drop_p, drop_seed}, split.train_end,
                               global_epoch);
        vp = &view;
      }
      double train_loss = ctdg_train_epoch(aug, vp);
      auto [ap, auc] = evaluate(split.train_end, split.val_end, val_negs);
      last_val_ap = ap;
      last_val_auc = auc;
      result.epochs.push_back({cycle, "ctdg", e, train_loss, ap, auc, elapsed_ms(t0)});
      if (ap > best_val_ap) {
        best_val_ap = ap;
        since_best = 0;
        save_best();
      } else if (++since_best >= cfg.patience) {
        break;
      }
    }
    if (conda && params.checksum("conda/") != frozen_cs) {
      throw NumericError("frozen conda parameters changed during a ctdg phase");
    }
    result.phase_sequence.push_back("ctdg");
  }

  void conda_phase(size_t cycle) {
    params.set_frozen("ctdg/", true);
    params.set_frozen("conda/", false);
    uint64_t frozen_cs = params.checksum("ctdg/");
    Tensor s_all = encode_train_sequences();
    for (size_t e = 1; e <= cfg.r_conda; ++e) {
      ++global_epoch;
      auto t0 = std::chrono::steady_clock::now();
      double train_loss = conda_train_epoch(s_all);
      result.epochs.push_back(
          {cycle, "conda", e, train_loss, last_val_ap, last_val_auc, elapsed_ms(t0)});
    }
    if (params.checksum("ctdg/") != frozen_cs) {
      throw NumericError("frozen ctdg parameters changed during a conda phase");
    }
    result.phase_sequence.push_back("conda");
  }

  RunResult run() {
    std::filesystem::create_directories(cfg.out_dir);
    bool use_conda = cfg.augmenter == "conda";
    for (size_t cycle = 0; cycle < cfg.cycles; ++cycle) {
      bool aug = use_conda && cfg.aug_mode != "off" && cycle > 0;
      ctdg_phase(cycle, aug);
      if (use_conda) conda_phase(cycle);
    }
    if (cfg.final_ctdg) {
      ctdg_phase(cfg.cycles, use_conda && cfg.aug_mode != "off");
    }
    auto best = load_checkpoint(result.checkpoint_path);
    params.import_tensors(best);
    auto [ap, auc] = evaluate(split.val_end, split.num_events, test_negs);
    result.test_ap = ap;
    result.test_auc = auc;
    result.best_val_ap = best_val_ap;
    return std::move(result);
  }
};

}  // namespace

RunResult run_experiment(const TrainConfig& cfg, const EventLog& log) {
  Trainer t(cfg, log);
  return t.run();
}

void write_report(const std::string& path, const TrainConfig& cfg, const RunResult& result) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open report for writing: " + path);
  for (const EpochRecord& r : result.epochs) {
    nlohmann::json j;
    j["cycle"] = r.cycle;
    j["phase"] = r.phase;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_ap"] = r.val_ap;
    j["val_auc"] = r.val_auc;
    j["wall_ms"] = r.wall_ms;
    os << j.dump() << "\n";
  }
  nlohmann::json fin;
  fin["test_ap"] = result.test_ap;
  fin["test_auc"] = result.test_auc;
  fin["best_val_ap"] = result.best_val_ap;
  fin["phase_sequence"] = result.phase_sequence;
  nlohmann::json cj;
  for (const auto& [k, v] : config_entries(cfg)) cj[k] = v;
  fin["config"] = cj;
  os << fin.dump() << "\n";
  if (!os) throw DataError("report write failed: " + path);
}

}  // namespace conda
