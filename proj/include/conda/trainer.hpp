#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "conda/config.hpp"
#include "conda/temporal_graph.hpp"

namespace conda {

struct EpochRecord {
  size_t cycle = 0;
  std::string phase;  // "ctdg" | "conda"
  size_t epoch = 0;   // 1-based within the phase
  double train_loss = 0.0;
  double val_ap = 0.0;
  double val_auc = 0.0;
  int64_t wall_ms = 0;
};

struct RunResult {
  std::vector<EpochRecord> epochs;
  std::vector<std::string> phase_sequence;
  double best_val_ap = 0.0;
  double test_ap = 0.0;
  double test_auc = 0.0;
  std::string checkpoint_path;
};

// Alternating training: (ctdg phase, conda phase) x cycles, then a final ctdg
// phase when configured; non-conda augmenters run the ctdg phases only. The
// best-validation checkpoint is restored before the test pass.
RunResult run_experiment(const TrainConfig& cfg, const EventLog& log);

// JSON-lines: one record per epoch, then a final record with test metrics and
// the config echo.
void write_report(const std::string& path, const TrainConfig& cfg, const RunResult& result);

}  // namespace conda
