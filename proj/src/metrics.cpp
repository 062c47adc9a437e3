#include "conda/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "conda/errors.hpp"

namespace conda {

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels,
                  const char* op) {
  if (scores.size() != labels.size()) {
    throw DataError(std::string(op) + ": scores and labels differ in length");
  }
  if (scores.empty()) throw DataError(std::string(op) + ": empty input");
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError(std::string(op) + ": labels must be 0 or 1");
  }
}

}  // namespace

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels, "average_precision");
  size_t npos = 0;
  for (int y : labels) npos += static_cast<size_t>(y);
  if (npos == 0) throw DataError("average_precision: no positive labels");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0, prev_recall = 0.0;
  size_t tp = 0, seen = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    for (size_t k = i; k < j; ++k) {
      tp += static_cast<size_t>(labels[order[k]]);
      ++seen;
    }
    double recall = static_cast<double>(tp) / static_cast<double>(npos);
    double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels, "roc_auc");
  size_t npos = 0;
  for (int y : labels) npos += static_cast<size_t>(y);
  size_t nneg = labels.size() - npos;
  if (npos == 0 || nneg == 0) throw DataError("roc_auc: need both classes");

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // midranks over tie groups, then Mann-Whitney U from the positive rank sum
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    }
    i = j;
  }
  double u = pos_rank_sum - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1);
  return u / (static_cast<double>(npos) * static_cast<double>(nneg));
}

}  // namespace conda
