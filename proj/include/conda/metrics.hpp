#pragma once

#include <vector>

namespace conda {

// Average precision with block step-interpolation: tied scores are collapsed
// into a single threshold, AP = sum over thresholds of (R_k - R_{k-1}) * P_k.
// Requires at least one positive label.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

// ROC-AUC via the Mann-Whitney rank statistic with half credit for ties.
// Requires at least one positive and one negative label.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace conda
