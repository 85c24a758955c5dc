#pragma once

#include <vector>

#include "cohlab/text.hpp"

namespace cohlab {

struct RankedPair {
  double score_original = 0.0;
  double score_permuted = 0.0;
};

/// Fraction of pairs where the original scores strictly higher; ties lose.
double pairwise_ranking_accuracy(const std::vector<RankedPair>& pairs);

double accuracy(const std::vector<int>& pred, const std::vector<int>& gold);

struct FBetaResult {
  double value = 0.0;
  bool degenerate = false;  // zero denominator convention: value 0, flagged
};

/// F-beta of the non_coherent class; beta=0.5 weighs precision twice as
/// much as recall.
FBetaResult f_beta_low(const std::vector<BinaryLabel>& pred,
                       const std::vector<BinaryLabel>& gold, double beta = 0.5);

/// Spearman rank correlation with average-rank (fractional) tie handling.
double spearman(const std::vector<double>& pred, const std::vector<double>& gold);

}  // namespace cohlab
