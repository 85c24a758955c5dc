#include "cohlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cohlab {

double pairwise_ranking_accuracy(const std::vector<RankedPair>& pairs) {
  if (pairs.empty()) throw DataError("pairwise_ranking_accuracy: empty input");
  std::size_t correct = 0;
  for (const auto& p : pairs)
    if (p.score_original > p.score_permuted) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& gold) {
  if (pred.size() != gold.size())
    throw DataError("accuracy: length mismatch " + std::to_string(pred.size()) +
                    " vs " + std::to_string(gold.size()));
  if (pred.empty()) throw DataError("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == gold[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

FBetaResult f_beta_low(const std::vector<BinaryLabel>& pred,
                       const std::vector<BinaryLabel>& gold, double beta) {
  if (pred.size() != gold.size())
    throw DataError("f_beta_low: length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == BinaryLabel::non_coherent;
    const bool g = gold[i] == BinaryLabel::non_coherent;
    if (p && g) ++tp;
    else if (p && !g) ++fp;
    else if (!p && g) ++fn;
  }
  FBetaResult res;
  if (tp + fp == 0 || tp + fn == 0) {
    res.degenerate = true;
    return res;
  }
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  if (denom == 0.0) {
    res.degenerate = true;
    return res;
  }
  res.value = (1.0 + b2) * precision * recall / denom;
  return res;
}

namespace {

// average-rank (fractional) ranks
std::vector<double> fractional_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0)
    throw DataError("spearman undefined: constant input");
  return cov / std::sqrt(va * vb);
}

}  // namespace

double spearman(const std::vector<double>& pred, const std::vector<double>& gold) {
  if (pred.size() != gold.size()) throw DataError("spearman: length mismatch");
  if (pred.size() < 2) throw DataError("spearman needs at least 2 points");
  bool all_equal = true;
  for (double g : gold) all_equal = all_equal && g == gold[0];
  if (all_equal) throw DataError("spearman undefined: all gold values equal");
  return pearson(fractional_ranks(pred), fractional_ranks(gold));
}

}  // namespace cohlab
