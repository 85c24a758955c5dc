#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cohlab/metrics.hpp"

using namespace cohlab;

// ---- independent brute-force oracles (kept free of the implementation) ----

namespace oracle {

double pra(const std::vector<RankedPair>& pairs) {
  double c = 0;
  for (const auto& p : pairs) c += p.score_original > p.score_permuted ? 1.0 : 0.0;
  return c / static_cast<double>(pairs.size());
}

double acc(const std::vector<int>& p, const std::vector<int>& g) {
  double c = 0;
  for (std::size_t i = 0; i < p.size(); ++i) c += p[i] == g[i] ? 1.0 : 0.0;
  return c / static_cast<double>(p.size());
}

// counting-based fractional rank: 1 + #less + (#equal - 1)/2
std::vector<double> ranks(const std::vector<double>& xs) {
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : xs) {
      if (v < xs[i]) ++less;
      if (v == xs[i]) ++equal;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

double spearman(const std::vector<double>& pred, const std::vector<double>& gold) {
  auto ra = ranks(pred), rb = ranks(gold);
  const std::size_t n = ra.size();
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sa += ra[i];
    sb += rb[i];
  }
  sa /= n;
  sb /= n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (ra[i] - sa) * (rb[i] - sb);
    da += (ra[i] - sa) * (ra[i] - sa);
    db += (rb[i] - sb) * (rb[i] - sb);
  }
  return num / std::sqrt(da * db);
}

double f_beta(const std::vector<BinaryLabel>& pred,
              const std::vector<BinaryLabel>& gold, double beta) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == BinaryLabel::non_coherent;
    const bool g = gold[i] == BinaryLabel::non_coherent;
    tp += (p && g);
    fp += (p && !g);
    fn += (!p && g);
  }
  if (tp + fp == 0 || tp + fn == 0) return 0.0;
  const double prec = tp / (tp + fp), rec = tp / (tp + fn);
  if (beta * beta * prec + rec == 0) return 0.0;
  return (1 + beta * beta) * prec * rec / (beta * beta * prec + rec);
}

}  // namespace oracle

TEST_CASE("pairwise ranking accuracy") {
  std::vector<RankedPair> all{{2, 1}, {5, 0}};
  CHECK(pairwise_ranking_accuracy(all) == 1.0);
  std::vector<RankedPair> three_of_four{{2, 1}, {3, 1}, {4, 1}, {0, 1}};
  CHECK(pairwise_ranking_accuracy(three_of_four) == 0.75);
  std::vector<RankedPair> tie{{1, 1}};
  CHECK(pairwise_ranking_accuracy(tie) == 0.0);
  CHECK_THROWS_AS(pairwise_ranking_accuracy({}), DataError);

  // invariant under adding a constant to all scores
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int t = 0; t < 50; ++t) {
    std::vector<RankedPair> ps, shifted;
    const double c = u(rng);
    for (int i = 0; i < 10; ++i) {
      RankedPair p{u(rng), u(rng)};
      ps.push_back(p);
      shifted.push_back({p.score_original + c, p.score_permuted + c});
    }
    CHECK(pairwise_ranking_accuracy(ps) == pairwise_ranking_accuracy(shifted));
  }
}

TEST_CASE("accuracy") {
  CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(accuracy({1, 2}, {1, 0}) == 0.5);
  CHECK(accuracy({1, 1}, {2, 2}) == 0.0);
  CHECK_THROWS_AS(accuracy({1}, {1, 2}), DataError);
}

TEST_CASE("f_beta_low examples") {
  // P = R = 0.5  ->  F_beta = 0.5 for any beta
  std::vector<BinaryLabel> gold{BinaryLabel::non_coherent, BinaryLabel::non_coherent,
                                BinaryLabel::other, BinaryLabel::other};
  std::vector<BinaryLabel> pred{BinaryLabel::non_coherent, BinaryLabel::other,
                                BinaryLabel::non_coherent, BinaryLabel::other};
  CHECK(f_beta_low(pred, gold).value == doctest::Approx(0.5));

  // P = 1.0, R = 0.5 -> 1.25 * 0.5 / 0.75
  std::vector<BinaryLabel> gold2{BinaryLabel::non_coherent, BinaryLabel::non_coherent,
                                 BinaryLabel::other};
  std::vector<BinaryLabel> pred2{BinaryLabel::non_coherent, BinaryLabel::other,
                                 BinaryLabel::other};
  CHECK(f_beta_low(pred2, gold2).value == doctest::Approx(1.25 * 0.5 / 0.75));

  // zero predicted positives -> 0 with degenerate flag
  std::vector<BinaryLabel> pred3(3, BinaryLabel::other);
  auto res = f_beta_low(pred3, gold2);
  CHECK(res.value == 0.0);
  CHECK(res.degenerate);
}

TEST_CASE("f_beta_low with beta=1 equals F1 on random confusion matrices") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.4);
  for (int t = 0; t < 100; ++t) {
    std::vector<BinaryLabel> pred, gold;
    for (int i = 0; i < 30; ++i) {
      pred.push_back(coin(rng) ? BinaryLabel::non_coherent : BinaryLabel::other);
      gold.push_back(coin(rng) ? BinaryLabel::non_coherent : BinaryLabel::other);
    }
    auto mine = f_beta_low(pred, gold, 1.0);
    const double ref = oracle::f_beta(pred, gold, 1.0);
    CHECK(mine.value == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("spearman examples") {
  CHECK(spearman({1, 2, 3, 5}, {1, 2, 3, 5}) == doctest::Approx(1.0));
  CHECK(spearman({5, 3, 2, 1}, {1, 2, 3, 5}) == doctest::Approx(-1.0));

  // tie case, matched against the independent counting-rank oracle
  std::vector<double> gold{1, 2, 2, 3};
  std::vector<double> pred{1, 3, 2, 4};
  CHECK(spearman(pred, gold) ==
        doctest::Approx(oracle::spearman(pred, gold)).epsilon(1e-9));

  CHECK_THROWS_AS(spearman({1, 2}, {2, 2}), DataError);
  CHECK_THROWS_AS(spearman({1}, {2}), DataError);
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), DataError);
}

TEST_CASE("spearman invariant under strictly monotone transforms") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> pred, gold;
    for (int i = 0; i < 12; ++i) {
      pred.push_back(u(rng));
      gold.push_back(u(rng));
    }
    const double base = spearman(pred, gold);
    std::vector<double> warped;
    for (double v : pred) warped.push_back(std::exp(0.5 * v) + v * v * v);
    CHECK(spearman(warped, gold) == doctest::Approx(base).epsilon(1e-9));
    std::vector<double> warped_gold;
    for (double v : gold) warped_gold.push_back(std::atan(v) * 7.0 + v);
    CHECK(spearman(pred, warped_gold) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("metrics against oracles on random instances") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_int_distribution<int> lab(0, 2);
  for (int t = 0; t < 100; ++t) {
    std::vector<RankedPair> ps;
    std::vector<int> p, g;
    std::vector<double> sp, sg;
    for (int i = 0; i < 15; ++i) {
      ps.push_back({u(rng), u(rng)});
      p.push_back(lab(rng));
      g.push_back(lab(rng));
      sp.push_back(u(rng));
      sg.push_back(u(rng));
    }
    CHECK(pairwise_ranking_accuracy(ps) == doctest::Approx(oracle::pra(ps)).epsilon(1e-12));
    CHECK(accuracy(p, g) == doctest::Approx(oracle::acc(p, g)).epsilon(1e-12));
    CHECK(spearman(sp, sg) == doctest::Approx(oracle::spearman(sp, sg)).epsilon(1e-9));
    const double a = accuracy(p, g);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}
