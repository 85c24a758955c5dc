#include <benchmark/benchmark.h>

#include "cohlab/architectures.hpp"

using namespace cohlab;

static void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  Tensor a = Tensor::randn({n, n}, 1.0, rng);
  Tensor b = Tensor::randn({n, n}, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_matmul)->Arg(16)->Arg(64)->Arg(128);

namespace {

struct EncoderFixture {
  EncoderConfig cfg{2, 4, 64, 128, 0.0, 128, 200};
  EncoderParams params;
  std::vector<std::size_t> ids;
  std::vector<bool> mask;
  RunContext ctx;

  explicit EncoderFixture(std::size_t len) {
    std::mt19937_64 rng(2);
    params = init_encoder_params(cfg, rng);
    std::uniform_int_distribution<std::size_t> tok(4, cfg.vocab_size - 1);
    ids.push_back(Vocabulary::kCls);
    while (ids.size() < len) ids.push_back(tok(rng));
    mask.assign(ids.size(), true);
  }
};

}  // namespace

static void BM_encoder_forward(benchmark::State& state) {
  EncoderFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(
        encode_sequence(f.cfg, f.params, f.ids, f.mask, f.ctx));
}
BENCHMARK(BM_encoder_forward)->Arg(16)->Arg(64)->Arg(128);

static void BM_encoder_forward_backward(benchmark::State& state) {
  EncoderFixture f(static_cast<std::size_t>(state.range(0)));
  std::mt19937_64 rng(3);
  Tensor probe = Tensor::randn({f.ids.size(), f.cfg.d_model}, 1.0, rng);
  for (auto _ : state) {
    for (auto& [name, t] : f.params.named()) {
      Tensor h = t;
      h.zero_grad();
    }
    Tensor loss = sum(mul(encode_sequence(f.cfg, f.params, f.ids, f.mask, f.ctx),
                          probe));
    backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
}
BENCHMARK(BM_encoder_forward_backward)->Arg(16)->Arg(64);

BENCHMARK_MAIN();
