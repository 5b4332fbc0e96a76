#include <benchmark/benchmark.h>

#include "srscn/losses.hpp"
#include "srscn/metrics.hpp"
#include "srscn/nets.hpp"
#include "srscn/phantom.hpp"
#include "srscn/rng.hpp"

using namespace srscn;
using diff::Tape;
using diff::Tensor;

namespace {

Tensor random_tensor(diff::Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Tensor x = random_tensor({8, c, 64, 64}, 1);
  const Tensor w = random_tensor({c, c, 3, 3}, 2, -0.2, 0.2);
  const Tensor b = random_tensor({c}, 3, -0.1, 0.1);
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(t.conv2d(t.constant(x), t.constant(w), t.constant(b), diff::Pad::Same));
  }
  state.SetItemsProcessed(state.iterations() * 8 * 64 * 64);
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16);

void BM_BackboneStep(benchmark::State& state) {
  nets::BackboneSpec spec;
  spec.levels = 3;
  spec.base_channels = 8;
  const auto params = nets::init_backbone(spec, 4);
  const Tensor img = random_tensor({8, 1, 64, 64}, 5, 0.0, 1.0);
  Rng rng(6);
  Tensor onehot({8, 4, 64, 64});
  for (int n = 0; n < 8; ++n)
    for (int i = 0; i < 64 * 64; ++i)
      onehot.data[static_cast<size_t>((n * 4 + rng.uniform_int(0, 3)) * 64 * 64 + i)] = 1.0;
  losses::LossConfig cfg;
  for (auto _ : state) {
    Tape t;
    const auto bound = nets::bind(t, params, true);
    const auto out = nets::backbone_forward(t, bound, spec, t.constant(img));
    const auto terms = losses::seg_terms(t, out.prob, onehot, cfg);
    const auto total = t.add(t.scalar_mul(terms.dice, cfg.lambda_dice), t.scalar_mul(terms.cross, cfg.lambda_cross));
    t.backward(total);
    benchmark::DoNotOptimize(t.grad(bound.at("enc0.conv1.w")));
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_BackboneStep)->Unit(benchmark::kMillisecond);

void BM_PhantomGenerate(benchmark::State& state) {
  phantom::PhantomConfig cfg;
  cfg.n_slices = 10;
  uint64_t seed = 0;
  for (auto _ : state) {
    cfg.seed = seed++;
    benchmark::DoNotOptimize(phantom::generate_phantom(cfg));
  }
}
BENCHMARK(BM_PhantomGenerate)->Unit(benchmark::kMillisecond);

void BM_DistanceMetrics(benchmark::State& state) {
  phantom::PhantomConfig cfg;
  cfg.seed = 7;
  const auto v = phantom::generate_phantom(cfg);
  metrics::BinaryMask a = metrics::BinaryMask::make3d(v.dims[0], v.dims[1], v.dims[2], v.spacing[0],
                                                      v.spacing[1], v.spacing[2]);
  metrics::BinaryMask b = a;
  for (size_t i = 0; i < a.m.size(); ++i) {
    a.m[i] = v.labels[i] == phantom::kMyo;
    b.m[i] = v.labels[i] == phantom::kMyo || v.labels[i] == phantom::kLV;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::asd(a, b));
    benchmark::DoNotOptimize(metrics::hausdorff(a, b, metrics::HdMode::Symmetric));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DistanceMetrics)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
