#include <benchmark/benchmark.h>

#include "softcbm/augment.hpp"
#include "softcbm/model.hpp"
#include "softcbm/nn.hpp"
#include "softcbm/phantom.hpp"
#include "softcbm/rng.hpp"
#include "softcbm/volume.hpp"

namespace {

using namespace softcbm;

Volume random_volume(Shape3 shape, std::uint64_t seed) {
  Rng rng(seed);
  Volume v(shape);
  for (auto& x : v.data()) x = static_cast<float>(rng.uniform());
  return v;
}

Tensor<float> random_tensor(std::vector<int> shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& x : t.values()) x = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

void BM_Conv3dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  nn::Conv3d<float> conv("conv", c, c, 3, 1, 1);
  const auto x = random_tensor({2, c, n, n, n}, 1);
  for (auto _ : state) {
    nn::Context<float> ctx;
    benchmark::DoNotOptimize(conv.forward(x, ctx));
  }
  state.SetItemsProcessed(state.iterations() * 2LL * c * c * 27 * n * n * n);
}
BENCHMARK(BM_Conv3dForward)->Args({8, 16})->Args({16, 8})->Args({32, 4})->Unit(benchmark::kMicrosecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), n = static_cast<int>(state.range(1));
  nn::Conv3d<float> conv("conv", c, c, 3, 1, 1);
  const auto x = random_tensor({2, c, n, n, n}, 2);
  for (auto _ : state) {
    state.PauseTiming();
    nn::Tape<float> tape;
    nn::Context<float> ctx{nn::Mode::train, &tape, nullptr};
    const auto y = conv.forward(x, ctx);
    Tensor<float> g(y.shape(), 1.0f);
    state.ResumeTiming();
    benchmark::DoNotOptimize(conv.backward(g, tape));
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({8, 16})->Args({16, 8})->Unit(benchmark::kMicrosecond);

void BM_ResampleTrilinear(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Volume v = random_volume({48, 48, 48}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(resample_trilinear(v, {n, n, n}));
}
BENCHMARK(BM_ResampleTrilinear)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_Augment(benchmark::State& state) {
  const Volume v = random_volume({32, 32, 32}, 4);
  const auto policies = default_policies();
  int epoch = 0;
  for (auto _ : state) benchmark::DoNotOptimize(apply_augment(v, policies.train, 5, epoch++, 0));
}
BENCHMARK(BM_Augment)->Unit(benchmark::kMicrosecond);

void BM_GeneratePhantom(benchmark::State& state) {
  PhantomSpec spec;
  spec.grid = {48, 48, 48};
  spec.tube_radius = 2.0;
  spec.bulge_present = true;
  for (auto _ : state) {
    ++spec.seed;
    benchmark::DoNotOptimize(generate_phantom(spec));
  }
}
BENCHMARK(BM_GeneratePhantom)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  BackboneSpec spec;
  spec.kind = state.range(0) == 0 ? BackboneKind::resnet34_3d : BackboneKind::densenet121_3d;
  spec.width_scale = 0.1;
  spec.input_shape = {32, 32, 32};
  Model model(spec, 12, 0.3, 1);
  const auto x = random_tensor({4, 1, 32, 32, 32}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, nn::Mode::eval));
  state.SetLabel(to_string(spec.kind));
}
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ModelTrainStep(benchmark::State& state) {
  BackboneSpec spec;
  spec.width_scale = 0.1;
  spec.input_shape = {32, 32, 32};
  Model model(spec, 12, 0.3, 1);
  const auto x = random_tensor({4, 1, 32, 32, 32}, 7);
  Rng rng(8);
  for (auto _ : state) {
    model.zero_grad();
    nn::Tape<float> tape;
    const auto out = model.forward(x, nn::Mode::train, &tape, &rng);
    Tensor<float> dl(out.logits.shape(), 0.25f), dc(out.c.shape(), 0.05f);
    model.backward(dl, dc, tape);
  }
}
BENCHMARK(BM_ModelTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
