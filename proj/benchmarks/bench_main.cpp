#include <benchmark/benchmark.h>

#include "taigan/conversion_net.hpp"
#include "taigan/metrics.hpp"
#include "taigan/motion.hpp"
#include "taigan/phantom.hpp"

using namespace taigan;

namespace {

Volume noise_volume(Index3 d, std::uint64_t seed) {
  Rng rng(seed);
  Volume v(d);
  for (auto& x : v.storage()) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

void BM_Conv3d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  Rng rng(1);
  const auto x = nn::constant(nn::random_normal({1, c, 16, 32, 32}, rng, 1.0));
  const auto w = nn::parameter(nn::random_normal({c, c, 3, 3, 3}, rng, 0.1));
  const auto b = nn::parameter(nn::Tensor({1, c}));
  nn::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv3d(x, w, b, {{1, 1, 1}, {1, 1, 1}}));
}
BENCHMARK(BM_Conv3d)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_GeneratorStep(benchmark::State& state) {
  GeneratorConfig g;
  g.base_channels = static_cast<int>(state.range(0));
  TemporalEncoderConfig t;
  DiscriminatorConfig d;
  const auto model = ModelBundle::create(g, t, d, 3);
  Rng rng(2);
  const auto in = nn::constant(nn::random_normal({1, 2, 16, 32, 32}, rng, 1.0));
  const auto target = nn::constant(nn::random_normal({1, 1, 16, 32, 32}, rng, 1.0));
  TemporalConditioning c;
  c.steps = 27;
  c.values.assign(27 * 3, 0.5);
  for (auto _ : state) {
    auto [gamma, beta] = model.temporal->forward({c});
    nn::backward(nn::mse(model.generator->forward(in, gamma, beta), target));
  }
}
BENCHMARK(BM_GeneratorStep)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Registration(benchmark::State& state) {
  PhantomSpec ps;
  ps.noise_level = 0;
  const auto sim = simulate_study(ps, FrameSchedule::from_durations({60, 60}), "bench");
  const Volume& ref = sim.study.frames.back();
  MotionSimulationSpec ms;
  Rng rng(4);
  const Volume moved = apply_simulated_motion(ref, simulate_motion_field(rng, 2.0, ms), ps.spacing);
  RegistrationConfig cfg;
  cfg.similarity = state.range(0) ? Similarity::kNmi : Similarity::kMse;
  cfg.iterations = 20;
  for (auto _ : state) benchmark::DoNotOptimize(register_frames(moved, ref, ps.spacing, cfg));
}
BENCHMARK(BM_Registration)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Metrics(benchmark::State& state) {
  const Volume a = noise_volume({48, 48, 32}, 5), b = noise_volume({48, 48, 32}, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(similarity(a, b));
    benchmark::DoNotOptimize(nmi(a, b));
  }
}
BENCHMARK(BM_Metrics)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
