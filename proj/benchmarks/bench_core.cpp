#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <random>

#include "noisepair/detector.hpp"
#include "noisepair/evaluation.hpp"
#include "noisepair/frontend.hpp"
#include "noisepair/fusion.hpp"
#include "noisepair/labeler.hpp"

using namespace noisepair;

namespace {

std::vector<double> noise(std::size_t n, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> x(n);
  for (double& v : x) v = d(rng);
  return x;
}

void BM_MelSpectrogram(benchmark::State& state) {
  AudioClip clip;
  clip.samples = noise(static_cast<std::size_t>(state.range(0)) * 16000, 0.1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(compute_mel_spectrogram(clip));
  state.SetItemsProcessed(state.iterations() * state.range(0));  // seconds of audio
}
BENCHMARK(BM_MelSpectrogram)->Arg(1)->Arg(60);

void BM_DeltaStack(benchmark::State& state) {
  Matrix m(4800, 30);
  const auto v = noise(m.data().size(), 10.0, 2);
  std::copy(v.begin(), v.end(), m.data().begin());
  const MelSpectrogram spec(m, 0.125, "d", 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(stack_channels(spec, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_DeltaStack)->Arg(0)->Arg(3);

void BM_Forward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const auto model = make_model(channels, 1);
  DetectionWindow w;
  w.channels = static_cast<std::size_t>(channels);
  w.height = 30;
  w.width = 8;
  w.values = noise(w.channels * 240, 1.0, 3);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, w));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(4);

void BM_Backprop(benchmark::State& state) {
  const auto model = make_model(4, 1);
  DetectionWindow w;
  w.channels = 4;
  w.height = 30;
  w.width = 8;
  w.values = noise(960, 1.0, 4);
  for (auto _ : state) benchmark::DoNotOptimize(backprop(model, w, true));
}
BENCHMARK(BM_Backprop);

void BM_Xcorr(benchmark::State& state) {
  const auto a = noise(69, 1.0, 5);
  const auto b = noise(69, 1.0, 6);
  for (auto _ : state) benchmark::DoNotOptimize(xcorr_max(a, b, 27));
}
BENCHMARK(BM_Xcorr);

void BM_FuseStream(benchmark::State& state) {
  PredictionSeries src, rcv;
  src.step_s = rcv.step_s = 0.375;
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto ps = noise(n, 0.3, 7), pr = noise(n, 0.3, 8);
  for (std::size_t i = 0; i < n; ++i) {
    src.times.push_back(0.375 * static_cast<double>(i));
    rcv.times.push_back(0.375 * static_cast<double>(i) + 3.0);
    src.probs.push_back(std::abs(ps[i]));
    rcv.probs.push_back(std::abs(pr[i]) * 0.5);
  }
  for (auto _ : state) benchmark::DoNotOptimize(fuse_stream(src, rcv, {}));
}
BENCHMARK(BM_FuseStream)->Arg(9600);  // one hour

void BM_HmmFit(benchmark::State& state) {
  LevelSeries s;
  const auto x = noise(static_cast<std::size_t>(state.range(0)), 2.0, 9);
  for (std::size_t i = 0; i < x.size(); ++i) s.values.push_back(-60 + x[i] + (i % 240 == 0 ? 25 : 0));
  for (auto _ : state) benchmark::DoNotOptimize(fit(s));
}
BENCHMARK(BM_HmmFit)->Arg(4800)->Arg(28800);

void BM_AveragePrecision(benchmark::State& state) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u;
  std::vector<ScoredSample> s(static_cast<std::size_t>(state.range(0)));
  for (auto& x : s) x = {u(rng), u(rng) < 0.2};
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(s));
}
BENCHMARK(BM_AveragePrecision)->Arg(10000);

}  // namespace
BENCHMARK_MAIN();
