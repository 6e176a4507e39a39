#include <benchmark/benchmark.h>

#include "slm/abx.hpp"
#include "slm/kmeans.hpp"
#include "slm/mlm.hpp"
#include "slm/rng.hpp"

namespace {

slm::FeatureSequence random_features(int rows, int cols, slm::Rng& rng) {
    slm::FeatureSequence seq;
    seq.frames.resize(rows, cols);
    for (int t = 0; t < rows; ++t) {
        for (int d = 0; d < cols; ++d) seq.frames(t, d) = static_cast<float>(rng.normal());
    }
    return seq;
}

void BM_DtwDistance(benchmark::State& state) {
    slm::Rng rng(1);
    const auto x = random_features(static_cast<int>(state.range(0)), 16, rng);
    const auto y = random_features(static_cast<int>(state.range(0)), 16, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(slm::dtw_distance(x, y));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_DtwDistance)->RangeMultiplier(2)->Range(8, 256)->Complexity();

void BM_KmeansFit(benchmark::State& state) {
    slm::Rng rng(2);
    const int n = static_cast<int>(state.range(0));
    slm::MatrixF data(n, 16);
    for (int i = 0; i < n; ++i) {
        for (int d = 0; d < 16; ++d) data(i, d) = static_cast<float>(rng.normal());
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(slm::kmeans_fit(data, 32, 7));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_KmeansFit)->RangeMultiplier(4)->Range(1024, 16384)->Complexity();

void BM_MlmForward(benchmark::State& state) {
    slm::ModelConfig config;
    config.input_mode = slm::InputMode::Discrete;
    config.target_mode = slm::TargetMode::Discrete;
    config.loss = slm::LossKind::NllL;
    config.vocab_size = 50;
    config.model_dim = 32;
    config.layers = 2;
    config.heads = 2;
    config.max_seq_len = 512;
    const auto params = slm::ModelParams::init(config, 3);
    slm::Rng rng(4);
    slm::UnitSequence units;
    units.vocab_size = 50;
    const int len = static_cast<int>(state.range(0));
    for (int t = 0; t < len; ++t) {
        units.units.push_back(static_cast<std::int32_t>(rng.uniform_int(50)));
    }
    const auto seq = slm::make_model_sequence(config, nullptr, &units);
    std::vector<int> masked;
    for (int t = 0; t < len; t += 2) masked.push_back(t);
    for (auto _ : state) {
        benchmark::DoNotOptimize(slm::forward(params, seq, masked));
    }
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MlmForward)->RangeMultiplier(2)->Range(32, 256)->Complexity();

}  // namespace

BENCHMARK_MAIN();
