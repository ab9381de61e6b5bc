#include <benchmark/benchmark.h>

#include <random>

#include "fixtures.hpp"
#include "usersim/envelope.hpp"
#include "usersim/pipeline.hpp"
#include "usersim/reward.hpp"

using namespace usersim;

namespace {

void BM_ParseTurnOutput(benchmark::State& state) {
    const auto raw = fixture::valid_turn("I would like to know the renewal fee first.");
    for (auto _ : state) benchmark::DoNotOptimize(parse_turn_output(raw));
    state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * raw.size()));
}
BENCHMARK(BM_ParseTurnOutput);

void BM_RuleReward(benchmark::State& state) {
    const auto parsed = parse_turn_output(fixture::valid_turn("Fine, go on."));
    const RuleRewardConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(rule_reward(parsed, cfg));
}
BENCHMARK(BM_RuleReward);

void BM_GrpoAdvantages(benchmark::State& state) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> rewards(static_cast<std::size_t>(state.range(0)));
    for (auto& r : rewards) r = u(rng);
    for (auto _ : state) benchmark::DoNotOptimize(grpo_advantages(rewards));
}
BENCHMARK(BM_GrpoAdvantages)->Arg(8)->Arg(64);

void BM_PairIndices(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(pair_indices(90000, 450, n, PairingStrategy::uniform_random, 42));
    }
}
BENCHMARK(BM_PairIndices)->Arg(1440)->Arg(100000);

}  // namespace
BENCHMARK_MAIN();
