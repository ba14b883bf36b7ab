#include <benchmark/benchmark.h>

#include "tpb/agent.hpp"
#include "tpb/env.hpp"
#include "tpb/nn.hpp"
#include "tpb/trigger.hpp"

using namespace tpb;

namespace {

nn::Matrix inputs(std::size_t obs, std::size_t T, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    nn::Matrix x(static_cast<Eigen::Index>(obs), static_cast<Eigen::Index>(T));
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
    return x;
}

// Args: hidden units, sequence length.
void BM_Forward(benchmark::State& state) {
    const nn::NetworkShape shape{11, static_cast<std::size_t>(state.range(0)), 2, 10};
    Rng rng(1);
    const auto p = nn::NetworkParams::initialize(shape, rng);
    const auto x = inputs(11, static_cast<std::size_t>(state.range(1)), rng);
    for (auto _ : state) benchmark::DoNotOptimize(nn::forward(p, x, nn::RecurrentState::zeros(shape)).q);
}
BENCHMARK(BM_Forward)->Args({32, 64})->Args({64, 64});

void BM_ForwardBackward(benchmark::State& state) {
    const nn::NetworkShape shape{11, static_cast<std::size_t>(state.range(0)), 2, 10};
    Rng rng(2);
    const auto p = nn::NetworkParams::initialize(shape, rng);
    const auto x = inputs(11, static_cast<std::size_t>(state.range(1)), rng);
    const nn::Matrix dq = nn::Matrix::Constant(10, x.cols(), 0.01);
    for (auto _ : state) {
        const auto fwd = nn::forward(p, x, nn::RecurrentState::zeros(shape));
        benchmark::DoNotOptimize(nn::bptt(p, fwd.cache, dq));
    }
}
BENCHMARK(BM_ForwardBackward)->Args({32, 64})->Args({64, 64});

void BM_TrainStep(benchmark::State& state) {
    agent::AgentConfig cfg;
    cfg.hidden = static_cast<std::size_t>(state.range(0));
    const nn::NetworkShape shape = cfg.network_shape(11, 10);
    Rng rng(3);
    agent::Learner learner(cfg, nn::NetworkParams::initialize(shape, rng));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::uint64_t t = 0; t < 500; ++t) {
        agent::Transition tr;
        tr.observation = inputs(11, 1, rng).col(0);
        tr.next_observation = inputs(11, 1, rng).col(0);
        tr.action = t % 10;
        tr.reward = u(rng);
        tr.step_index = t;
        learner.memory.push(tr);
    }
    for (auto _ : state) benchmark::DoNotOptimize(agent::train_step(learner, rng));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(64);

void BM_Scan(benchmark::State& state) {
    const auto f = trigger::parse(R"(trigger tau1(window=4, duration=7) {
        d[1] - d[0] > -3 && d[1] - d[0] < -2.6
        && d[2] - d[1] > 90 && d[2] - d[1] < 100
        && d[3] - d[2] > -25 && d[3] - d[2] < -12
        && d[3] - d[0] > 70 && d[3] - d[0] < 79 })");
    env::EnvConfig cfg;
    Rng rng(4);
    const auto series = env::channel_values(env::generate_jobs(cfg, rng), env::Channel::JobSize);
    for (auto _ : state) benchmark::DoNotOptimize(trigger::scan_end_indices(f, series));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(series.size()));
}
BENCHMARK(BM_Scan);

void BM_EnvEpisode(benchmark::State& state) {
    env::EnvConfig cfg;
    env::CloudEnv environment(cfg);
    for (auto _ : state) {
        environment.reset();
        std::size_t vm = 0;
        while (!environment.done()) benchmark::DoNotOptimize(environment.step(vm++ % 10));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(cfg.job_count));
}
BENCHMARK(BM_EnvEpisode);

}  // namespace

BENCHMARK_MAIN();
