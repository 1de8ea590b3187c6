#include <benchmark/benchmark.h>

#include "sfc/chip.hpp"
#include "sfc/controller.hpp"
#include "sfc/spike_train.hpp"
#include "sfc/tasks.hpp"
#include "sfc/trainer.hpp"

using namespace sfc;

namespace {

void BM_poisson_generate(benchmark::State& state) {
    const auto channels = static_cast<std::size_t>(state.range(0));
    const RateVector rates(std::vector<double>(channels, 60.0));
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(poisson_generate(rates, 1.0, ++seed));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(channels) * 60);
}
BENCHMARK(BM_poisson_generate)->Arg(10)->Arg(700);

// One 200 ms presentation of the Yin-Yang task network (3 outputs with
// controller pairs, 4 inputs plus 3 targets).
void BM_run_window_yinyang(benchmark::State& state) {
    const auto config = default_config(Task::yinyang);
    const auto net = build_task_network(4, 3, config);
    const RateVector rates{60.0, 40.0, 60.0, 80.0, 20.0, 2.0, 2.0};
    const auto in = net.network.stimulate(rates, config.window, 3);
    for (auto _ : state) benchmark::DoNotOptimize(net.network.run_window(in, config.window, 3));
    state.SetLabel("200 ms window");
}
BENCHMARK(BM_run_window_yinyang)->Unit(benchmark::kMillisecond);

void BM_run_window_pooled(benchmark::State& state) {
    auto config = default_config(Task::yinyang);
    config.chip.member_routed_inputs = false;
    const auto net = build_task_network(4, 3, config);
    const RateVector rates{60.0, 40.0, 60.0, 80.0, 20.0, 2.0, 2.0};
    const auto in = net.network.stimulate(rates, config.window, 3);
    for (auto _ : state) benchmark::DoNotOptimize(net.network.run_window(in, config.window, 3));
}
BENCHMARK(BM_run_window_pooled)->Unit(benchmark::kMillisecond);

void BM_learning_update(benchmark::State& state) {
    const auto inputs = static_cast<std::size_t>(state.range(0));
    const auto in = poisson_generate(RateVector(std::vector<double>(inputs, 50.0)), 1.0, 1);
    const auto pos = poisson_generate(RateVector{40.0, 10.0, 25.0}, 1.0, 2);
    const auto neg = poisson_generate(RateVector{10.0, 30.0, 25.0}, 1.0, 3);
    const auto fb = feedback_current(pos, neg, 1.0, 0.005);
    const WeightMatrix w(inputs, 3, 1e-3);
    for (auto _ : state) benchmark::DoNotOptimize(learning_update(w, in, fb, 0.005));
    state.SetLabel("1 s window");
}
BENCHMARK(BM_learning_update)->Arg(4)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_train_step_binary(benchmark::State& state) {
    const auto config = default_config(Task::binary);
    auto trainer = make_trainer_state(config);
    const auto data = make_examples(Task::binary, 64, 1);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        const auto& sample = data[seed % data.size()];
        benchmark::DoNotOptimize(train_step(trainer, sample, config, ++seed));
    }
}
BENCHMARK(BM_train_step_binary)->Unit(benchmark::kMillisecond);

} // namespace
BENCHMARK_MAIN();
