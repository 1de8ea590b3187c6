#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "sfc/errors.hpp"
#include "sfc/random.hpp"
#include "sfc/trainer.hpp"

using namespace sfc;
namespace fs = std::filesystem;

namespace {

// Half-away-from-zero rounding of k/2 done in integers.
int half_count(int k) {
    const int m = (std::abs(k) + 1) / 2;
    return std::clamp(k < 0 ? -m : m, -63, 63);
}

TrainingConfig small_binary(std::uint64_t seed = 1) {
    auto c = default_config(Task::binary);
    c.seed = seed;
    c.mismatch.seed = seed;
    c.window = 0.1;
    c.presentations = 30;
    c.sizes = {.train = 40, .validation = 10, .test = 10};
    c.eval_every = 10;
    c.checkpoint_every = 10;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("sfc_test_" + name + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST(quantize_weight, examples) {
    EXPECT_EQ(quantize_weight(0.0, 1.0), 0);
    EXPECT_EQ(quantize_weight(1.0, 1.0), 63);
    EXPECT_EQ(quantize_weight(-1.0, 1.0), -63);
    EXPECT_EQ(quantize_weight(0.5, 1.0), 32);
    EXPECT_EQ(quantize_weight(-0.5, 1.0), -32);
    EXPECT_EQ(quantize_weight(0.5 * 2.5, 2.5), 32);
    EXPECT_EQ(quantize_weight(7.0, 1.0), 63);
}

TEST(quantize_weight, rounding_oracle_on_half_steps) {
    for (int k = -200; k <= 200; ++k) EXPECT_EQ(quantize_weight(k / 126.0, 1.0), half_count(k)) << "k " << k;
}

TEST(quantize_weight, rejects_bad_arguments) {
    EXPECT_THROW(quantize_weight(0.1, 0.0), std::invalid_argument);
    EXPECT_THROW(quantize_weight(std::nan(""), 1.0), numeric_error);
}

TEST(quantize_weight, odd_and_monotone) {
    auto rng = make_stream(3, 0, stream_purpose::init);
    std::vector<double> ws;
    for (int i = 0; i < 5000; ++i) ws.push_back(4.0 * uniform01(rng) - 2.0);
    std::sort(ws.begin(), ws.end());
    int previous = -64;
    for (double w : ws) {
        const int q = quantize_weight(w, 1.0);
        EXPECT_EQ(quantize_weight(-w, 1.0), -q);
        EXPECT_GE(q, previous);
        previous = q;
    }
}

TEST(renormalize_row, fits_budget_and_shrinks_toward_zero) {
    auto rng = make_stream(4, 0, stream_purpose::init);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<int> row(1 + rng() % 6);
        for (int& c : row) c = static_cast<int>(rng() % 127) - 63;
        const auto original = row;
        const int budget = static_cast<int>(rng() % 65);
        renormalize_row(row, budget);
        int sum = 0;
        for (std::size_t i = 0; i < row.size(); ++i) {
            sum += std::abs(row[i]);
            EXPECT_LE(std::abs(row[i]), std::abs(original[i]));
            EXPECT_TRUE(row[i] == 0 || (row[i] > 0) == (original[i] > 0));
        }
        EXPECT_LE(sum, budget);
    }
}

TEST(deploy_counts, renormalizes_rows_over_budget) {
    const auto config = small_binary();
    auto net = build_task_network(2, 2, config);
    const int budget = net.input_budget(0);
    EXPECT_EQ(budget, 64 - config.controller.pos_to_output - config.controller.neg_to_output);
    const std::vector<int> desired{63, -10, 40, 63};
    const auto d = deploy_counts(net, desired, 1);
    EXPECT_EQ(d.renormalized_rows, 2u);
    for (std::size_t o = 0; o < 2; ++o) {
        EXPECT_LE(net.network.fabric().fan_in_used(net.outputs[o]), 64);
        EXPECT_LE(std::abs(d.counts[o]) + std::abs(d.counts[2 + o]), budget);
    }
    EXPECT_EQ(read_counts(net), d.counts);
    // Swapping signs in one go must not trip the fabric budgets.
    const std::vector<int> flipped{-d.counts[0], -d.counts[1], -d.counts[2], -d.counts[3]};
    const auto f = deploy_counts(net, flipped, 2);
    EXPECT_EQ(f.counts, flipped);
    EXPECT_EQ(f.sign_switches, 4u);
}

TEST(deploy_counts, read_back_is_idempotent) {
    const auto config = small_binary();
    auto net = build_task_network(2, 2, config);
    const std::vector<int> desired{12, -30, 0, 5};
    deploy_counts(net, desired, 1);
    const auto first = read_counts(net);
    const auto again = deploy_counts(net, first, 2);
    EXPECT_EQ(again.changed, 0u);
    EXPECT_EQ(read_counts(net), first);
}

TEST(train_step, zero_learning_rate_freezes_weights) {
    auto config = small_binary();
    config.learning_rate = 0.0;
    auto state = make_trainer_state(config);
    state.weights.set_learning_rate(0.0);
    const auto weights = state.weights;
    const auto fabric = state.net.network.fabric();
    const auto sample = make_examples(Task::binary, 1, 2)[0];
    const auto rec = train_step(state, sample, config, 5);
    EXPECT_EQ(state.weights, weights);
    EXPECT_EQ(state.net.network.fabric(), fabric);
    EXPECT_EQ(rec.count_changes, 0u);
    EXPECT_EQ(rec.iteration, 0u);
    EXPECT_EQ(state.iteration, 1u);
    EXPECT_DOUBLE_EQ(rec.simulated_time, config.window);
}

TEST(train_step, deterministic_for_seed_and_state) {
    const auto config = small_binary();
    auto a = make_trainer_state(config);
    auto b = make_trainer_state(config);
    const auto sample = make_examples(Task::binary, 1, 3)[0];
    EXPECT_EQ(train_step(a, sample, config, 11), train_step(b, sample, config, 11));
    EXPECT_EQ(a.weights, b.weights);
}

TEST(train_step, record_metrics_are_consistent) {
    const auto config = small_binary();
    auto state = make_trainer_state(config);
    const auto sample = make_examples(Task::binary, 1, 4)[0];
    const auto rec = train_step(state, sample, config, 12);
    ASSERT_EQ(rec.output_rates.size(), 2u);
    double err = 0.0;
    for (std::size_t o = 0; o < 2; ++o) err += std::abs(rec.output_rates[o] - rec.target_rates[o]) / 2.0;
    EXPECT_NEAR(rec.target_error, err, 1e-12);
    EXPECT_EQ(rec.counts_hash, counts_hash(read_counts(state.net)));
    EXPECT_EQ(rec.target_rates[sample.label], config.targets.high_rate);
}

TEST(train_step, output_below_target_raises_active_counts) {
    // Silent outputs against a 20 Hz target: feedback is excitatory, so the
    // active input rows can only grow.
    int ok = 0;
    const int trials = 20;
    for (int s = 0; s < trials; ++s) {
        auto config = small_binary(100 + s);
        config.init_value = 0.0;
        auto state = make_trainer_state(config);
        const auto before = read_counts(state.net);
        const Example sample{RateVector{50.0, 5.0}, 0, 50.0, 5.0};
        train_step(state, sample, config, derive_seed(s, 0, stream_purpose::presentation));
        const auto after = read_counts(state.net);
        bool good = true;
        for (std::size_t i = 0; i < 2; ++i) good = good && after[i * 2 + 0] >= before[i * 2 + 0];
        ok += good;
    }
    EXPECT_GE(ok, 19);
}

TEST(train_step, sign_switch_implies_shadow_sign_change) {
    auto config = small_binary(5);
    config.learning_rate = 2e-3;
    // Every weight starts inhibitory, so the label weights must cross zero.
    config.init_value = -0.05;
    auto state = make_trainer_state(config);
    const auto data = make_examples(Task::binary, 60, 6);
    std::size_t switches = 0;
    for (std::size_t it = 0; it < data.size(); ++it) {
        const auto before = state.weights;
        state.net.network.fabric().clear_audit_log();
        train_step(state, data[it], config, derive_seed(9, it, stream_purpose::presentation));
        for (const auto& e : state.net.network.fabric().audit_log()) {
            if (!e.type_switch) continue;
            ASSERT_EQ(e.pre.kind, NodeKind::virtual_input);
            const auto o = static_cast<std::size_t>(
                std::find(state.net.outputs.begin(), state.net.outputs.end(), e.post) - state.net.outputs.begin());
            ASSERT_LT(o, state.net.classes());
            const double w0 = before(e.pre.index, o), w1 = state.weights(e.pre.index, o);
            EXPECT_TRUE((w0 > 0.0 && w1 < 0.0) || (w0 < 0.0 && w1 > 0.0)) << w0 << " -> " << w1;
            ++switches;
        }
    }
    EXPECT_GT(switches, 0u);
}

TEST(evaluate, oracle_fabric_classifies_binary_set) {
    auto config = small_binary();
    auto state = make_trainer_state(config);
    // Input k drives output k only.
    deploy_counts(state.net, std::vector<int>{40, 0, 0, 40}, 1);
    const auto data = make_examples(Task::binary, 40, 7);
    const auto report = evaluate(state, data, config, 3);
    EXPECT_DOUBLE_EQ(report.accuracy, 1.0);
    EXPECT_EQ(report.samples, 40u);
    for (std::size_t c = 0; c < 2; ++c) {
        const auto row = std::accumulate(report.confusion[c].begin(), report.confusion[c].end(), std::size_t{0});
        EXPECT_EQ(row, static_cast<std::size_t>(std::count_if(data.begin(), data.end(),
                                                              [c](const Example& e) { return e.label == c; })));
    }
}

TEST(evaluate, leaves_state_untouched) {
    const auto config = small_binary();
    auto state = make_trainer_state(config);
    const auto weights = state.weights;
    const auto fabric = state.net.network.fabric();
    evaluate(state, make_examples(Task::binary, 10, 8), config, 4);
    EXPECT_EQ(state.weights, weights);
    EXPECT_EQ(state.net.network.fabric(), fabric);
    EXPECT_THROW(evaluate(state, std::vector<Example>{}, config, 4), std::invalid_argument);
}

TEST(evaluate, ties_go_to_lowest_index) {
    const auto config = small_binary();
    auto state = make_trainer_state(config);
    deploy_counts(state.net, std::vector<int>{0, 0, 0, 0}, 1);
    const std::vector<RateVector> inputs{RateVector{50.0, 5.0}};
    const auto p = predict(state, inputs, config, 1);
    EXPECT_TRUE(p[0].tie);
    EXPECT_EQ(p[0].label, 0u);
}

TEST(checkpoint, round_trip_restores_state) {
    const auto config = small_binary();
    auto state = make_trainer_state(config);
    const auto data = make_examples(Task::binary, 5, 9);
    for (std::size_t i = 0; i < data.size(); ++i) train_step(state, data[i], config, i);
    std::stringstream ss;
    write_checkpoint(ss, state);
    auto restored = make_trainer_state(config);
    read_checkpoint(ss, restored);
    EXPECT_EQ(restored.weights, state.weights);
    EXPECT_EQ(restored.iteration, state.iteration);
    EXPECT_EQ(restored.simulated_time, state.simulated_time);
    EXPECT_EQ(restored.net.network.fabric(), state.net.network.fabric());

    std::string text = ss.str();
    text.replace(text.find("sfc-checkpoint 1"), 16, "sfc-checkpoint 9");
    std::stringstream bad(text);
    EXPECT_THROW(read_checkpoint(bad, restored), schema_error);
}

TEST(run_experiment, resume_is_bit_identical) {
    const auto config = small_binary(3);
    const auto whole = scratch_dir("whole");
    const auto parts = scratch_dir("parts");
    const auto a = run_experiment(config, {}, {.out_dir = whole});
    RunOptions first{.out_dir = parts};
    first.stop_after = 15;
    run_experiment(config, {}, first);
    RunOptions second{.out_dir = parts};
    second.resume = true;
    const auto b = run_experiment(config, {}, second);
    EXPECT_EQ(a.iterations, b.iterations);
    EXPECT_EQ(a.test.accuracy, b.test.accuracy);
    EXPECT_EQ(a.test.target_error, b.test.target_error);
    for (const char* f : {"metrics.tsv", "trajectory.tsv", "validation.tsv", "report.txt", "weights.tsv", "fabric.tsv"})
        EXPECT_EQ(slurp(whole / f), slurp(parts / f)) << f;
    EXPECT_TRUE(fs::exists(whole / "manifest.txt"));
    fs::remove_all(whole);
    fs::remove_all(parts);
}

TEST(run_experiment, metrics_have_one_row_per_iteration) {
    const auto config = small_binary(4);
    const auto dir = scratch_dir("metrics");
    std::size_t callbacks = 0;
    RunOptions opts{.out_dir = dir};
    opts.on_iteration = [&](const IterationRecord&) { ++callbacks; };
    const auto summary = run_experiment(config, {}, opts);
    EXPECT_EQ(callbacks, config.presentations);
    EXPECT_EQ(summary.validation.size(), config.presentations / config.eval_every);
    std::ifstream in(dir / "metrics.tsv");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, config.presentations + 1);
    EXPECT_DOUBLE_EQ(summary.simulated_time, config.presentations * config.window);
    fs::remove_all(dir);
}

TEST(presentation_order, is_a_permutation) {
    auto order = presentation_order(100, 2, 5);
    EXPECT_NE(order, presentation_order(100, 3, 5));
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], i);
}

TEST(mean_count_change, averages_absolute_deltas) {
    const std::vector<std::vector<int>> traj{{0, 0}, {2, -1}, {2, 1}, {5, 1}};
    EXPECT_DOUBLE_EQ(mean_count_change(traj, 0, 4), (3.0 + 2.0 + 3.0) / 3.0);
    EXPECT_DOUBLE_EQ(mean_count_change(traj, 1, 3), 2.0);
    EXPECT_THROW(mean_count_change(traj, 2, 3), std::invalid_argument);
}

TEST(training_config, defaults_and_validation) {
    const auto b = default_config(Task::binary);
    EXPECT_EQ(b.init, InitMode::constant);
    EXPECT_EQ(b.presentations, 2000u);
    EXPECT_DOUBLE_EQ(b.window, 0.2);
    EXPECT_GT(b.effective_learning_rate(), 0.0);
    const auto y = default_config(Task::yinyang);
    EXPECT_EQ(y.init, InitMode::gaussian);
    EXPECT_EQ(y.presentations, 10000u);
    EXPECT_DOUBLE_EQ(y.init_sigma, 0.2);
    auto bad = b;
    bad.window = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = b;
    bad.w_max = -1.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    EXPECT_EQ(parse_rule("per-step"), LearningRule::per_step);
    EXPECT_THROW(parse_rule("hebbian"), std::invalid_argument);
}
