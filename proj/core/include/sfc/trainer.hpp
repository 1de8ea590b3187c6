#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sfc/calibration.hpp"
#include "sfc/chip.hpp"
#include "sfc/controller.hpp"
#include "sfc/tasks.hpp"

namespace sfc {

enum class LearningRule { per_window, per_step };
enum class InitMode { constant, gaussian };

std::string_view to_string(LearningRule rule) noexcept;
LearningRule parse_rule(std::string_view name);
std::string_view to_string(InitMode mode) noexcept;
InitMode parse_init_mode(std::string_view name);

struct TrainingConfig {
    Task task = Task::binary;
    LearningRule rule = LearningRule::per_window;
    double window = 0.2;          // s per presentation
    double learning_rate = 0.0;   // 0 picks the task default
    double w_max = 1.0;           // shadow weight mapped to the largest count
    int max_magnitude = 63;
    InitMode init = InitMode::constant;
    double init_value = 0.3;      // constant init, in units of w_max
    double init_sigma = 0.2;      // gaussian init, in units of w_max (mean 0)
    bool clip_shadow = true;      // keep shadow weights within [-w_max, w_max]
    bool error_feedback = false;  // carry the quantization residual forward
    double tau_in = 0.005;        // s, presynaptic trace for the per-step rule
    double tau_fb = 0.005;        // s, feedback trace for the per-step rule

    std::size_t presentations = 2000;
    std::size_t eval_every = 250; // validation cadence, presentations; 0 disables
    std::size_t checkpoint_every = 1000;
    DatasetSizes sizes{.train = 10000, .validation = 1000, .test = 1000};
    RateRange encoding{};
    TargetSpec targets{};

    std::uint64_t seed = 1;
    ChipConfig chip{};
    MismatchModel mismatch{};
    ControllerGains controller{};

    // Task defaults (window rule, normalized weights, Hz units).
    double effective_learning_rate() const noexcept;
    void validate() const;
};

// Task defaults: the binary task trains from a constant init for 2000
// presentations, Yin-Yang from a Gaussian init for 10000.
TrainingConfig default_config(Task task);

// Network of one task on the emulator: virtual channels hold the inputs
// followed by one target channel per class; each class owns an output unit
// and a controller pair.
struct TaskNetwork {
    EmulatedNetwork network;
    std::size_t inputs = 0;
    std::vector<std::uint32_t> outputs;
    std::vector<ControllerPair> pairs;

    std::size_t classes() const noexcept { return outputs.size(); }
    std::uint32_t target_channel(std::size_t c) const noexcept { return static_cast<std::uint32_t>(inputs + c); }
    // Fan-in left for input projections onto an output unit.
    int input_budget(std::size_t o) const;
};

TaskNetwork build_task_network(std::size_t inputs, std::size_t classes, const TrainingConfig& config);

// Calibration artifacts consumed by training.
struct TrainingCalibration {
    RateCorrectionMap rate_map;                      // identity when empty
    std::vector<ControllerCalibration> controllers;  // one per class, or empty
};

// rate_map.txt and controller_<k>.txt inside dir; missing files load as
// identity / uncalibrated.
void save_calibration(const std::filesystem::path& dir, const TrainingCalibration& calibration);
TrainingCalibration load_calibration(const std::filesystem::path& dir);

// Measures each controller pair in place (optionally tuning its gains) and
// returns the calibration records.
std::vector<ControllerCalibration> calibrate_controllers(TaskNetwork& net, bool tune, double window,
                                                         std::size_t repeats, std::uint64_t seed);

// Installs gains, kappa and offsets from calibration records.
void apply_calibration(TaskNetwork& net, std::span<const ControllerCalibration> controllers);

// count = clamp(round_half_away(w / w_max * max_magnitude), +-max_magnitude)
int quantize_weight(double w, double w_max, int max_magnitude = 63);
std::vector<int> quantize_weights(const WeightMatrix& weights, double w_max, int max_magnitude = 63);

struct DeployResult {
    std::vector<int> counts;         // input-major, as deployed
    std::size_t renormalized_rows = 0;
    std::size_t sign_switches = 0;
    std::size_t changed = 0;
};

// Scales a row of counts down (toward zero) so sum |count| <= budget.
void renormalize_row(std::span<int> row, int budget);

// Writes desired input->output counts into the fabric, shrinking any output
// row that exceeds its fan-in budget. Decreases go in before increases so the
// fabric stays within limits throughout.
DeployResult deploy_counts(TaskNetwork& net, std::span<const int> desired, std::size_t step);

// Input->output counts as currently programmed, input-major.
std::vector<int> read_counts(const TaskNetwork& net);

std::uint64_t counts_hash(std::span<const int> counts) noexcept;

struct IterationRecord {
    std::size_t iteration = 0;
    std::size_t label = 0;
    std::vector<double> output_rates;
    std::vector<double> target_rates;
    std::vector<double> positive_rates;
    std::vector<double> negative_rates;
    std::vector<double> feedback;    // per output, Hz of target - output
    double target_error = 0.0;       // mean |output - target|
    std::uint64_t counts_hash = 0;
    std::size_t count_changes = 0;   // sum |delta count|
    std::size_t renormalized_rows = 0;
    std::size_t sign_switches = 0;
    double simulated_time = 0.0;     // s of chip time consumed so far

    friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct EvalReport {
    double accuracy = 0.0;
    double target_error = 0.0;
    std::vector<std::vector<std::size_t>> confusion; // [true][predicted]
    std::size_t ties = 0;
    std::size_t samples = 0;
};

// Mutable training state: network, shadow weights and the quantization
// residual (only used with error feedback).
struct TrainerState {
    TaskNetwork net;
    WeightMatrix weights;
    std::vector<double> residual;
    std::size_t iteration = 0;
    double simulated_time = 0.0;
    RateCorrectionMap rate_map;
};

TrainerState make_trainer_state(const TrainingConfig& config, const TrainingCalibration& calibration = {});

// One in-the-loop iteration: present the sample with its target, collect
// spikes, update the shadow weights, quantize and remap the fabric.
IterationRecord train_step(TrainerState& state, const Example& sample, const TrainingConfig& config,
                           std::uint64_t seed);

struct Prediction {
    std::size_t label = 0;
    bool tie = false;
    std::vector<double> rates; // per output
};

// Inference on a copy with feedback disabled and silent target channels.
// Ties go to the lowest output index.
std::vector<Prediction> predict(const TrainerState& state, std::span<const RateVector> inputs,
                                const TrainingConfig& config, std::uint64_t seed);

EvalReport evaluate(const TrainerState& state, std::span<const Example> dataset, const TrainingConfig& config,
                    std::uint64_t seed);

// Seed of the evaluation pass after `iteration` presentations; the final
// test pass uses iteration = presentations + 1.
std::uint64_t evaluation_seed(std::uint64_t seed, std::size_t iteration);

// Presentation order of one epoch: a seeded permutation of the training set.
std::vector<std::size_t> presentation_order(std::size_t train_size, std::size_t epoch, std::uint64_t seed);

// Checkpoint: versioned text bundle with iteration, simulated time, shadow
// weights, residual and fabric. Throws schema_error on version mismatch.
inline constexpr int checkpoint_version = 1;
void write_checkpoint(std::ostream& out, const TrainerState& state);
void read_checkpoint(std::istream& in, TrainerState& state);

void write_eval_report(std::ostream& out, const EvalReport& report);

struct RunSummary {
    EvalReport test;
    std::vector<std::pair<std::size_t, EvalReport>> validation;
    std::size_t iterations = 0;
    double simulated_time = 0.0;
};

struct RunOptions {
    std::filesystem::path out_dir;
    bool resume = false;
    // Stop after this many iterations (for interruption tests); 0 runs to the end.
    std::size_t stop_after = 0;
    std::function<void(const IterationRecord&)> on_iteration;
};

// Full training run with artifacts in out_dir: manifest.txt, metrics.tsv,
// validation.tsv, trajectory.tsv, audit.tsv, checkpoints/, report.txt.
RunSummary run_experiment(const TrainingConfig& config, const TrainingCalibration& calibration,
                          const RunOptions& options);

// Mean |delta count| per step over iterations [begin, end) of a trajectory.
double mean_count_change(std::span<const std::vector<int>> trajectory, std::size_t begin, std::size_t end);

} // namespace sfc
