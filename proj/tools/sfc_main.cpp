// sfc: calibrate, train, evaluate and export from the command line.
//
// Exit codes: 0 success, 1 calibration/acceptance failure, 2 usage or I/O error.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sfc/calibration.hpp"
#include "sfc/config.hpp"
#include "sfc/errors.hpp"
#include "sfc/random.hpp"
#include "sfc/tasks.hpp"
#include "sfc/trainer.hpp"

namespace fs = std::filesystem;
using namespace sfc;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_failure = 1;
constexpr int exit_usage = 2;

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<std::string> task;
    std::optional<std::string> rule;
    std::optional<double> mismatch;
    std::optional<std::size_t> population;
    bool skip_calibration = false;
    std::vector<std::string> overrides; // key=value
};

void add_common(CLI::App& app, CommonOptions& o) {
    app.add_option("--config", o.config_path, "key=value run configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "master seed");
    app.add_option("--out", o.out, "output directory (default: $SFC_OUT_ROOT/<command>-<task>-s<seed>)");
    app.add_option("--task", o.task, "binary or yinyang")->check(CLI::IsMember({"binary", "yinyang"}));
    app.add_option("--rule", o.rule, "per-window or per-step")->check(CLI::IsMember({"per-window", "per-step"}));
    app.add_option("--mismatch", o.mismatch, "relative device mismatch sigma");
    app.add_option("--population", o.population, "neurons per unit");
    app.add_flag("--skip-calibration", o.skip_calibration, "train with ideal (identity) calibration");
    app.add_option("--set", o.overrides, "override any config key, e.g. --set window=0.1");
}

TrainingConfig resolve_config(const CommonOptions& o) {
    KeyValues values;
    if (!o.config_path.empty()) values = load_key_values(o.config_path);
    // Precedence: task defaults, then the file, then flags.
    if (o.task) values["task"] = *o.task;
    const auto task = values.find("task");
    TrainingConfig c = default_config(task == values.end() ? Task::binary : parse_task(task->second));
    apply_config(c, values);
    if (o.seed) c.seed = *o.seed;
    if (o.rule) c.rule = parse_rule(*o.rule);
    if (o.mismatch) c.mismatch.relative_sigma = *o.mismatch;
    if (o.population) c.chip.population = *o.population;
    KeyValues extra;
    for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got " + kv);
        extra[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    apply_config(c, extra);
    c.validate();
    return c;
}

fs::path resolve_out(const CommonOptions& o, const std::string& command, const TrainingConfig& c) {
    if (!o.out.empty()) return o.out;
    const char* root = std::getenv("SFC_OUT_ROOT");
    return fs::path(root ? root : "runs") /
           (command + "-" + std::string(to_string(c.task)) + "-s" + std::to_string(c.seed));
}

void prepare_out(const fs::path& dir) {
    const auto parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
    if (!fs::exists(parent)) throw std::runtime_error("output parent directory does not exist: " + parent.string());
    fs::create_directories(dir);
}

std::ofstream open_file(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    return out;
}

void write_manifest(const fs::path& dir, const std::string& command, const TrainingConfig& c) {
    auto out = open_file(dir / "manifest.txt");
    out << "# sfc " << command << "\n";
    write_key_values(out, to_key_values(c));
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
    return v;
}

// Rate map, FF curves and controller calibration for the task network.
// Returns false when a controller fails acceptance; the best-found reports
// are written either way.
bool calibrate_into(const fs::path& dir, const TrainingConfig& c, TrainingCalibration& result) {
    fs::create_directories(dir);
    const std::uint64_t seed = derive_seed(c.seed, 0, stream_purpose::poisson);

    const auto grid = linspace(0.0, 200.0, 11);
    result.rate_map = calibrate_rates(c.chip, c.mismatch, grid, 1.0, 4, seed);
    const auto check_grid = linspace(20.0, 100.0, 9);
    {
        std::vector<double> corrected;
        for (double g : check_grid) corrected.push_back(result.rate_map.request_for(g));
        const auto raw = measure_recorded_rates(c.chip, c.mismatch, check_grid, 1.0, 4, seed + 1);
        const auto fixed = measure_recorded_rates(c.chip, c.mismatch, corrected, 1.0, 4, seed + 1);
        auto out = open_file(dir / "rate_check.tsv");
        out << "requested\tmeasured_raw\tmeasured_corrected\n";
        for (std::size_t i = 0; i < check_grid.size(); ++i)
            out << check_grid[i] << '\t' << raw[i] << '\t' << fixed[i] << '\n';
    }

    const std::vector<int> counts{8, 16, 32, 63};
    const auto ff = measure_ff_curves(c.chip, c.mismatch, counts, check_grid, 1.0, 2, seed + 2);
    {
        auto out = open_file(dir / "ff_curves.tsv");
        write_ff_curves(out, ff);
    }

    TaskNetwork net = build_task_network(input_count(c.task), class_count(c.task), c);
    std::vector<double> errors;
    for (int e = -20; e <= 20; e += 5) errors.push_back(e);
    const ControllerTuning tuning{};
    bool ok = true;
    for (std::size_t k = 0; k < net.pairs.size(); ++k) {
        auto best = search_controller_gains(net.network, net.pairs[k], errors, 1.0, 5,
                                            derive_seed(seed, k, stream_purpose::presentation), tuning);
        const bool accepted = best.corrective() && best.r_squared >= tuning.min_r_squared;
        ok = ok && accepted;
        auto out = open_file(dir / ("controller_" + std::to_string(k) + "_scatter.tsv"));
        out << "error\tfeedback\n";
        for (const auto& [e, fb] : best.points) out << e << '\t' << fb << '\n';
        std::cout << "controller " << k << ": slope " << best.slope << " Hz/Hz, R^2 " << best.r_squared
                  << (accepted ? "" : "  (rejected)") << '\n';
        result.controllers.push_back(std::move(best));
    }
    save_calibration(dir, result);
    return ok;
}

struct LoadedRun {
    TrainingConfig config;
    TrainerState state;
};

// Rebuilds a run from its manifest, calibration and a checkpoint (the latest
// one in the run directory unless a file is given).
LoadedRun load_run(const fs::path& run_dir, const std::optional<fs::path>& checkpoint) {
    const KeyValues manifest = load_key_values(run_dir / "manifest.txt");
    KeyValues values;
    for (const auto& key : config_keys())
        if (auto it = manifest.find(key); it != manifest.end()) values[key] = it->second;
    TrainingConfig c = default_config(parse_task(values.at("task")));
    apply_config(c, values);
    const TrainingCalibration cal = load_calibration(run_dir / "calibration");
    TrainerState state = make_trainer_state(c, cal);

    fs::path ck;
    if (checkpoint) {
        ck = *checkpoint;
    } else {
        for (const auto& e : fs::directory_iterator(run_dir / "checkpoints"))
            if (e.path().extension() == ".txt" && (ck.empty() || e.path().filename() > ck.filename())) ck = e.path();
        if (ck.empty()) throw std::runtime_error("no checkpoint in " + run_dir.string());
    }
    std::ifstream in(ck);
    if (!in) throw std::runtime_error("cannot read checkpoint " + ck.string());
    read_checkpoint(in, state);
    return {c, std::move(state)};
}

int cmd_calibrate(const CommonOptions& o) {
    const TrainingConfig c = resolve_config(o);
    const fs::path dir = resolve_out(o, "calibrate", c);
    prepare_out(dir);
    write_manifest(dir, "calibrate", c);
    TrainingCalibration cal;
    const bool ok = calibrate_into(dir, c, cal);
    std::cout << "calibration written to " << dir.string() << '\n';
    return ok ? exit_ok : exit_failure;
}

int cmd_train(const CommonOptions& o, const std::string& calibration_dir, bool resume, std::size_t stop_after) {
    const TrainingConfig c = resolve_config(o);
    const fs::path dir = resolve_out(o, "train", c);
    prepare_out(dir);

    TrainingCalibration cal;
    if (!resume) {
        if (o.skip_calibration) {
            save_calibration(dir / "calibration", cal);
        } else if (!calibration_dir.empty()) {
            cal = load_calibration(calibration_dir);
            save_calibration(dir / "calibration", cal);
        } else if (!calibrate_into(dir / "calibration", c, cal)) {
            std::cerr << "controller calibration failed acceptance; see " << (dir / "calibration").string() << '\n';
            return exit_failure;
        }
    } else {
        cal = load_calibration(dir / "calibration");
    }

    RunOptions options{.out_dir = dir, .resume = resume, .stop_after = stop_after, .on_iteration = {}};
    const std::size_t report_every = std::max<std::size_t>(1, c.presentations / 20);
    double window_error = 0.0;
    std::size_t window_count = 0;
    options.on_iteration = [&](const IterationRecord& r) {
        window_error += r.target_error;
        ++window_count;
        if ((r.iteration + 1) % report_every == 0) {
            std::cout << "iteration " << r.iteration + 1 << "  target error " << window_error / window_count
                      << " Hz\n";
            window_error = 0.0;
            window_count = 0;
        }
    };
    const RunSummary s = run_experiment(c, cal, options);
    if (s.iterations < c.presentations) {
        std::cout << "stopped at iteration " << s.iterations << "; resume with --resume\n";
        return exit_ok;
    }
    std::cout << "test accuracy " << s.test.accuracy << ", target error " << s.test.target_error << " Hz ("
              << s.test.samples << " samples)\n"
              << "run written to " << dir.string() << '\n';
    return exit_ok;
}

int cmd_eval(const CommonOptions& o, const std::string& run_dir, const std::string& checkpoint) {
    auto run = load_run(run_dir, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint));
    const DatasetSplits data = make_splits(run.config.task, run.config.sizes, run.config.seed, run.config.encoding);
    const EvalReport r =
        evaluate(run.state, data.test, run.config, evaluation_seed(run.config.seed, run.config.presentations + 1));
    const fs::path dir = o.out.empty() ? fs::path(run_dir) : fs::path(o.out);
    prepare_out(dir);
    auto out = open_file(dir / "eval_report.txt");
    out << "iterations=" << run.state.iteration << '\n';
    write_eval_report(out, r);
    write_eval_report(std::cout, r);
    return exit_ok;
}

int cmd_export(const CommonOptions& o, bool dataset, const std::string& grid_run, std::size_t count,
               std::size_t grid_size) {
    const TrainingConfig c = resolve_config(o);
    const fs::path dir = resolve_out(o, "export", c);
    prepare_out(dir);
    if (dataset) {
        const auto examples = make_examples(c.task, count, c.seed, c.encoding);
        {
            auto out = open_file(dir / "dataset.tsv");
            write_dataset(out, examples);
        }
        auto manifest = open_file(dir / "dataset_manifest.txt");
        write_encoding_manifest(manifest, c.task, c.encoding, c.targets, c.seed, count);
    }
    if (!grid_run.empty()) {
        auto run = load_run(grid_run, std::nullopt);
        if (run.config.task != Task::yinyang) throw std::runtime_error("decision grids need a yinyang run");
        std::vector<RateVector> inputs;
        std::vector<std::pair<double, double>> points;
        for (std::size_t iy = 0; iy < grid_size; ++iy) {
            for (std::size_t ix = 0; ix < grid_size; ++ix) {
                const double x = (static_cast<double>(ix) + 0.5) / static_cast<double>(grid_size);
                const double y = (static_cast<double>(iy) + 0.5) / static_cast<double>(grid_size);
                points.emplace_back(x, y);
                inputs.push_back(encode_yinyang({x, y, YinYangClass::yin}, run.config.encoding));
            }
        }
        const auto predictions = predict(run.state, inputs, run.config, derive_seed(c.seed, 3, stream_purpose::dataset));
        auto out = open_file(dir / "decision_grid.tsv");
        out << "x\ty\tpredicted\ttrue\n";
        for (std::size_t k = 0; k < points.size(); ++k) {
            const auto [x, y] = points[k];
            int truth = -1; // outside the enclosing disk
            if (std::hypot(x - 0.5, y - 0.5) <= 0.5) truth = static_cast<int>(classify_point(x, y));
            out << x << '\t' << y << '\t' << predictions[k].label << '\t' << truth << '\n';
        }
        fs::copy_file(fs::path(grid_run) / "trajectory.tsv", dir / "trajectory.tsv",
                      fs::copy_options::overwrite_existing);
    }
    std::cout << "export written to " << dir.string() << '\n';
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spiking-network in-the-loop training on an emulated mixed-signal chip"};
    app.require_subcommand(1);

    CommonOptions common;

    auto* calibrate = app.add_subcommand("calibrate", "measure rate map, FF curves and controller fits");
    add_common(*calibrate, common);

    auto* train = app.add_subcommand("train", "in-the-loop training run");
    add_common(*train, common);
    std::string calibration_dir;
    bool resume = false;
    std::size_t stop_after = 0;
    train->add_option("--calibration", calibration_dir, "calibration directory from `sfc calibrate`")
        ->check(CLI::ExistingDirectory);
    train->add_flag("--resume", resume, "continue from the latest checkpoint in --out");
    train->add_option("--stop-after", stop_after, "stop (with a checkpoint) after N iterations");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test set");
    add_common(*eval, common);
    std::string run_dir, checkpoint;
    eval->add_option("--run", run_dir, "training run directory")->required()->check(CLI::ExistingDirectory);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file (default: latest in the run)")
        ->check(CLI::ExistingFile);

    auto* exp = app.add_subcommand("export", "write datasets and plot data");
    add_common(*exp, common);
    bool dataset = false;
    std::string grid_run;
    std::size_t count = 1000, grid_size = 100;
    exp->add_flag("--dataset", dataset, "write `x y label` rows plus an encoding manifest");
    exp->add_option("--count", count, "dataset size")->check(CLI::PositiveNumber);
    exp->add_option("--grid", grid_run, "yinyang run directory to sample a decision grid from")
        ->check(CLI::ExistingDirectory);
    exp->add_option("--grid-size", grid_size, "grid points per axis")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*calibrate) return cmd_calibrate(common);
        if (*train) return cmd_train(common, calibration_dir, resume, stop_after);
        if (*eval) return cmd_eval(common, run_dir, checkpoint);
        if (*exp) {
            if (!dataset && grid_run.empty()) {
                std::cerr << "export: nothing to do (use --dataset and/or --grid)\n";
                return exit_usage;
            }
            return cmd_export(common, dataset, grid_run, count, grid_size);
        }
    } catch (const calibration_error& e) {
        std::cerr << "calibration failed: " << e.what() << '\n';
        return exit_failure;
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    }
    return exit_usage;
}
