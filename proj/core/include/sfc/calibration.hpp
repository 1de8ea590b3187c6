#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "sfc/chip.hpp"
#include "sfc/controller.hpp"

namespace sfc {

// Measured generator transfer, (requested Hz, measured Hz) knots with
// piecewise-linear interpolation. An empty map is the identity.
class RateCorrectionMap {
public:
    using Knot = std::pair<double, double>;

    RateCorrectionMap() = default;
    explicit RateCorrectionMap(std::vector<Knot> knots);

    std::span<const Knot> knots() const noexcept { return knots_; }
    bool is_identity() const noexcept { return knots_.empty(); }

    // Expected measured rate for a request.
    double measured_for(double requested) const;
    // Request that should produce `desired` on chip. Linear extrapolation
    // beyond the outer knots; never negative.
    double request_for(double desired) const;
    RateVector correct(const RateVector& desired) const;

private:
    std::vector<Knot> knots_;
};

void write_rate_map(std::ostream& out, const RateCorrectionMap& map);
RateCorrectionMap read_rate_map(std::istream& in);

// Measured rate of a recorder unit relaying one virtual channel at each
// requested rate, averaged over `repeats` windows.
std::vector<double> measure_recorded_rates(const ChipConfig& config, const MismatchModel& mismatch,
                                           std::span<const double> requested, double window, std::size_t repeats,
                                           std::uint64_t seed);

// Builds the correction map from recorder measurements. Throws
// calibration_error when the measured curve is not strictly increasing.
RateCorrectionMap calibrate_rates(const ChipConfig& config, const MismatchModel& mismatch,
                                  std::span<const double> requested_grid, double window, std::size_t repeats,
                                  std::uint64_t seed);

struct RateCorrectionCheck {
    double max_error_before = 0.0; // max |measured - requested| with raw requests
    double max_error_after = 0.0;  // same, requesting through the map
};

RateCorrectionCheck check_rate_correction(const ChipConfig& config, const MismatchModel& mismatch,
                                          const RateCorrectionMap& map, std::span<const double> grid, double window,
                                          std::size_t repeats, std::uint64_t seed);

struct FFCurve {
    int weight_count = 0;
    std::vector<std::pair<double, double>> points; // (pre Hz, post Hz)
};

// Frequency-frequency transfer of a single excitatory projection from a
// virtual channel to one unit, for each weight count. All curves share the
// same devices and nested stimuli: trains at lower rates are thinned subsets
// of the train at the highest rate.
std::vector<FFCurve> measure_ff_curves(const ChipConfig& config, const MismatchModel& mismatch,
                                       std::span<const int> weight_counts, std::span<const double> pre_grid,
                                       double window, std::size_t repeats, std::uint64_t seed);

void write_ff_curves(std::ostream& out, std::span<const FFCurve> curves);

struct ControllerCalibration {
    ControllerGains gains{};
    double slope = 0.0;     // Hz of r+ - r- per Hz of (output - target)
    double intercept = 0.0; // Hz
    double r_squared = 0.0;
    double kappa = 1.0;     // 1 / |slope|
    std::vector<std::pair<double, double>> points; // (error Hz, mean r+ - r- Hz)

    bool corrective() const noexcept { return slope < 0.0; }
};

struct ControllerTuning {
    std::size_t grid_size = 8;    // scale factors tried after the configured gains
    double gain_low = 0.5;        // scales span [low, high] x configured output gains
    double gain_high = 2.0;
    double reference_rate = 20.0; // target rate during the sweep, Hz
    double min_r_squared = 0.95;
    // Bias trim search on the accepted gains: secant steps on the fitted
    // intercept, stopping once |intercept| is within tolerance (Hz).
    double intercept_tolerance = 0.5;
    double trim_step = 0.02;
    double trim_limit = 0.2;
    std::size_t trim_iterations = 6;
};

// Open-loop measurement of the pair: the output unit is replaced by a
// virtual channel at reference + error while the target channel sits at the
// reference rate. The controller units reuse the devices of `pair`.
ControllerCalibration measure_controller(const EmulatedNetwork& network, const ControllerPair& pair,
                                         const ControllerGains& gains, std::span<const double> error_grid,
                                         double window, std::size_t repeats, std::uint64_t seed,
                                         double reference_rate = 20.0);

// Tries the configured gains, then both output->controller gains scaled
// together over a log grid. Among settings with a corrective slope and
// R^2 >= min_r_squared, returns the one closest to the configured gains;
// otherwise the best R^2. An accepted setting then gets its bias trim tuned
// toward a zero intercept.
ControllerCalibration search_controller_gains(const EmulatedNetwork& network, const ControllerPair& pair,
                                              std::span<const double> error_grid, double window,
                                              std::size_t repeats, std::uint64_t seed,
                                              const ControllerTuning& tuning = {});

// search_controller_gains plus acceptance; throws calibration_error with the
// best-found fit when R^2 or the slope sign is not acceptable.
ControllerCalibration tune_controller(const EmulatedNetwork& network, const ControllerPair& pair,
                                      std::span<const double> error_grid, double window, std::size_t repeats,
                                      std::uint64_t seed, const ControllerTuning& tuning = {});

void write_controller_calibration(std::ostream& out, const ControllerCalibration& c);
ControllerCalibration read_controller_calibration(std::istream& in);

// Ordinary least squares y = slope * x + intercept.
struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};
LinearFit fit_line(std::span<const std::pair<double, double>> points);

} // namespace sfc
