#include "sfc/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sfc/errors.hpp"
#include "sfc/random.hpp"

namespace sfc {

namespace {

double interpolate(double x, double x0, double y0, double x1, double y1) {
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
}

// Piecewise-linear lookup along (xs, ys) with linear extrapolation.
template <typename XOf, typename YOf>
double piecewise(std::span<const RateCorrectionMap::Knot> knots, double x, XOf xof, YOf yof) {
    std::size_t hi = 1;
    while (hi + 1 < knots.size() && x > xof(knots[hi])) ++hi;
    const auto& a = knots[hi - 1];
    const auto& b = knots[hi];
    return interpolate(x, xof(a), yof(a), xof(b), yof(b));
}

EmulatedNetwork recorder_bench(const ChipConfig& config, const MismatchModel& mismatch) {
    Topology t;
    const auto v = t.add_virtual();
    t.add_unit({.name = "recorder",
                .population = config.virtual_population,
                .kind = UnitKind::recorder,
                .recorder_source = v});
    return build_network(t, config, mismatch);
}

double recorded_rate(const EmulatedNetwork& bench, double requested, double window, std::size_t repeats,
                     std::uint64_t seed) {
    double total = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto s = derive_seed(seed, r, stream_purpose::presentation);
        const auto in = bench.stimulate(RateVector{requested}, window, s);
        total += bench.unit_rates(bench.run_window(in, window, s))[0];
    }
    return total / static_cast<double>(repeats);
}

// Poisson trains for every rate in `rates`, nested by thinning one train at
// the maximum rate: each event carries a uniform mark and survives at rate r
// iff mark < r / r_max.
std::vector<SpikeTrain> nested_trains(std::size_t channels, std::span<const double> rates, double window,
                                      std::uint64_t seed) {
    const double r_max = *std::max_element(rates.begin(), rates.end());
    std::vector<std::vector<SpikeEvent>> kept(rates.size());
    if (r_max > 0.0) {
        for (std::size_t c = 0; c < channels; ++c) {
            auto rng = make_stream(seed, c, stream_purpose::poisson);
            double t = exponential(rng, r_max);
            while (t < window) {
                const double mark = uniform01(rng);
                for (std::size_t i = 0; i < rates.size(); ++i)
                    if (mark < rates[i] / r_max) kept[i].push_back({t, static_cast<std::uint32_t>(c)});
                t += exponential(rng, r_max);
            }
        }
    }
    std::vector<SpikeTrain> out;
    for (auto& events : kept) out.emplace_back(channels, window, std::move(events));
    return out;
}

template <typename T>
void expect_key(std::istream& in, const std::string& key, T& value) {
    std::string line;
    while (std::getline(in, line) && line.empty()) {
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.substr(0, eq) != key)
        throw schema_error("expected key '" + key + "', got '" + line + "'");
    std::istringstream vs(line.substr(eq + 1));
    if (!(vs >> value)) throw schema_error("bad value for '" + key + "'");
}

} // namespace

// ---------------------------------------------------------------- rate map

RateCorrectionMap::RateCorrectionMap(std::vector<Knot> knots) : knots_(std::move(knots)) {
    if (knots_.size() < 2) throw std::invalid_argument("RateCorrectionMap: need at least two knots");
    for (std::size_t i = 0; i < knots_.size(); ++i) {
        if (!(knots_[i].second >= 0.0)) throw std::invalid_argument("RateCorrectionMap: negative measured rate");
        if (i > 0 && !(knots_[i].first > knots_[i - 1].first))
            throw std::invalid_argument("RateCorrectionMap: requested rates must be strictly increasing");
        if (i > 0 && !(knots_[i].second > knots_[i - 1].second))
            throw calibration_error("RateCorrectionMap: measured rates not strictly increasing at " +
                                    std::to_string(knots_[i].first) + " Hz; cannot invert");
    }
}

double RateCorrectionMap::measured_for(double requested) const {
    if (is_identity()) return requested;
    return std::max(0.0, piecewise(knots_, requested, [](const Knot& k) { return k.first; },
                                   [](const Knot& k) { return k.second; }));
}

double RateCorrectionMap::request_for(double desired) const {
    if (is_identity()) return desired;
    if (desired <= 0.0) return 0.0;
    return std::max(0.0, piecewise(knots_, desired, [](const Knot& k) { return k.second; },
                                   [](const Knot& k) { return k.first; }));
}

RateVector RateCorrectionMap::correct(const RateVector& desired) const {
    std::vector<double> out(desired.size());
    for (std::size_t i = 0; i < desired.size(); ++i) out[i] = request_for(desired[i]);
    return RateVector(std::move(out));
}

void write_rate_map(std::ostream& out, const RateCorrectionMap& map) {
    const auto old_precision = out.precision(17);
    out << "requested measured\n";
    for (const auto& [r, m] : map.knots()) out << r << ' ' << m << '\n';
    out.precision(old_precision);
}

RateCorrectionMap read_rate_map(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "requested measured") throw schema_error("rate map: missing header");
    std::vector<RateCorrectionMap::Knot> knots;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        double r = 0.0, m = 0.0;
        if (!(ls >> r >> m)) throw schema_error("rate map: malformed line '" + line + "'");
        knots.emplace_back(r, m);
    }
    if (knots.empty()) return {};
    return RateCorrectionMap(std::move(knots));
}

std::vector<double> measure_recorded_rates(const ChipConfig& config, const MismatchModel& mismatch,
                                           std::span<const double> requested, double window, std::size_t repeats,
                                           std::uint64_t seed) {
    if (repeats == 0) throw std::invalid_argument("measure_recorded_rates: repeats must be >= 1");
    const EmulatedNetwork bench = recorder_bench(config, mismatch);
    std::vector<double> out;
    for (std::size_t i = 0; i < requested.size(); ++i)
        out.push_back(recorded_rate(bench, requested[i], window, repeats, derive_seed(seed, i, stream_purpose::poisson)));
    return out;
}

RateCorrectionMap calibrate_rates(const ChipConfig& config, const MismatchModel& mismatch,
                                  std::span<const double> requested_grid, double window, std::size_t repeats,
                                  std::uint64_t seed) {
    for (double r : requested_grid)
        if (r < 0.0 || r > 200.0) throw std::invalid_argument("calibrate_rates: grid must lie within [0, 200] Hz");
    const auto measured = measure_recorded_rates(config, mismatch, requested_grid, window, repeats, seed);
    std::vector<RateCorrectionMap::Knot> knots;
    for (std::size_t i = 0; i < requested_grid.size(); ++i) knots.emplace_back(requested_grid[i], measured[i]);
    return RateCorrectionMap(std::move(knots));
}

RateCorrectionCheck check_rate_correction(const ChipConfig& config, const MismatchModel& mismatch,
                                          const RateCorrectionMap& map, std::span<const double> grid, double window,
                                          std::size_t repeats, std::uint64_t seed) {
    std::vector<double> corrected;
    for (double g : grid) corrected.push_back(map.request_for(g));
    // Same seeds for both passes so only the request differs.
    const auto raw = measure_recorded_rates(config, mismatch, grid, window, repeats, seed);
    const auto fixed = measure_recorded_rates(config, mismatch, corrected, window, repeats, seed);
    RateCorrectionCheck check;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        check.max_error_before = std::max(check.max_error_before, std::abs(raw[i] - grid[i]));
        check.max_error_after = std::max(check.max_error_after, std::abs(fixed[i] - grid[i]));
    }
    return check;
}

// ---------------------------------------------------------------- FF curves

std::vector<FFCurve> measure_ff_curves(const ChipConfig& config, const MismatchModel& mismatch,
                                       std::span<const int> weight_counts, std::span<const double> pre_grid,
                                       double window, std::size_t repeats, std::uint64_t seed) {
    if (pre_grid.empty()) throw std::invalid_argument("measure_ff_curves: empty rate grid");
    for (std::size_t i = 1; i < pre_grid.size(); ++i)
        if (!(pre_grid[i] > pre_grid[i - 1]))
            throw std::invalid_argument("measure_ff_curves: pre rates must be strictly increasing");
    if (repeats == 0) throw std::invalid_argument("measure_ff_curves: repeats must be >= 1");

    std::vector<std::vector<SpikeTrain>> stimuli;
    for (std::size_t r = 0; r < repeats; ++r)
        stimuli.push_back(nested_trains(config.virtual_population, pre_grid, window,
                                        derive_seed(seed, r, stream_purpose::presentation)));

    std::vector<FFCurve> curves;
    for (int count : weight_counts) {
        Topology t;
        const auto v = t.add_virtual();
        const auto post = t.add_unit({.name = "post", .population = config.population});
        if (count != 0) t.connect(virtual_node(v), post, count);
        const EmulatedNetwork bench = build_network(t, config, mismatch);

        FFCurve curve{count, {}};
        for (std::size_t i = 0; i < pre_grid.size(); ++i) {
            double total = 0.0;
            for (std::size_t r = 0; r < repeats; ++r)
                total += bench.unit_rates(bench.run_window(stimuli[r][i], window, seed))[post];
            curve.points.emplace_back(pre_grid[i], total / static_cast<double>(repeats));
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

void write_ff_curves(std::ostream& out, std::span<const FFCurve> curves) {
    out << "weight_count pre_rate post_rate\n";
    for (const auto& c : curves)
        for (const auto& [pre, post] : c.points) out << c.weight_count << ' ' << pre << ' ' << post << '\n';
}

// ---------------------------------------------------------------- controller

LinearFit fit_line(std::span<const std::pair<double, double>> points) {
    if (points.size() < 2) throw std::invalid_argument("fit_line: need at least two points");
    const double n = static_cast<double>(points.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : points) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [x, y] : points) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("fit_line: x values are all equal");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? 0.0 : std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0);
    return fit;
}

ControllerCalibration measure_controller(const EmulatedNetwork& network, const ControllerPair& pair,
                                         const ControllerGains& gains, std::span<const double> error_grid,
                                         double window, std::size_t repeats, std::uint64_t seed,
                                         double reference_rate) {
    if (repeats == 0) throw std::invalid_argument("measure_controller: repeats must be >= 1");
    const auto& pos_unit = network.unit(pair.positive_unit);
    const auto& neg_unit = network.unit(pair.negative_unit);

    Topology t;
    const auto target = t.add_virtual();
    const auto output = t.add_virtual();
    const auto pos = t.add_unit({.name = pos_unit.spec.name,
                                 .population = pos_unit.population(),
                                 .core = pos_unit.core,
                                 .bias_current = gains.positive_bias(),
                                 .mismatch_key = pos_unit.spec.mismatch_key.value_or(pair.positive_unit)});
    const auto neg = t.add_unit({.name = neg_unit.spec.name,
                                 .population = neg_unit.population(),
                                 .core = neg_unit.core,
                                 .bias_current = gains.negative_bias(),
                                 .mismatch_key = neg_unit.spec.mismatch_key.value_or(pair.negative_unit)});
    t.connect(virtual_node(target), pos, +gains.target_to_pos);
    t.connect(virtual_node(output), pos, -gains.output_to_pos);
    t.connect(virtual_node(output), neg, +gains.output_to_neg);
    t.connect(virtual_node(target), neg, -gains.target_to_neg);
    ChipConfig config = network.config();
    config.generator = {};
    const EmulatedNetwork bench = build_network(t, config, network.mismatch());

    ControllerCalibration cal;
    cal.gains = gains;
    for (std::size_t i = 0; i < error_grid.size(); ++i) {
        const double e = error_grid[i];
        const double out_rate = reference_rate + e;
        if (out_rate < 0.0) throw std::invalid_argument("measure_controller: error grid drives the output below 0 Hz");
        double fb = 0.0;
        for (std::size_t r = 0; r < repeats; ++r) {
            const auto s = derive_seed(seed, i * repeats + r, stream_purpose::presentation);
            const auto in = bench.stimulate(RateVector{reference_rate, out_rate}, window, s);
            const auto rates = bench.unit_rates(bench.run_window(in, window, s));
            fb += rates[pos] - rates[neg];
        }
        cal.points.emplace_back(e, fb / static_cast<double>(repeats));
    }
    const LinearFit fit = fit_line(cal.points);
    cal.slope = fit.slope;
    cal.intercept = fit.intercept;
    cal.r_squared = fit.r_squared;
    cal.kappa = fit.slope != 0.0 ? 1.0 / std::abs(fit.slope) : 0.0;
    return cal;
}

namespace {

bool accepted(const ControllerCalibration& c, const ControllerTuning& tuning) {
    return c.corrective() && c.r_squared >= tuning.min_r_squared;
}

// Accepted fits rank by distance from the configured gains on the log
// scale, so a working configuration is kept as is; rejected fits rank behind
// them by R^2.
std::pair<int, double> tuning_rank(const ControllerCalibration& c, double scale, const ControllerTuning& tuning) {
    if (accepted(c, tuning)) return {0, std::abs(std::log(scale))};
    return {c.corrective() ? 1 : 2, -c.r_squared};
}

// The intercept rises monotonically with the trim (more drive on the
// positive unit), so secant steps converge in a few measurements.
ControllerCalibration trim_bias(const EmulatedNetwork& network, const ControllerPair& pair, ControllerCalibration best,
                                std::span<const double> error_grid, double window, std::size_t repeats,
                                std::uint64_t seed, const ControllerTuning& tuning) {
    double t0 = best.gains.bias_trim, b0 = best.intercept;
    if (std::abs(b0) <= tuning.intercept_tolerance) return best;
    double t1 = std::clamp(t0 - std::copysign(tuning.trim_step, b0), -tuning.trim_limit, tuning.trim_limit);
    for (std::size_t it = 0; it < tuning.trim_iterations; ++it) {
        ControllerGains g = best.gains;
        g.bias_trim = t1;
        auto cal = measure_controller(network, pair, g, error_grid, window, repeats, seed, tuning.reference_rate);
        const double b1 = cal.intercept;
        if (accepted(cal, tuning) && std::abs(b1) < std::abs(best.intercept)) best = std::move(cal);
        if (std::abs(best.intercept) <= tuning.intercept_tolerance || b1 == b0) break;
        const double next = std::clamp(t1 - b1 * (t1 - t0) / (b1 - b0), -tuning.trim_limit, tuning.trim_limit);
        t0 = t1;
        b0 = b1;
        t1 = next;
        if (t1 == t0) break;
    }
    return best;
}

} // namespace

ControllerCalibration search_controller_gains(const EmulatedNetwork& network, const ControllerPair& pair,
                                              std::span<const double> error_grid, double window,
                                              std::size_t repeats, std::uint64_t seed,
                                              const ControllerTuning& tuning) {
    bool has_neg = false, has_pos = false;
    for (double e : error_grid) {
        has_neg |= e < 0.0;
        has_pos |= e > 0.0;
    }
    if (!has_neg || !has_pos) throw std::invalid_argument("tune_controller: error grid must span both signs");
    if (tuning.grid_size == 0 || !(tuning.gain_low > 0.0) || !(tuning.gain_high >= tuning.gain_low))
        throw std::invalid_argument("tune_controller: invalid gain grid");

    // Both output gains scale together; independent pos/neg gains fit the
    // sweep noise and bias the loop.
    std::vector<double> scales{1.0};
    for (std::size_t i = 0; i < tuning.grid_size; ++i) {
        const double frac = tuning.grid_size == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(tuning.grid_size - 1);
        scales.push_back(tuning.gain_low * std::pow(tuning.gain_high / tuning.gain_low, frac));
    }
    const int fan_in = network.config().limits.fan_in_limit;

    ControllerCalibration best;
    std::pair<int, double> best_rank{};
    bool have = false;
    std::vector<std::pair<int, int>> seen;
    for (double scale : scales) {
        ControllerGains g = pair.gains;
        g.output_to_pos = std::max(1, static_cast<int>(std::lround(pair.gains.output_to_pos * scale)));
        g.output_to_neg = std::max(1, static_cast<int>(std::lround(pair.gains.output_to_neg * scale)));
        if (std::find(seen.begin(), seen.end(), std::pair{g.output_to_pos, g.output_to_neg}) != seen.end()) continue;
        seen.emplace_back(g.output_to_pos, g.output_to_neg);
        if (g.target_to_pos + g.output_to_pos > fan_in || g.target_to_neg + g.output_to_neg > fan_in) continue;
        // Every setting sees the same stimuli.
        auto cal = measure_controller(network, pair, g, error_grid, window, repeats, seed, tuning.reference_rate);
        const auto rank = tuning_rank(cal, scale, tuning);
        if (!have || rank < best_rank) {
            best = std::move(cal);
            best_rank = rank;
            have = true;
        }
        // The configured gains are accepted; nothing can rank ahead of them.
        if (scale == 1.0 && rank.first == 0) break;
    }
    if (!have) throw calibration_error("tune_controller: no gain setting fits the fan-in budget");
    if (best_rank.first == 0) best = trim_bias(network, pair, std::move(best), error_grid, window, repeats, seed, tuning);
    return best;
}

ControllerCalibration tune_controller(const EmulatedNetwork& network, const ControllerPair& pair,
                                      std::span<const double> error_grid, double window, std::size_t repeats,
                                      std::uint64_t seed, const ControllerTuning& tuning) {
    auto best = search_controller_gains(network, pair, error_grid, window, repeats, seed, tuning);
    if (!best.corrective() || best.r_squared < tuning.min_r_squared) {
        std::ostringstream msg;
        msg << "tune_controller: best fit R^2=" << best.r_squared << " slope=" << best.slope
            << " (output gains " << best.gains.output_to_pos << "/" << best.gains.output_to_neg
            << ") does not reach R^2 >= " << tuning.min_r_squared << " with a corrective slope";
        throw calibration_error(msg.str());
    }
    return best;
}

void write_controller_calibration(std::ostream& out, const ControllerCalibration& c) {
    const auto old_precision = out.precision(17);
    out << "format=sfc-controller-calibration-1\n"
        << "target_to_pos=" << c.gains.target_to_pos << '\n'
        << "output_to_pos=" << c.gains.output_to_pos << '\n'
        << "target_to_neg=" << c.gains.target_to_neg << '\n'
        << "output_to_neg=" << c.gains.output_to_neg << '\n'
        << "pos_to_output=" << c.gains.pos_to_output << '\n'
        << "neg_to_output=" << c.gains.neg_to_output << '\n'
        << "bias_current=" << c.gains.bias_current << '\n'
        << "bias_trim=" << c.gains.bias_trim << '\n'
        << "slope=" << c.slope << '\n'
        << "intercept=" << c.intercept << '\n'
        << "r_squared=" << c.r_squared << '\n'
        << "kappa=" << c.kappa << '\n'
        << "points=" << c.points.size() << '\n';
    for (const auto& [e, fb] : c.points) out << e << ' ' << fb << '\n';
    out.precision(old_precision);
}

ControllerCalibration read_controller_calibration(std::istream& in) {
    std::string format;
    expect_key(in, "format", format);
    if (format != "sfc-controller-calibration-1") throw schema_error("controller calibration: unknown format " + format);
    ControllerCalibration c;
    expect_key(in, "target_to_pos", c.gains.target_to_pos);
    expect_key(in, "output_to_pos", c.gains.output_to_pos);
    expect_key(in, "target_to_neg", c.gains.target_to_neg);
    expect_key(in, "output_to_neg", c.gains.output_to_neg);
    expect_key(in, "pos_to_output", c.gains.pos_to_output);
    expect_key(in, "neg_to_output", c.gains.neg_to_output);
    expect_key(in, "bias_current", c.gains.bias_current);
    expect_key(in, "bias_trim", c.gains.bias_trim);
    expect_key(in, "slope", c.slope);
    expect_key(in, "intercept", c.intercept);
    expect_key(in, "r_squared", c.r_squared);
    expect_key(in, "kappa", c.kappa);
    std::size_t n = 0;
    expect_key(in, "points", n);
    for (std::size_t i = 0; i < n; ++i) {
        double e = 0.0, fb = 0.0;
        if (!(in >> e >> fb)) throw schema_error("controller calibration: truncated points");
        c.points.emplace_back(e, fb);
    }
    return c;
}

} // namespace sfc
