#include "sfc/tasks.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "sfc/random.hpp"

namespace sfc {

namespace {

// Fisher-Yates on the portable uniform sampler.
template <typename T>
void shuffle(std::vector<T>& items, std::uint64_t seed) {
    auto rng = make_stream(seed, 0, stream_purpose::shuffle);
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
        std::swap(items[i - 1], items[j]);
    }
}

bool inside_disk(double x, double y, const YinYangGeometry& g) {
    return std::hypot(x - g.r_big, y - g.r_big) <= g.r_big;
}

} // namespace

std::string_view to_string(Task task) noexcept {
    return task == Task::binary ? "binary" : "yinyang";
}

Task parse_task(std::string_view name) {
    if (name == "binary") return Task::binary;
    if (name == "yinyang") return Task::yinyang;
    throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected binary or yinyang)");
}

std::size_t input_count(Task task) noexcept { return task == Task::binary ? 2 : 4; }
std::size_t class_count(Task task) noexcept { return task == Task::binary ? 2 : 3; }

std::vector<BinarySample> generate_binary(std::size_t count, std::uint64_t seed, const BinaryRates& rates) {
    if (count == 0) throw std::invalid_argument("generate_binary: count must be positive");
    if (!(rates.high > rates.low) || rates.low < 0.0)
        throw std::invalid_argument("generate_binary: need high > low >= 0");
    std::vector<BinarySample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const bool a = i % 2 == 0;
        out.push_back({a ? BinaryClass::a : BinaryClass::b,
                       a ? RateVector{rates.high, rates.low} : RateVector{rates.low, rates.high}});
    }
    shuffle(out, seed);
    return out;
}

std::string_view to_string(YinYangClass c) noexcept {
    switch (c) {
    case YinYangClass::yin: return "yin";
    case YinYangClass::yang: return "yang";
    case YinYangClass::dot: return "dot";
    }
    return "?";
}

void YinYangGeometry::validate() const {
    if (!(r_big > 0.0) || !(r_small > 0.0) || !(r_small < 0.5 * r_big))
        throw std::invalid_argument("YinYangGeometry: need 0 < r_small < r_big / 2");
}

YinYangClass classify_point(double x, double y, const YinYangGeometry& g) {
    if (!inside_disk(x, y, g)) throw std::domain_error("classify_point: point outside the enclosing disk");
    // The reference formulation has its dots left and right of the centre;
    // rotate by a quarter turn so they sit above and below.
    const double xr = y;
    const double yr = 2.0 * g.r_big - x;
    const double d_right = std::hypot(xr - 1.5 * g.r_big, yr - g.r_big);
    const double d_left = std::hypot(xr - 0.5 * g.r_big, yr - g.r_big);
    if (d_right < g.r_small || d_left < g.r_small) return YinYangClass::dot;
    const bool c1 = d_right <= g.r_small;
    const bool c2 = d_left > g.r_small && d_left <= 0.5 * g.r_big;
    const bool c3 = yr > g.r_big && d_right > 0.5 * g.r_big;
    return (c1 || c2 || c3) ? YinYangClass::yin : YinYangClass::yang;
}

std::vector<YinYangSample> generate_yinyang(std::size_t count, std::uint64_t seed, const YinYangGeometry& g) {
    if (count == 0) throw std::invalid_argument("generate_yinyang: count must be positive");
    g.validate();
    std::vector<YinYangSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto want = static_cast<YinYangClass>(i % 3);
        auto rng = make_stream(seed, i, stream_purpose::dataset);
        for (;;) {
            const double x = uniform01(rng) * 2.0 * g.r_big;
            const double y = uniform01(rng) * 2.0 * g.r_big;
            if (!inside_disk(x, y, g)) continue;
            if (classify_point(x, y, g) != want) continue;
            out.push_back({x, y, want});
            break;
        }
    }
    shuffle(out, seed);
    return out;
}

RateVector encode_yinyang(const YinYangSample& s, const RateRange& range) {
    if (!(range.max > range.min) || range.min < 0.0)
        throw std::invalid_argument("encode_yinyang: need max > min >= 0");
    std::vector<double> rates;
    for (double f : s.features()) rates.push_back(range.min + (range.max - range.min) * f);
    return RateVector(std::move(rates));
}

void TargetSpec::validate() const {
    if (!(high_rate > low_rate) || !(low_rate >= 0.0))
        throw std::invalid_argument("TargetSpec: need high_rate > low_rate >= 0");
}

RateVector target_rates(std::size_t label, std::size_t classes, const TargetSpec& spec) {
    spec.validate();
    if (label >= classes) throw std::invalid_argument("target_rates: label out of range");
    std::vector<double> rates(classes, spec.low_rate);
    rates[label] = spec.high_rate;
    return RateVector(std::move(rates));
}

SpikeTrain target_train(std::size_t label, std::size_t classes, const TargetSpec& spec, double window,
                        std::uint64_t seed) {
    return poisson_generate(target_rates(label, classes, spec), window, seed);
}

std::vector<Example> make_examples(Task task, std::size_t count, std::uint64_t seed, const RateRange& encoding) {
    std::vector<Example> out;
    out.reserve(count);
    if (task == Task::binary) {
        for (auto& s : generate_binary(count, seed))
            out.push_back({s.rates, static_cast<std::size_t>(s.label), s.rates[0], s.rates[1]});
    } else {
        for (const auto& s : generate_yinyang(count, seed))
            out.push_back({encode_yinyang(s, encoding), static_cast<std::size_t>(s.label), s.x, s.y});
    }
    return out;
}

DatasetSplits make_splits(Task task, const DatasetSizes& sizes, std::uint64_t seed, const RateRange& encoding) {
    DatasetSplits s;
    if (sizes.train > 0)
        s.train = make_examples(task, sizes.train, derive_seed(seed, 0, stream_purpose::dataset), encoding);
    if (sizes.validation > 0)
        s.validation = make_examples(task, sizes.validation, derive_seed(seed, 1, stream_purpose::dataset), encoding);
    if (sizes.test > 0)
        s.test = make_examples(task, sizes.test, derive_seed(seed, 2, stream_purpose::dataset), encoding);
    return s;
}

void write_dataset(std::ostream& out, std::span<const Example> examples) {
    const auto old_precision = out.precision(17);
    out << "x y label\n";
    for (const auto& e : examples) out << e.x << ' ' << e.y << ' ' << e.label << '\n';
    out.precision(old_precision);
}

void write_encoding_manifest(std::ostream& out, Task task, const RateRange& encoding, const TargetSpec& targets,
                             std::uint64_t seed, std::size_t count) {
    out << "task=" << to_string(task) << '\n' << "seed=" << seed << '\n' << "count=" << count << '\n';
    if (task == Task::binary) {
        const BinaryRates r{};
        out << "columns=rate0 rate1 label\n"
            << "rate_high=" << r.high << '\n'
            << "rate_low=" << r.low << '\n'
            << "labels=0:A 1:B\n";
    } else {
        const YinYangGeometry g{};
        out << "columns=x y label\n"
            << "features=x y 1-x 1-y\n"
            << "rate_min=" << encoding.min << '\n'
            << "rate_max=" << encoding.max << '\n'
            << "r_big=" << g.r_big << '\n'
            << "r_small=" << g.r_small << '\n'
            << "labels=0:yin 1:yang 2:dot\n";
    }
    out << "target_high=" << targets.high_rate << '\n' << "target_low=" << targets.low_rate << '\n';
}

} // namespace sfc
