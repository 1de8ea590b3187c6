#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfc/spike_train.hpp"

namespace sfc {

enum class Task { binary, yinyang };

std::string_view to_string(Task task) noexcept;
Task parse_task(std::string_view name); // throws std::invalid_argument

std::size_t input_count(Task task) noexcept;
std::size_t class_count(Task task) noexcept;

// ---------------------------------------------------------------- binary

enum class BinaryClass : std::uint8_t { a = 0, b = 1 };

struct BinaryRates {
    double high = 50.0;
    double low = 5.0;
};

struct BinarySample {
    BinaryClass label = BinaryClass::a;
    RateVector rates;
};

// Balanced (class i % 2 for sample i) and shuffled per seed.
std::vector<BinarySample> generate_binary(std::size_t count, std::uint64_t seed, const BinaryRates& rates = {});

// ---------------------------------------------------------------- Yin-Yang

enum class YinYangClass : std::uint8_t { yin = 0, yang = 1, dot = 2 };

std::string_view to_string(YinYangClass c) noexcept;

// Enclosing disk of radius r_big centred at (r_big, r_big); the small dots
// have radius r_small and sit above and below the centre.
struct YinYangGeometry {
    double r_big = 0.5;
    double r_small = 0.1;

    void validate() const;
};

// Throws std::domain_error for points outside the enclosing disk.
YinYangClass classify_point(double x, double y, const YinYangGeometry& geometry = {});

struct YinYangSample {
    double x = 0.0;
    double y = 0.0;
    YinYangClass label = YinYangClass::yin;

    std::array<double, 4> features() const noexcept { return {x, y, 1.0 - x, 1.0 - y}; }
};

// Uniform on the enclosing disk, stratified so sample i belongs to class
// i % 3, then shuffled. Each sample draws from its own (seed, i) stream.
std::vector<YinYangSample> generate_yinyang(std::size_t count, std::uint64_t seed,
                                            const YinYangGeometry& geometry = {});

struct RateRange {
    double min = 20.0;
    double max = 100.0;
};

// rate_i = min + (max - min) * f_i for f = (x, y, 1 - x, 1 - y).
RateVector encode_yinyang(const YinYangSample& sample, const RateRange& range = {});

// ---------------------------------------------------------------- targets

struct TargetSpec {
    double high_rate = 20.0;
    double low_rate = 2.0;

    void validate() const;
};

RateVector target_rates(std::size_t label, std::size_t classes, const TargetSpec& spec);
SpikeTrain target_train(std::size_t label, std::size_t classes, const TargetSpec& spec, double window,
                        std::uint64_t seed);

// ---------------------------------------------------------------- datasets

// Task-agnostic view used by the trainer.
struct Example {
    RateVector rates;
    std::size_t label = 0;
    double x = 0.0; // raw coordinates (Yin-Yang) or input rates (binary)
    double y = 0.0;
};

struct DatasetSizes {
    std::size_t train = 10000;
    std::size_t validation = 1000;
    std::size_t test = 1000;
};

struct DatasetSplits {
    std::vector<Example> train;
    std::vector<Example> validation;
    std::vector<Example> test;
};

std::vector<Example> make_examples(Task task, std::size_t count, std::uint64_t seed,
                                   const RateRange& encoding = {});

// Splits use independent streams derived from `seed`.
DatasetSplits make_splits(Task task, const DatasetSizes& sizes, std::uint64_t seed,
                          const RateRange& encoding = {});

// `x y label` rows with a header.
void write_dataset(std::ostream& out, std::span<const Example> examples);
void write_encoding_manifest(std::ostream& out, Task task, const RateRange& encoding, const TargetSpec& targets,
                             std::uint64_t seed, std::size_t count);

} // namespace sfc
