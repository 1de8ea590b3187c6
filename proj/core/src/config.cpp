#include "sfc/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "sfc/errors.hpp"

namespace sfc {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string format(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw schema_error("config: '" + key + "' expects a number, got '" + v + "'");
    return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
    Int out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size())
        throw schema_error("config: '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw schema_error("config: '" + key + "' expects true/false, got '" + v + "'");
}

struct Field {
    std::function<std::string(const TrainingConfig&)> get;
    std::function<void(TrainingConfig&, const std::string& key, const std::string& value)> set;
};

template <typename Access>
Field real_field(Access access) {
    return {[access](const TrainingConfig& c) { return format(access(c)); },
            [access](TrainingConfig& c, const std::string& k, const std::string& v) { access(c) = to_double(k, v); }};
}

template <typename Int, typename Access>
Field int_field(Access access) {
    return {[access](const TrainingConfig& c) { return std::to_string(access(c)); },
            [access](TrainingConfig& c, const std::string& k, const std::string& v) { access(c) = to_int<Int>(k, v); }};
}

template <typename Access>
Field bool_field(Access access) {
    return {[access](const TrainingConfig& c) { return std::string(access(c) ? "true" : "false"); },
            [access](TrainingConfig& c, const std::string& k, const std::string& v) { access(c) = to_bool(k, v); }};
}

// Neuron parameters apply to every core.
template <typename Member>
Field neuron_field(Member member) {
    return {[member](const TrainingConfig& c) { return format(c.chip.core_params[0].*member); },
            [member](TrainingConfig& c, const std::string& k, const std::string& v) {
                const double x = to_double(k, v);
                for (auto& p : c.chip.core_params) p.*member = x;
            }};
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = [] {
        std::map<std::string, Field> f;
        f["task"] = {[](const TrainingConfig& c) { return std::string(to_string(c.task)); },
                     [](TrainingConfig& c, const std::string&, const std::string& v) { c.task = parse_task(v); }};
        f["rule"] = {[](const TrainingConfig& c) { return std::string(to_string(c.rule)); },
                     [](TrainingConfig& c, const std::string&, const std::string& v) { c.rule = parse_rule(v); }};
        f["init"] = {[](const TrainingConfig& c) { return std::string(to_string(c.init)); },
                     [](TrainingConfig& c, const std::string&, const std::string& v) { c.init = parse_init_mode(v); }};
        f["window"] = real_field([](auto& c) -> auto& { return c.window; });
        f["learning_rate"] = real_field([](auto& c) -> auto& { return c.learning_rate; });
        f["w_max"] = real_field([](auto& c) -> auto& { return c.w_max; });
        f["max_magnitude"] = int_field<int>([](auto& c) -> auto& { return c.max_magnitude; });
        f["init_value"] = real_field([](auto& c) -> auto& { return c.init_value; });
        f["init_sigma"] = real_field([](auto& c) -> auto& { return c.init_sigma; });
        f["clip_shadow"] = bool_field([](auto& c) -> auto& { return c.clip_shadow; });
        f["error_feedback"] = bool_field([](auto& c) -> auto& { return c.error_feedback; });
        f["tau_in"] = real_field([](auto& c) -> auto& { return c.tau_in; });
        f["tau_fb"] = real_field([](auto& c) -> auto& { return c.tau_fb; });
        f["presentations"] = int_field<std::size_t>([](auto& c) -> auto& { return c.presentations; });
        f["eval_every"] = int_field<std::size_t>([](auto& c) -> auto& { return c.eval_every; });
        f["checkpoint_every"] =
            int_field<std::size_t>([](auto& c) -> auto& { return c.checkpoint_every; });
        f["train_size"] = int_field<std::size_t>([](auto& c) -> auto& { return c.sizes.train; });
        f["validation_size"] =
            int_field<std::size_t>([](auto& c) -> auto& { return c.sizes.validation; });
        f["test_size"] = int_field<std::size_t>([](auto& c) -> auto& { return c.sizes.test; });
        f["rate_min"] = real_field([](auto& c) -> auto& { return c.encoding.min; });
        f["rate_max"] = real_field([](auto& c) -> auto& { return c.encoding.max; });
        f["target_high"] = real_field([](auto& c) -> auto& { return c.targets.high_rate; });
        f["target_low"] = real_field([](auto& c) -> auto& { return c.targets.low_rate; });
        f["seed"] = int_field<std::uint64_t>([](auto& c) -> auto& { return c.seed; });
        f["population"] = int_field<std::size_t>([](auto& c) -> auto& { return c.chip.population; });
        f["virtual_population"] =
            int_field<std::size_t>([](auto& c) -> auto& { return c.chip.virtual_population; });
        f["unit_weight_current"] = real_field([](auto& c) -> auto& { return c.chip.unit_weight_current; });
        f["tau_syn"] = real_field([](auto& c) -> auto& { return c.chip.tau_syn; });
        f["dt"] = real_field([](auto& c) -> auto& { return c.chip.dt; });
        f["generators_per_member"] =
            int_field<std::size_t>([](auto& c) -> auto& { return c.chip.generators_per_member; });
        f["member_routed_inputs"] = bool_field([](auto& c) -> auto& { return c.chip.member_routed_inputs; });
        f["membrane_noise"] = real_field([](auto& c) -> auto& { return c.chip.membrane_noise; });
        f["generator_gain"] = real_field([](auto& c) -> auto& { return c.chip.generator.gain; });
        f["generator_offset"] = real_field([](auto& c) -> auto& { return c.chip.generator.offset; });
        f["mismatch_sigma"] = real_field([](auto& c) -> auto& { return c.mismatch.relative_sigma; });
        f["mismatch_seed"] = int_field<std::uint64_t>([](auto& c) -> auto& { return c.mismatch.seed; });
        f["neuron_tau"] = neuron_field(&AdexpParams::tau);
        f["neuron_i_gain"] = neuron_field(&AdexpParams::i_gain);
        f["neuron_i_tau"] = neuron_field(&AdexpParams::i_tau);
        f["neuron_i_a"] = neuron_field(&AdexpParams::i_a);
        f["neuron_threshold"] = neuron_field(&AdexpParams::spike_threshold);
        f["neuron_reset"] = neuron_field(&AdexpParams::reset_current);
        f["neuron_refractory"] = neuron_field(&AdexpParams::refractory);
        f["ctrl_target_to_pos"] = int_field<int>([](auto& c) -> auto& { return c.controller.target_to_pos; });
        f["ctrl_output_to_pos"] = int_field<int>([](auto& c) -> auto& { return c.controller.output_to_pos; });
        f["ctrl_target_to_neg"] = int_field<int>([](auto& c) -> auto& { return c.controller.target_to_neg; });
        f["ctrl_output_to_neg"] = int_field<int>([](auto& c) -> auto& { return c.controller.output_to_neg; });
        f["ctrl_pos_to_output"] = int_field<int>([](auto& c) -> auto& { return c.controller.pos_to_output; });
        f["ctrl_neg_to_output"] = int_field<int>([](auto& c) -> auto& { return c.controller.neg_to_output; });
        f["ctrl_bias"] = real_field([](auto& c) -> auto& { return c.controller.bias_current; });
        f["ctrl_bias_trim"] = real_field([](auto& c) -> auto& { return c.controller.bias_trim; });
        return f;
    }();
    return table;
}

} // namespace

KeyValues parse_key_values(std::istream& in) {
    KeyValues out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw schema_error("config line " + std::to_string(number) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw schema_error("config line " + std::to_string(number) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

KeyValues load_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path.string());
    return parse_key_values(in);
}

void write_key_values(std::ostream& out, const KeyValues& values) {
    for (const auto& [k, v] : values) out << k << " = " << v << '\n';
}

void apply_config(TrainingConfig& config, const KeyValues& values) {
    const auto& table = fields();
    for (const auto& [key, value] : values) {
        const auto it = table.find(key);
        if (it == table.end()) throw schema_error("config: unknown key '" + key + "'");
        try {
            it->second.set(config, key, value);
        } catch (const std::invalid_argument& e) {
            throw schema_error("config: '" + key + "': " + e.what());
        }
    }
}

KeyValues to_key_values(const TrainingConfig& config) {
    KeyValues out;
    for (const auto& [key, field] : fields()) out[key] = field.get(config);
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [key, field] : fields()) keys.push_back(key);
    return keys;
}

} // namespace sfc
