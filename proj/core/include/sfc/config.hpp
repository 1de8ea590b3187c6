#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sfc/trainer.hpp"

namespace sfc {

// Flat `key = value` text; `#` starts a comment. Later keys override
// earlier ones.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues load_key_values(const std::filesystem::path& path);
void write_key_values(std::ostream& out, const KeyValues& values);

// Applies recognised keys; throws schema_error for unknown keys or values
// that do not parse.
void apply_config(TrainingConfig& config, const KeyValues& values);
// Every configurable key with round-trip precision.
KeyValues to_key_values(const TrainingConfig& config);
std::vector<std::string> config_keys();

} // namespace sfc
