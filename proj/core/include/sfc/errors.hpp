#pragma once

#include <stdexcept>
#include <string>

namespace sfc {

// Raised when a numeric quantity turns NaN/inf inside a simulation or update.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Network description violates a hardware constraint (capacity, fan-in,
// fan-out). The message names the violated constraint.
class topology_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A synapse update would exceed the fan-in or fan-out budget.
class capacity_error : public topology_error {
public:
    using topology_error::topology_error;
};

class calibration_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// On-disk artifact has the wrong version or layout.
class schema_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace sfc
