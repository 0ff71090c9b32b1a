#pragma once

#include <stdexcept>
#include <string>

namespace hsr {

// Base for everything this toolkit throws.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape / extent disagreement between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value (bad kernel size, non-dividing patch, ...).
struct ConfigError : Error {
    using Error::Error;
};

// On-disk data that fails validation (bad magic, truncated payload, ...).
struct FormatError : Error {
    using Error::Error;
};

// Operation called in a state that does not permit it (consumed tape, missing grad).
struct StateError : Error {
    using Error::Error;
};

// Input that is formally valid but degenerate (all-zero cube, saturated sweep).
struct DegenerateInputError : Error {
    using Error::Error;
};

// Out-of-bounds index or ROI.
struct BoundsError : Error {
    using Error::Error;
};

// Calibration-specific failures (gain drift, lamp power <= 0, ...).
struct CalibrationError : Error {
    using Error::Error;
};

}  // namespace hsr
