// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wprocova {

enum class ErrorKind {
    DimensionMismatch,
    RankDeficient,
    NonPositiveVariance,
    EmptyInput,
    DegenerateTwinVariance,
    SingleArm,
    MixedData,
    InvalidPower,
    InvalidArgument,
    SingularBread,
    NonPSDCovariance,
    InvalidScenarioParams,
    Unattainable,
    ConstantFactor,
    MissingColumn,
    NonPositiveTwinVariance,
    MalformedNumber,
    MissingCovariate,
    InvalidConfig,
    Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure in the library is reported as an Error carrying a kind that
/// callers (and the CLI's machine-readable error object) can switch on.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace wprocova
