// SPDX-License-Identifier: Apache-2.0
#include "wprocova/error.hpp"

namespace wprocova {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::NonPositiveVariance: return "NonPositiveVariance";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::DegenerateTwinVariance: return "DegenerateTwinVariance";
        case ErrorKind::SingleArm: return "SingleArm";
        case ErrorKind::MixedData: return "MixedData";
        case ErrorKind::InvalidPower: return "InvalidPower";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::SingularBread: return "SingularBread";
        case ErrorKind::NonPSDCovariance: return "NonPSDCovariance";
        case ErrorKind::InvalidScenarioParams: return "InvalidScenarioParams";
        case ErrorKind::Unattainable: return "Unattainable";
        case ErrorKind::ConstantFactor: return "ConstantFactor";
        case ErrorKind::MissingColumn: return "MissingColumn";
        case ErrorKind::NonPositiveTwinVariance: return "NonPositiveTwinVariance";
        case ErrorKind::MalformedNumber: return "MalformedNumber";
        case ErrorKind::MissingCovariate: return "MissingCovariate";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

}  // namespace wprocova
