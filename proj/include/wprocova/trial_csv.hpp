// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "wprocova/estimators.hpp"

#include <cstddef>
#include <istream>
#include <string>
#include <vector>

namespace wprocova::csv {

/// Required header: participant_id,treatment,outcome,prognostic_score and
/// exactly one of twin_variance / log_twin_variance. Column order is free.
struct TrialCsv {
    TrialData data;                     // rows with an empty outcome removed
    std::vector<std::string> participant_ids;
    std::size_t rows_read = 0;
    std::size_t dropped_count = 0;
    bool log_twin_variance_column = false;
};

/// Row numbers in error messages count data rows from 1 (the header is row 0).
TrialCsv ingest_csv(std::istream& in);
TrialCsv ingest_csv(const std::string& path);

/// Writes a trial in the ingest format with 17 significant digits. NaN
/// outcomes are written as empty fields.
void write_trial_csv(const std::string& path, const TrialData& data, const std::vector<std::string>& ids = {},
                     bool log_twin_variance_column = false);

/// Splits one CSV record; double quotes may wrap fields and "" escapes a quote.
std::vector<std::string> split_record(const std::string& line);

/// Strict decimal parse of a whole field (surrounding blanks allowed).
bool parse_double(const std::string& field, double& out);

/// printf "%.17g": round-trips every finite double exactly.
std::string format_double(double v);

}  // namespace wprocova::csv
