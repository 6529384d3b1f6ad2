// SPDX-License-Identifier: Apache-2.0
#include "wprocova/trial_csv.hpp"

#include "wprocova/error.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>

namespace wprocova::csv {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string row_label(std::size_t row) {
    return "row " + std::to_string(row);
}

double number_at(const std::string& field, std::size_t row, const char* column) {
    double v = 0.0;
    if (!parse_double(field, v)) {
        throw Error(ErrorKind::MalformedNumber,
                    row_label(row) + ": column " + column + " holds '" + field + "', not a number");
    }
    return v;
}

}  // namespace

std::vector<std::string> split_record(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(trim(cur));
    return fields;
}

bool parse_double(const std::string& field, double& out) {
    const std::string t = trim(field);
    if (t.empty()) return false;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size()) return false;
    if (errno == ERANGE && std::isinf(v)) return false;
    if (std::isnan(v)) return false;
    out = v;
    return true;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

TrialCsv ingest_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::MissingColumn, "empty file: header row missing");
    const auto header = split_record(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;

    for (const char* name : {"participant_id", "treatment", "outcome", "prognostic_score"}) {
        if (!col.count(name)) throw Error(ErrorKind::MissingColumn, std::string("missing column '") + name + "'");
    }
    const bool has_plain = col.count("twin_variance") > 0;
    const bool has_log = col.count("log_twin_variance") > 0;
    if (!has_plain && !has_log) {
        throw Error(ErrorKind::MissingColumn, "missing column 'twin_variance' (or 'log_twin_variance')");
    }
    if (has_plain && has_log) {
        throw Error(ErrorKind::InvalidArgument, "give either 'twin_variance' or 'log_twin_variance', not both");
    }
    const std::size_t c_id = col["participant_id"];
    const std::size_t c_w = col["treatment"];
    const std::size_t c_y = col["outcome"];
    const std::size_t c_m = col["prognostic_score"];
    const std::size_t c_s = has_log ? col["log_twin_variance"] : col["twin_variance"];

    TrialCsv out;
    out.log_twin_variance_column = has_log;
    std::vector<int> w;
    std::vector<double> y, m, s2;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++row;
        const auto f = split_record(line);
        if (f.size() != header.size()) {
            throw Error(ErrorKind::MalformedNumber, row_label(row) + ": expected " + std::to_string(header.size()) +
                                                        " fields, found " + std::to_string(f.size()));
        }
        const double wv = number_at(f[c_w], row, "treatment");
        if (wv != 0.0 && wv != 1.0) {
            throw Error(ErrorKind::InvalidArgument, row_label(row) + ": treatment must be 0 or 1");
        }
        if (f[c_m].empty()) throw Error(ErrorKind::MissingCovariate, row_label(row) + ": prognostic_score is empty");
        if (f[c_s].empty()) {
            throw Error(ErrorKind::MissingCovariate, row_label(row) + ": twin variance is empty");
        }
        const double mv = number_at(f[c_m], row, "prognostic_score");
        double sv = number_at(f[c_s], row, has_log ? "log_twin_variance" : "twin_variance");
        if (has_log) sv = std::exp(sv);
        if (!(sv > 0.0) || std::isinf(sv)) {
            throw Error(ErrorKind::NonPositiveTwinVariance,
                        row_label(row) + ": twin variance must be positive and finite");
        }
        if (f[c_y].empty()) {
            ++out.dropped_count;
            continue;
        }
        out.participant_ids.push_back(f[c_id]);
        w.push_back(static_cast<int>(wv));
        y.push_back(number_at(f[c_y], row, "outcome"));
        m.push_back(mv);
        s2.push_back(sv);
    }
    out.rows_read = row;
    const auto n = static_cast<Eigen::Index>(w.size());
    out.data.treatment = std::move(w);
    out.data.outcome = Eigen::Map<const Vector>(y.data(), n);
    out.data.prognostic_score = Eigen::Map<const Vector>(m.data(), n);
    out.data.twin_variance = Eigen::Map<const Vector>(s2.data(), n);
    return out;
}

TrialCsv ingest_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
    return ingest_csv(in);
}

void write_trial_csv(const std::string& path, const TrialData& data, const std::vector<std::string>& ids,
                     bool log_twin_variance_column) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
    out << "participant_id,treatment,outcome,prognostic_score,"
        << (log_twin_variance_column ? "log_twin_variance" : "twin_variance") << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const double s2 = data.twin_variance(k);
        out << (i < ids.size() ? ids[i] : "p" + std::to_string(i + 1)) << ',' << data.treatment[i] << ','
            << (std::isnan(data.outcome(k)) ? std::string() : format_double(data.outcome(k))) << ','
            << format_double(data.prognostic_score(k)) << ','
            << format_double(log_twin_variance_column ? std::log(s2) : s2) << '\n';
    }
    if (!out) throw Error(ErrorKind::Io, "failed writing '" + path + "'");
}

}  // namespace wprocova::csv
