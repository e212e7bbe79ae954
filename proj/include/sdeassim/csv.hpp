#pragma once

// Fixed-schema CSV output.  One row per recorded quantity:
//
//   experiment,scheme,filter,h,sigma,sigma_y,M,replicate,status,metric,value,seconds
//
// Replicate rows carry the replicate index; aggregate rows use replicate -1.
// Numeric fields are printed with 17 significant digits ('%.17g'), enough to
// round-trip doubles exactly, so identical results produce identical bytes.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdeassim {

struct MetricRow {
    std::string experiment;
    std::string scheme;
    std::string filter;
    double h = 0.0;
    double sigma = 0.0;
    double sigma_y = 0.0;
    std::int64_t m_ens = 0;
    std::int64_t replicate = -1;
    std::string status;
    std::string metric;
    double value = 0.0;
    double seconds = 0.0;
};

inline const char* kCsvHeader =
    "experiment,scheme,filter,h,sigma,sigma_y,M,replicate,status,metric,value,seconds";

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string to_csv_line(const MetricRow& r) {
    std::string line;
    line.reserve(160);
    line += r.experiment;
    line += ',';
    line += r.scheme;
    line += ',';
    line += r.filter;
    line += ',';
    line += format_g17(r.h);
    line += ',';
    line += format_g17(r.sigma);
    line += ',';
    line += format_g17(r.sigma_y);
    line += ',';
    line += std::to_string(r.m_ens);
    line += ',';
    line += std::to_string(r.replicate);
    line += ',';
    line += r.status;
    line += ',';
    line += r.metric;
    line += ',';
    line += format_g17(r.value);
    line += ',';
    line += format_g17(r.seconds);
    return line;
}

inline std::string rows_to_csv(const std::vector<MetricRow>& rows) {
    std::string out(kCsvHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += to_csv_line(r);
        out += '\n';
    }
    return out;
}

inline void write_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open output file: " + path);
    f << rows_to_csv(rows);
}

}  // namespace sdeassim
