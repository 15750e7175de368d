#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace hals {

using ByteVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

/// Per-second application-layer byte counts. Sample k covers [k, k+1).
struct ThroughputTrace {
    std::string id;
    ByteVector bytes;

    std::int64_t duration() const { return bytes.size(); }
    std::int64_t total_bytes() const { return bytes.sum(); }
};

/// Mean throughput in bits/s over sliding windows shifted by one second.
/// values[k] covers [k, k + window_s).
struct WindowedSeries {
    int window_s = 1;
    Eigen::VectorXd values;
};

struct TraceStatistics {
    double median_bps = 0.0;
    double cv = 0.0;
    // Empty when the lagged pairs have zero variance.
    std::optional<double> acf1;
    std::optional<double> acf1_diff;
};

struct SyntheticTraceSpec {
    std::uint64_t seed = 1;
    std::int64_t duration_s = 1800;
    double mean_bps = 1e6;
    double cv_target = 0.5;
    double regime_switch_rate = 0.1;
    double diff_anticorrelation = -0.5;
};

/// Parses "t,bytes" lines. A non-numeric first line is treated as a header.
ThroughputTrace parse_trace_csv(std::istream& in, std::string id);
ThroughputTrace load_trace(const std::filesystem::path& path);
void write_trace_csv(std::ostream& out, const ThroughputTrace& trace);

WindowedSeries window(const ThroughputTrace& trace, int window_s);

/// Pearson correlation of (x_k, x_{k+1}) pairs; empty if either side is constant.
std::optional<double> lag1_autocorrelation(const Eigen::Ref<const Eigen::VectorXd>& values);

TraceStatistics statistics(const WindowedSeries& series);
TraceStatistics statistics(const Eigen::Ref<const Eigen::VectorXd>& values);

ThroughputTrace generate_trace(const SyntheticTraceSpec& spec, std::string id = "synthetic");

/// Ten high-variability 1800 s specs with means from 0.5 to 3 Mbps, seeded
/// base_seed, base_seed + 1, ...
std::vector<SyntheticTraceSpec> synthetic_suite(std::uint64_t base_seed = 101);

}  // namespace hals
