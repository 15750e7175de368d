#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hals/adaptation.hpp"
#include "hals/simulator.hpp"
#include "hals/traces.hpp"

namespace hals {

using Json = nlohmann::ordered_json;

Json to_json(const SyntheticTraceSpec& spec);
SyntheticTraceSpec synthetic_spec_from_json(const Json& j);

Json to_json(const AdaptationConfig& config);
AdaptationConfig adaptation_config_from_json(const Json& j);

/// Manifest JSON: {tau_s, representations: [{mmbr_bps, psnr_db}], segment_sizes: [[bits per representation], ...]}
/// or the same with generator: {vbr_cv, n_segments} in place of segment_sizes.
Json to_json(const StreamManifest& manifest);
StreamManifest manifest_from_json(const Json& j, std::uint64_t seed);
StreamManifest load_manifest(const std::filesystem::path& path, std::uint64_t seed);

struct ManifestConfig {
    std::optional<std::filesystem::path> path;
    double tau_s = 2.0;
    std::vector<Representation> representations = geometric_ladder(1e5, 4.2e6, 10);
    std::optional<Eigen::MatrixXd> segment_sizes;
    double vbr_cv = 0.0;
    Eigen::Index n_segments = 900;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::vector<std::filesystem::path> trace_paths;
    std::vector<SyntheticTraceSpec> synthetic_traces;
    ManifestConfig manifest;
    std::vector<std::string> policies{"utility", "fixed_margin", "oracle", "lowest"};
    std::vector<double> margins{0.7, 0.8, 0.9};
    double oracle_horizon_s = 10.0;
    int fixed_margin_window_s = 2;
    AdaptationConfig utility;
    bool write_events = true;
};

Json to_json(const ManifestConfig& config);
Json to_json(const ExperimentConfig& config);
/// Unknown keys and ill-typed values raise ConfigError.
ExperimentConfig experiment_config_from_json(const Json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

StreamManifest build_manifest(const ExperimentConfig& config);
std::vector<ThroughputTrace> build_traces(const ExperimentConfig& config);
/// One fixed-margin policy per margin when "fixed_margin" is listed.
std::vector<std::unique_ptr<Policy>> build_policies(const ExperimentConfig& config);

}  // namespace hals
