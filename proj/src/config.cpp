#include "hals/config.hpp"

#include <fstream>
#include <set>

#include "hals/errors.hpp"

namespace hals {

namespace {

/// Typed access to a JSON object that rejects unknown keys.
class ObjectReader {
public:
    ObjectReader(const Json& j, std::string context) : j_(j), context_(std::move(context))
    {
        if (!j.is_object()) throw ConfigError(context_ + ": expected a JSON object");
    }

    template <typename T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(context_ + ": bad value for '" + key + "'");
        }
    }

    const Json* find(const char* key)
    {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const
    {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw ConfigError(context_ + ": unknown key '" + item.key() + "'");
    }

private:
    const Json& j_;
    std::string context_;
    std::set<std::string> seen_;
};

Json read_json_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::vector<Representation> representations_from_json(const Json& j)
{
    if (!j.is_array()) throw ConfigError("representations: expected an array");
    std::vector<Representation> reps;
    for (const auto& item : j) {
        ObjectReader r(item, "representation");
        Representation rep;
        r.get("mmbr_bps", rep.mmbr_bps);
        r.get("psnr_db", rep.psnr_db);
        r.finish();
        reps.push_back(rep);
    }
    return reps;
}

Json to_json(const std::vector<Representation>& reps)
{
    Json out = Json::array();
    for (const auto& rep : reps) out.push_back({{"mmbr_bps", rep.mmbr_bps}, {"psnr_db", rep.psnr_db}});
    return out;
}

Eigen::MatrixXd sizes_from_json(const Json& j)
{
    if (!j.is_array() || j.empty()) throw ConfigError("segment_sizes: expected a non-empty array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j.front().size());
    Eigen::MatrixXd sizes(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw ConfigError("segment_sizes: rows must have equal length");
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& v = row[static_cast<std::size_t>(c)];
            if (!v.is_number()) throw ConfigError("segment_sizes: expected numbers");
            sizes(i, c) = v.get<double>();
        }
    }
    return sizes;
}

Json to_json(const Eigen::MatrixXd& sizes)
{
    Json out = Json::array();
    for (Eigen::Index i = 0; i < sizes.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < sizes.cols(); ++c) row.push_back(sizes(i, c));
        out.push_back(std::move(row));
    }
    return out;
}

ManifestConfig manifest_config_from_json(const Json& j)
{
    ManifestConfig config;
    ObjectReader r(j, "manifest");
    std::string path;
    r.get("path", path);
    if (!path.empty()) config.path = path;
    r.get("tau_s", config.tau_s);
    if (const auto* reps = r.find("representations")) config.representations = representations_from_json(*reps);
    if (const auto* sizes = r.find("segment_sizes")) config.segment_sizes = sizes_from_json(*sizes);
    if (const auto* gen = r.find("generator")) {
        if (config.segment_sizes) throw ConfigError("manifest: give either segment_sizes or generator");
        ObjectReader g(*gen, "manifest generator");
        g.get("vbr_cv", config.vbr_cv);
        g.get("n_segments", config.n_segments);
        g.finish();
    }
    r.finish();
    if (config.path && (j.size() > 1)) throw ConfigError("manifest: path excludes inline fields");
    return config;
}

}  // namespace

Json to_json(const SyntheticTraceSpec& spec)
{
    return {{"seed", spec.seed},
            {"duration_s", spec.duration_s},
            {"mean_bps", spec.mean_bps},
            {"cv_target", spec.cv_target},
            {"regime_switch_rate", spec.regime_switch_rate},
            {"diff_anticorrelation", spec.diff_anticorrelation}};
}

SyntheticTraceSpec synthetic_spec_from_json(const Json& j)
{
    SyntheticTraceSpec spec;
    ObjectReader r(j, "synthetic trace");
    r.get("seed", spec.seed);
    r.get("duration_s", spec.duration_s);
    r.get("mean_bps", spec.mean_bps);
    r.get("cv_target", spec.cv_target);
    r.get("regime_switch_rate", spec.regime_switch_rate);
    r.get("diff_anticorrelation", spec.diff_anticorrelation);
    r.finish();
    return spec;
}

Json to_json(const AdaptationConfig& c)
{
    return {{"alpha_q", c.alpha_q},
            {"alpha_rb", c.alpha_rb},
            {"alpha_cdf", c.alpha_cdf},
            {"t_max_s", c.t_max_s},
            {"rho_min_bps", c.rho_min_bps},
            {"delta_p_max_s", c.delta_p_max_s},
            {"prb_mode", c.prb_mode == PrbMode::Product ? "product" : "paper_sum_clamped"},
            {"pu_mode", c.pu_mode == PuMode::Conditional ? "conditional" : "marginal"},
            {"enumeration_cap", c.enumeration_cap},
            {"beam_width", c.beam_width},
            {"predictor", c.predictor.to_string()}};
}

AdaptationConfig adaptation_config_from_json(const Json& j)
{
    AdaptationConfig c;
    ObjectReader r(j, "utility");
    r.get("alpha_q", c.alpha_q);
    r.get("alpha_rb", c.alpha_rb);
    r.get("alpha_cdf", c.alpha_cdf);
    r.get("t_max_s", c.t_max_s);
    r.get("rho_min_bps", c.rho_min_bps);
    r.get("delta_p_max_s", c.delta_p_max_s);
    std::string prb = c.prb_mode == PrbMode::Product ? "product" : "paper_sum_clamped";
    r.get("prb_mode", prb);
    if (prb == "product")
        c.prb_mode = PrbMode::Product;
    else if (prb == "paper_sum_clamped")
        c.prb_mode = PrbMode::PaperSumClamped;
    else
        throw ConfigError("utility: prb_mode must be product or paper_sum_clamped");
    std::string pu = "conditional";
    r.get("pu_mode", pu);
    if (pu == "conditional")
        c.pu_mode = PuMode::Conditional;
    else if (pu == "marginal")
        c.pu_mode = PuMode::Marginal;
    else
        throw ConfigError("utility: pu_mode must be conditional or marginal");
    r.get("enumeration_cap", c.enumeration_cap);
    r.get("beam_width", c.beam_width);
    std::string predictor = c.predictor.to_string();
    r.get("predictor", predictor);
    c.predictor = PredictorSpec::parse(predictor);
    r.finish();
    return c;
}

Json to_json(const StreamManifest& manifest)
{
    return {{"tau_s", manifest.tau_s},
            {"representations", to_json(manifest.representations)},
            {"segment_sizes", to_json(manifest.segment_sizes)}};
}

StreamManifest manifest_from_json(const Json& j, std::uint64_t seed)
{
    const ManifestConfig mc = manifest_config_from_json(j);
    if (mc.path) return load_manifest(*mc.path, seed);
    ExperimentConfig config;
    config.seed = seed;
    config.manifest = mc;
    return build_manifest(config);
}

StreamManifest load_manifest(const std::filesystem::path& path, std::uint64_t seed)
{
    return manifest_from_json(read_json_file(path), seed);
}

Json to_json(const ManifestConfig& config)
{
    if (config.path) return {{"path", config.path->string()}};
    Json j{{"tau_s", config.tau_s}, {"representations", to_json(config.representations)}};
    if (config.segment_sizes)
        j["segment_sizes"] = to_json(*config.segment_sizes);
    else
        j["generator"] = {{"vbr_cv", config.vbr_cv}, {"n_segments", config.n_segments}};
    return j;
}

Json to_json(const ExperimentConfig& config)
{
    Json traces = Json::array();
    for (const auto& p : config.trace_paths) traces.push_back(p.string());
    Json synthetic = Json::array();
    for (const auto& s : config.synthetic_traces) synthetic.push_back(to_json(s));
    return {{"seed", config.seed},
            {"traces", traces},
            {"synthetic_traces", synthetic},
            {"manifest", to_json(config.manifest)},
            {"policies", config.policies},
            {"margins", config.margins},
            {"oracle_horizon_s", config.oracle_horizon_s},
            {"fixed_margin_window_s", config.fixed_margin_window_s},
            {"utility", to_json(config.utility)},
            {"write_events", config.write_events},
            {"confidence_intervals", "two-sided 90% Student-t over traces"}};
}

ExperimentConfig experiment_config_from_json(const Json& j)
{
    ExperimentConfig config;
    ObjectReader r(j, "config");
    r.get("seed", config.seed);
    std::vector<std::string> paths;
    r.get("traces", paths);
    config.trace_paths.assign(paths.begin(), paths.end());
    if (const auto* synthetic = r.find("synthetic_traces")) {
        if (!synthetic->is_array()) throw ConfigError("synthetic_traces: expected an array");
        for (const auto& s : *synthetic) config.synthetic_traces.push_back(synthetic_spec_from_json(s));
    }
    if (const auto* manifest = r.find("manifest")) config.manifest = manifest_config_from_json(*manifest);
    r.get("policies", config.policies);
    r.get("margins", config.margins);
    r.get("oracle_horizon_s", config.oracle_horizon_s);
    r.get("fixed_margin_window_s", config.fixed_margin_window_s);
    if (const auto* utility = r.find("utility")) config.utility = adaptation_config_from_json(*utility);
    r.get("write_events", config.write_events);
    std::string ci;
    r.get("confidence_intervals", ci);
    r.finish();
    return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path)
{
    return experiment_config_from_json(read_json_file(path));
}

StreamManifest build_manifest(const ExperimentConfig& config)
{
    const auto& mc = config.manifest;
    StreamManifest manifest;
    if (mc.path) {
        manifest = load_manifest(*mc.path, config.seed);
    } else if (mc.segment_sizes) {
        manifest.tau_s = mc.tau_s;
        manifest.representations = mc.representations;
        manifest.segment_sizes = *mc.segment_sizes;
    } else {
        manifest = generate_manifest(mc.tau_s, mc.representations, mc.n_segments, mc.vbr_cv, config.seed);
    }
    manifest.validate();
    return manifest;
}

std::vector<ThroughputTrace> build_traces(const ExperimentConfig& config)
{
    std::vector<ThroughputTrace> traces;
    for (const auto& p : config.trace_paths) traces.push_back(load_trace(p));
    for (const auto& s : config.synthetic_traces)
        traces.push_back(generate_trace(s, "synthetic_" + std::to_string(s.seed)));
    if (traces.empty()) throw ConfigError("no traces given");
    return traces;
}

std::vector<std::unique_ptr<Policy>> build_policies(const ExperimentConfig& config)
{
    std::vector<std::unique_ptr<Policy>> policies;
    for (const auto& name : config.policies) {
        if (name == "utility") {
            policies.push_back(std::make_unique<UtilityPolicy>(config.utility));
        } else if (name == "fixed_margin") {
            for (double m : config.margins)
                policies.push_back(std::make_unique<FixedMarginPolicy>(m, config.fixed_margin_window_s));
        } else if (name == "oracle") {
            policies.push_back(std::make_unique<OraclePolicy>(config.oracle_horizon_s));
        } else if (name == "lowest") {
            policies.push_back(std::make_unique<LowestPolicy>());
        } else {
            throw ConfigError("unknown policy '" + name + "'");
        }
    }
    if (policies.empty()) throw ConfigError("no policies given");
    return policies;
}

}  // namespace hals
