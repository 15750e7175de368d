// Command-line entry point: trace statistics, predictor evaluation, error-model
// fitting, session simulation and synthetic trace generation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hals/config.hpp"
#include "hals/error_model.hpp"
#include "hals/errors.hpp"
#include "hals/predictors.hpp"
#include "hals/simulator.hpp"
#include "hals/traces.hpp"

namespace fs = std::filesystem;
using namespace hals;

namespace {

constexpr double kThresholds[] = {0.2, 0.5, 1.0};

std::string num(double x)
{
    if (std::isnan(x)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

std::ofstream open_output(const fs::path& path)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    return out;
}

void echo_config(const fs::path& dir, const Json& config)
{
    auto out = open_output(dir / "config.json");
    out << config.dump(2) << '\n';
}

std::vector<int> parse_horizons(const std::string& text)
{
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-');
        try {
            if (dash == std::string::npos) {
                out.push_back(std::stoi(item));
            } else {
                const int lo = std::stoi(item.substr(0, dash));
                const int hi = std::stoi(item.substr(dash + 1));
                for (int h = lo; h <= hi; ++h) out.push_back(h);
            }
        } catch (const std::logic_error&) {
            throw ConfigError("bad horizon list '" + text + "'");
        }
    }
    for (int h : out)
        if (h < 1) throw ConfigError("horizons must be positive");
    if (out.empty()) throw ConfigError("no horizons given");
    return out;
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<ThroughputTrace> load_traces(const std::vector<std::string>& paths)
{
    std::vector<ThroughputTrace> traces;
    for (const auto& p : paths) traces.push_back(load_trace(p));
    return traces;
}

Json string_list(const std::vector<std::string>& xs)
{
    Json j = Json::array();
    for (const auto& x : xs) j.push_back(x);
    return j;
}

// ---------------------------------------------------------------------------

struct StatsArgs {
    std::vector<std::string> traces;
    std::string windows = "1";
    std::string out = "stats";
    std::uint64_t seed = 1;
};

int cmd_stats(const StatsArgs& args)
{
    const auto traces = load_traces(args.traces);
    const auto windows = parse_horizons(args.windows);
    const fs::path dir(args.out);
    echo_config(dir, {{"command", "stats"},
                      {"traces", string_list(args.traces)},
                      {"windows", windows},
                      {"seed", args.seed}});

    auto stats_out = open_output(dir / "stats.csv");
    stats_out << "trace_id,window_s,median_bps,cv,acf1,acf1_diff\n";
    std::map<std::pair<int, std::string>, std::vector<double>> per_metric;
    for (int w : windows) {
        for (const auto& trace : traces) {
            const TraceStatistics s = statistics(window(trace, w));
            const double nan = std::nan("");
            stats_out << trace.id << ',' << w << ',' << num(s.median_bps) << ',' << num(s.cv) << ','
                      << num(s.acf1.value_or(nan)) << ',' << num(s.acf1_diff.value_or(nan)) << '\n';
            per_metric[{w, "median_bps"}].push_back(s.median_bps);
            per_metric[{w, "cv"}].push_back(s.cv);
            if (s.acf1) per_metric[{w, "acf1"}].push_back(*s.acf1);
            if (s.acf1_diff) per_metric[{w, "acf1_diff"}].push_back(*s.acf1_diff);
        }
    }
    auto ecdf_out = open_output(dir / "ecdf.csv");
    ecdf_out << "window_s,metric,value,ecdf\n";
    for (const auto& [key, values] : per_metric) {
        const Ecdf f(values);
        for (double v : f.sorted()) ecdf_out << key.first << ',' << key.second << ',' << num(v) << ',' << num(f(v)) << '\n';
    }
    std::cout << "wrote " << (dir / "stats.csv").string() << " and " << (dir / "ecdf.csv").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
    std::vector<std::string> traces;
    std::string predictors = "SMA:1:ar,HW:10:mse";
    std::string horizons = "1-10";
    std::string out = "predict-eval";
    double rho_min = 1e4;
    std::uint64_t seed = 1;
};

struct ThresholdSummary {
    std::size_t n = 0;
    std::size_t below[3] = {0, 0, 0};

    void add(double magnitude)
    {
        ++n;
        for (int k = 0; k < 3; ++k) below[k] += magnitude < kThresholds[k] ? 1 : 0;
    }
};

void write_summary_row(std::ostream& out, const std::string& trace, const std::string& predictor, int horizon,
                       const char* side, const ThresholdSummary& s)
{
    out << trace << ',' << predictor << ',' << horizon << ',' << side << ',' << s.n;
    for (int k = 0; k < 3; ++k)
        out << ',' << (s.n ? num(static_cast<double>(s.below[k]) / static_cast<double>(s.n)) : "");
    out << '\n';
}

int cmd_predict_eval(const PredictArgs& args)
{
    const auto traces = load_traces(args.traces);
    std::vector<PredictorSpec> specs;
    for (const auto& s : split_list(args.predictors)) specs.push_back(PredictorSpec::parse(s));
    if (specs.empty()) throw ConfigError("no predictors given");
    const auto horizons = parse_horizons(args.horizons);
    const fs::path dir(args.out);
    Json spec_names = Json::array();
    for (const auto& s : specs) spec_names.push_back(s.to_string());
    echo_config(dir, {{"command", "predict-eval"},
                      {"traces", string_list(args.traces)},
                      {"predictors", spec_names},
                      {"horizons", horizons},
                      {"rho_min_bps", args.rho_min},
                      {"seed", args.seed}});

    auto errors_out = open_output(dir / "errors.csv");
    errors_out << "trace_id,predictor,horizon_s,t_issued,rho_hat,rho_actual,signed_error\n";
    auto summary_out = open_output(dir / "summary.csv");
    summary_out << "trace_id,predictor,horizon_s,side,n,frac_lt_0.2,frac_lt_0.5,frac_lt_1.0\n";

    for (const auto& spec : specs) {
        const std::string name = spec.to_string();
        for (int h : horizons) {
            ThresholdSummary pooled_under, pooled_over;
            for (const auto& trace : traces) {
                const auto records = evaluate_predictor(window(trace, 1), spec, h, args.rho_min);
                ThresholdSummary under, over;
                for (const auto& r : records) {
                    errors_out << trace.id << ',' << name << ',' << h << ',' << r.t_issued << ',' << num(r.rho_hat)
                               << ',' << num(r.rho_actual) << ',' << num(r.signed_error) << '\n';
                    if (r.signed_error <= 0.0) {
                        under.add(-r.signed_error);
                        pooled_under.add(-r.signed_error);
                    } else {
                        over.add(r.signed_error);
                        pooled_over.add(r.signed_error);
                    }
                }
                write_summary_row(summary_out, trace.id, name, h, "under", under);
                write_summary_row(summary_out, trace.id, name, h, "over", over);
            }
            write_summary_row(summary_out, "all", name, h, "under", pooled_under);
            write_summary_row(summary_out, "all", name, h, "over", pooled_over);
        }
    }
    std::cout << "wrote " << (dir / "errors.csv").string() << " and " << (dir / "summary.csv").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct FitArgs {
    std::vector<std::string> errors;
    std::string families = "exponential,normal,logistic,lomax";
    std::string out = "fit-errors";
    std::uint64_t seed = 1;
};

struct ErrorGroup {
    std::vector<double> under;
    std::vector<double> over;
};

std::map<std::pair<std::string, int>, ErrorGroup> read_error_csvs(const std::vector<std::string>& paths)
{
    std::map<std::pair<std::string, int>, ErrorGroup> groups;
    for (const auto& path : paths) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open " + path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || (line_no == 1 && line.rfind("trace_id", 0) == 0)) continue;
            std::vector<std::string> f;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) f.push_back(cell);
            if (f.size() != 7)
                throw ParseError(path + ":" + std::to_string(line_no) + ": expected 7 fields");
            try {
                std::size_t used = 0;
                const int horizon = std::stoi(f[2], &used);
                if (used != f[2].size()) throw std::invalid_argument("horizon");
                const double e = std::stod(f[6], &used);
                if (used != f[6].size()) throw std::invalid_argument("error");
                auto& g = groups[{f[1], horizon}];
                if (e <= 0.0)
                    g.under.push_back(-e);
                else
                    g.over.push_back(e);
            } catch (const std::logic_error&) {
                throw ParseError(path + ":" + std::to_string(line_no) + ": bad number");
            }
        }
    }
    if (groups.empty()) throw EmptyInput("no prediction errors in input");
    return groups;
}

Json fit_side(const std::vector<double>& samples, const std::vector<Family>& families, Interval truncation,
              Interval range, const std::string& label, std::ostream& ecdf_out, const std::string& ecdf_prefix)
{
    Json j;
    std::size_t in_range = 0;
    for (double x : samples) in_range += (x >= range.lo && x <= range.hi) ? 1 : 0;
    j["n_samples"] = samples.size();
    j["n_in_range"] = in_range;
    j["fit_range"] = {range.lo, range.hi};
    Json fits = Json::array();
    std::optional<std::pair<double, std::string>> best;
    bool fallback = false;
    for (Family family : families) {
        Json f{{"family", to_string(family)}};
        try {
            const FitResult r = fit_distribution(samples, family, truncation, range);
            const double ks = ks_distance(samples, r.distribution);
            Json params = Json::array();
            for (int k = 0; k < r.distribution.param_count(); ++k) params.push_back(r.distribution.params()[k]);
            f["params"] = params;
            f["objective"] = r.objective;
            f["ks"] = ks;
            if (!best || ks < best->first) best = std::make_pair(ks, to_string(family));
        } catch (const TooFewSamples&) {
            fallback = true;
            f["fallback"] = true;
        }
        fits.push_back(f);
    }
    if (fallback)
        std::cerr << "warning: " << label << ": only " << in_range << " samples in fit range, need "
                  << kMinFitSamples << "; fallback flagged\n";
    j["fallback"] = fallback;
    j["fits"] = fits;
    j["best"] = best ? Json(best->second) : Json(nullptr);

    if (!samples.empty()) {
        const Ecdf f(samples);
        for (int k = 0; k <= 200; ++k) {
            const double x = range.lo + (range.hi - range.lo) * k / 200.0;
            ecdf_out << ecdf_prefix << ',' << num(x) << ',' << num(f(x)) << '\n';
        }
    }
    return j;
}

int cmd_fit_errors(const FitArgs& args)
{
    std::vector<Family> families;
    for (const auto& s : split_list(args.families)) families.push_back(parse_family(s));
    if (families.empty()) throw ConfigError("no families given");
    const auto groups = read_error_csvs(args.errors);
    const fs::path dir(args.out);
    Json family_names = Json::array();
    for (Family f : families) family_names.push_back(to_string(f));
    echo_config(dir, {{"command", "fit-errors"},
                      {"errors", string_list(args.errors)},
                      {"families", family_names},
                      {"under", {{"truncation", {kUnderTruncation.lo, kUnderTruncation.hi}},
                                 {"fit_range", {kUnderFitRange.lo, kUnderFitRange.hi}}}},
                      {"over", {{"truncation", {kOverTruncation.lo, "inf"}},
                                {"fit_range", {kOverFitRange.lo, kOverFitRange.hi}}}},
                      {"seed", args.seed}});

    auto ecdf_out = open_output(dir / "ecdf.csv");
    ecdf_out << "predictor,horizon_s,side,x,ecdf\n";
    Json report = Json::array();
    for (const auto& [key, g] : groups) {
        const std::string prefix = key.first + "," + std::to_string(key.second);
        const std::string label = key.first + " T=" + std::to_string(key.second);
        Json entry{{"predictor", key.first}, {"horizon_s", key.second}};
        entry["under"] = fit_side(g.under, families, kUnderTruncation, kUnderFitRange, label + " under", ecdf_out,
                                  prefix + ",under");
        entry["over"] = fit_side(g.over, families, kOverTruncation, kOverFitRange, label + " over", ecdf_out,
                                 prefix + ",over");
        report.push_back(entry);
    }
    auto report_out = open_output(dir / "fit_report.json");
    report_out << Json{{"groups", report}}.dump(2) << '\n';
    std::cout << "wrote " << (dir / "fit_report.json").string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string config;
    std::vector<std::string> traces;
    std::string policies;
    std::string margins;
    std::optional<std::uint64_t> seed;
    std::string out = "simulate";
    bool no_events = false;
};

std::string safe_name(std::string s)
{
    for (char& c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) c = '_';
    return s;
}

int cmd_simulate(const SimulateArgs& args)
{
    ExperimentConfig config = args.config.empty() ? ExperimentConfig{} : load_experiment_config(args.config);
    if (!args.traces.empty()) {
        config.trace_paths.assign(args.traces.begin(), args.traces.end());
        config.synthetic_traces.clear();
    }
    if (config.trace_paths.empty() && config.synthetic_traces.empty()) config.synthetic_traces = synthetic_suite();
    if (!args.policies.empty()) config.policies = split_list(args.policies);
    if (!args.margins.empty()) {
        config.margins.clear();
        for (const auto& m : split_list(args.margins)) {
            try {
                config.margins.push_back(std::stod(m));
            } catch (const std::logic_error&) {
                throw ConfigError("bad margin '" + m + "'");
            }
        }
    }
    if (args.seed) config.seed = *args.seed;
    if (args.no_events) config.write_events = false;

    const StreamManifest manifest = build_manifest(config);
    const auto traces = build_traces(config);
    const auto policies = build_policies(config);
    const fs::path dir(args.out);
    echo_config(dir, to_json(config));

    SimulationConfig sim;
    sim.adaptation = config.utility;
    sim.record_events = config.write_events;
    const ExperimentResult result = run_experiment(traces, manifest, policies, sim, config.seed);

    auto summary_out = open_output(dir / "summary.csv");
    write_summary_csv(summary_out, result.summary);

    auto per_trace_out = open_output(dir / "per_trace.csv");
    per_trace_out << "policy,trace_id,adjusted_skipped,skipped_fraction,unplayable_fraction,mean_u_q,mean_u_qf,"
                     "utilization,rebuffer_events\n";
    std::size_t violations = 0;
    for (std::size_t p = 0; p < result.policies.size(); ++p) {
        for (std::size_t k = 0; k < traces.size(); ++k) {
            const auto& m = result.per_trace[p][k];
            per_trace_out << result.policies[p] << ',' << traces[k].id << ',' << num(m.adjusted_skipped) << ','
                          << num(m.skipped_fraction) << ',' << num(m.unplayable_fraction) << ','
                          << num(m.mean_u_q) << ',' << num(m.mean_u_qf) << ',' << num(m.utilization) << ','
                          << m.rebuffer_events << '\n';
            if (!config.write_events) continue;
            const auto& events = result.events[p][k];
            const auto problems = audit_event_log(events, traces[k], manifest, sim);
            for (const auto& v : problems)
                std::cerr << "audit: " << result.policies[p] << " on " << traces[k].id << ": " << v << '\n';
            violations += problems.size();
            auto ev = open_output(dir / "events" / safe_name(result.policies[p]) / (safe_name(traces[k].id) + ".jsonl"));
            write_event_log(ev, events);
            if (!result.decisions[p][k].empty()) {
                auto dec = open_output(dir / "decisions" / safe_name(result.policies[p])
                                       / (safe_name(traces[k].id) + ".csv"));
                write_decision_log_csv(dec, result.decisions[p][k]);
            }
        }
    }

    std::printf("%-20s %18s %18s %18s\n", "policy", "adjusted_skipped", "mean_u_q", "mean_u_qf");
    for (const auto& name : result.policies) {
        double values[3] = {0, 0, 0};
        for (const auto& row : result.summary) {
            if (row.policy != name) continue;
            if (row.metric == "adjusted_skipped") values[0] = row.mean;
            if (row.metric == "mean_u_q") values[1] = row.mean;
            if (row.metric == "mean_u_qf") values[2] = row.mean;
        }
        std::printf("%-20s %18.6f %18.6f %18.6f\n", name.c_str(), values[0], values[1], values[2]);
    }
    std::printf("90%% Student-t intervals over %zu traces in %s\n", traces.size(),
                (dir / "summary.csv").string().c_str());
    if (violations) {
        std::cerr << violations << " simulator invariant violations\n";
        return 3;
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct GenArgs {
    std::string out = "traces";
    std::uint64_t seed = 101;
    int count = 10;
    std::optional<int> duration;
    std::optional<double> mean_bps;
    std::optional<double> cv;
    std::optional<double> regime_rate;
    std::optional<double> anticorrelation;
};

int cmd_gen_traces(const GenArgs& args)
{
    if (args.count < 1) throw ConfigError("count must be positive");
    std::vector<SyntheticTraceSpec> specs;
    const bool custom = args.duration || args.mean_bps || args.cv || args.regime_rate || args.anticorrelation;
    if (custom) {
        for (int k = 0; k < args.count; ++k) {
            SyntheticTraceSpec s;
            s.seed = args.seed + static_cast<std::uint64_t>(k);
            if (args.duration) s.duration_s = *args.duration;
            if (args.mean_bps) s.mean_bps = *args.mean_bps;
            if (args.cv) s.cv_target = *args.cv;
            if (args.regime_rate) s.regime_switch_rate = *args.regime_rate;
            if (args.anticorrelation) s.diff_anticorrelation = *args.anticorrelation;
            specs.push_back(s);
        }
    } else {
        specs = synthetic_suite(args.seed);
        if (static_cast<std::size_t>(args.count) < specs.size()) specs.resize(static_cast<std::size_t>(args.count));
        if (static_cast<std::size_t>(args.count) > specs.size())
            throw ConfigError("the default suite has 10 traces; pass shape flags for more");
    }
    const fs::path dir(args.out);
    Json echoed = Json::array();
    for (std::size_t k = 0; k < specs.size(); ++k) {
        char id[16];
        std::snprintf(id, sizeof id, "syn%02zu", k);
        const ThroughputTrace trace = generate_trace(specs[k], id);
        auto out = open_output(dir / (std::string(id) + ".csv"));
        write_trace_csv(out, trace);
        Json e = to_json(specs[k]);
        e["id"] = id;
        echoed.push_back(e);
    }
    echo_config(dir, {{"command", "gen-traces"}, {"seed", args.seed}, {"traces", echoed}});
    std::cout << "wrote " << specs.size() << " traces to " << dir.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Trace-driven toolkit for adaptive live streaming experiments"};
    app.require_subcommand(1);

    StatsArgs stats;
    auto* stats_cmd = app.add_subcommand("stats", "Per-trace throughput statistics and their ECDF over traces");
    stats_cmd->add_option("--traces", stats.traces, "Trace CSV files")->required();
    stats_cmd->add_option("--windows", stats.windows, "Window sizes in seconds, e.g. 1,2,5 or 1-10");
    stats_cmd->add_option("--out", stats.out, "Output directory");
    stats_cmd->add_option("--seed", stats.seed, "Recorded in the config echo");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict-eval", "Relative prediction errors per predictor and horizon");
    predict_cmd->add_option("--traces", predict.traces, "Trace CSV files")->required();
    predict_cmd->add_option("--predictors", predict.predictors, "Comma-separated predictor specs");
    predict_cmd->add_option("--horizons", predict.horizons, "Horizons in seconds, e.g. 1,2,5 or 1-10");
    predict_cmd->add_option("--rho-min", predict.rho_min, "Throughput floor in bit/s");
    predict_cmd->add_option("--out", predict.out, "Output directory");
    predict_cmd->add_option("--seed", predict.seed, "Recorded in the config echo");

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit-errors", "Fit error distributions to prediction error CSVs");
    fit_cmd->add_option("--errors", fit.errors, "errors.csv files from predict-eval")->required();
    fit_cmd->add_option("--families", fit.families, "Comma-separated families");
    fit_cmd->add_option("--out", fit.out, "Output directory");
    fit_cmd->add_option("--seed", fit.seed, "Recorded in the config echo");

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Replay sessions for every policy and trace");
    sim_cmd->add_option("--config", sim.config, "Experiment config JSON");
    sim_cmd->add_option("--traces", sim.traces, "Trace CSV files (default: the synthetic suite)");
    sim_cmd->add_option("--policies", sim.policies, "Comma-separated: utility,fixed_margin,oracle,lowest");
    sim_cmd->add_option("--margins", sim.margins, "Comma-separated fixed margins");
    sim_cmd->add_option("--seed", sim.seed, "Seed for generated manifests and synthetic traces");
    sim_cmd->add_option("--out", sim.out, "Output directory");
    sim_cmd->add_flag("--no-events", sim.no_events, "Skip event and decision logs");

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-traces", "Write synthetic trace CSVs");
    gen_cmd->add_option("--out", gen.out, "Output directory");
    gen_cmd->add_option("--seed", gen.seed, "Seed of the first trace");
    gen_cmd->add_option("--count", gen.count, "Number of traces");
    gen_cmd->add_option("--duration", gen.duration, "Duration in seconds");
    gen_cmd->add_option("--mean-bps", gen.mean_bps, "Mean throughput in bit/s");
    gen_cmd->add_option("--cv", gen.cv, "Target coefficient of variation");
    gen_cmd->add_option("--regime-rate", gen.regime_rate, "Regime switch probability per second");
    gen_cmd->add_option("--anticorrelation", gen.anticorrelation, "Target differenced lag-1 autocorrelation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*stats_cmd) return cmd_stats(stats);
        if (*predict_cmd) return cmd_predict_eval(predict);
        if (*fit_cmd) return cmd_fit_errors(fit);
        if (*sim_cmd) return cmd_simulate(sim);
        if (*gen_cmd) return cmd_gen_traces(gen);
    } catch (const hals::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 3;
    }
    return 1;
}
