#include "hals/traces.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <string_view>
#include <vector>

#include "hals/errors.hpp"

namespace hals {

namespace {

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool parse_int(std::string_view s, std::int64_t& out)
{
    s = trim(s);
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

double median_of(std::vector<double> v)
{
    const auto n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(v.begin(), mid);
    return 0.5 * (lower + upper);
}

}  // namespace

ThroughputTrace parse_trace_csv(std::istream& in, std::string id)
{
    std::vector<std::int64_t> bytes;
    std::string line;
    std::size_t line_no = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view = trim(line);
        if (line_no == 1 && view.size() >= 3 && view.substr(0, 3) == "\xEF\xBB\xBF") view.remove_prefix(3);
        if (view.empty()) continue;

        const auto comma = view.find(',');
        std::int64_t t = 0;
        std::int64_t b = 0;
        const bool ok = comma != std::string_view::npos && parse_int(view.substr(0, comma), t)
                        && parse_int(view.substr(comma + 1), b);
        if (!ok) {
            if (first_content) {
                first_content = false;  // header
                continue;
            }
            throw ParseError(id + ": line " + std::to_string(line_no) + ": expected 't,bytes', got '"
                             + std::string(view) + "'");
        }
        first_content = false;
        if (t != static_cast<std::int64_t>(bytes.size()))
            throw GapError(id + ": line " + std::to_string(line_no) + ": expected t=" + std::to_string(bytes.size())
                           + ", got t=" + std::to_string(t));
        if (b < 0)
            throw ValueError(id + ": line " + std::to_string(line_no) + ": negative byte count "
                             + std::to_string(b));
        bytes.push_back(b);
    }
    if (bytes.empty()) throw ParseError(id + ": no samples");

    ThroughputTrace trace;
    trace.id = std::move(id);
    trace.bytes = Eigen::Map<const ByteVector>(bytes.data(), static_cast<Eigen::Index>(bytes.size()));
    return trace;
}

ThroughputTrace load_trace(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    return parse_trace_csv(in, path.stem().string());
}

void write_trace_csv(std::ostream& out, const ThroughputTrace& trace)
{
    out << "t,bytes\n";
    for (Eigen::Index t = 0; t < trace.bytes.size(); ++t) out << t << ',' << trace.bytes[t] << '\n';
}

WindowedSeries window(const ThroughputTrace& trace, int window_s)
{
    const auto duration = trace.duration();
    if (window_s < 1 || window_s > duration)
        throw WindowTooLarge("window " + std::to_string(window_s) + " s for trace of "
                             + std::to_string(duration) + " s");

    // Integer prefix sums keep the windows exact.
    ByteVector prefix(duration + 1);
    prefix[0] = 0;
    for (Eigen::Index k = 0; k < duration; ++k) prefix[k + 1] = prefix[k] + trace.bytes[k];

    WindowedSeries series;
    series.window_s = window_s;
    series.values.resize(duration - window_s + 1);
    for (Eigen::Index k = 0; k < series.values.size(); ++k)
        series.values[k] = 8.0 * static_cast<double>(prefix[k + window_s] - prefix[k]) / window_s;
    return series;
}

std::optional<double> lag1_autocorrelation(const Eigen::Ref<const Eigen::VectorXd>& values)
{
    const auto n = values.size();
    if (n < 3) return std::nullopt;
    const auto head = values.head(n - 1);
    const auto tail = values.tail(n - 1);
    const Eigen::ArrayXd x = head.array() - head.mean();
    const Eigen::ArrayXd y = tail.array() - tail.mean();
    const double sxx = x.square().sum();
    const double syy = y.square().sum();
    // Relative threshold: a numerically constant side has no defined correlation.
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    const double eps = 1e-24 * scale * scale * static_cast<double>(n);
    if (sxx <= eps || syy <= eps) return std::nullopt;
    return std::clamp((x * y).sum() / std::sqrt(sxx * syy), -1.0, 1.0);
}

TraceStatistics statistics(const Eigen::Ref<const Eigen::VectorXd>& values)
{
    if (values.size() < 3)
        throw DegenerateSeries("statistics need at least 3 values, got " + std::to_string(values.size()));

    TraceStatistics stats;
    stats.median_bps = median_of(std::vector<double>(values.data(), values.data() + values.size()));

    const double mean = values.mean();
    const double sd = std::sqrt((values.array() - mean).square().mean());
    if (sd == 0.0)
        stats.cv = 0.0;
    else
        stats.cv = mean != 0.0 ? sd / std::abs(mean) : std::numeric_limits<double>::infinity();

    stats.acf1 = lag1_autocorrelation(values);
    const Eigen::VectorXd diff = values.tail(values.size() - 1) - values.head(values.size() - 1);
    stats.acf1_diff = lag1_autocorrelation(diff);
    return stats;
}

TraceStatistics statistics(const WindowedSeries& series) { return statistics(series.values); }

ThroughputTrace generate_trace(const SyntheticTraceSpec& spec, std::string id)
{
    if (spec.duration_s <= 0) throw InvalidSpec("duration_s must be positive");
    if (!(spec.mean_bps > 0.0)) throw InvalidSpec("mean_bps must be positive");
    if (!(spec.cv_target >= 0.0)) throw InvalidSpec("cv_target must be non-negative");
    if (!(spec.regime_switch_rate >= 0.0 && spec.regime_switch_rate <= 1.0))
        throw InvalidSpec("regime_switch_rate must lie in [0, 1]");
    if (!(spec.diff_anticorrelation >= -1.0 && spec.diff_anticorrelation <= 0.0))
        throw InvalidSpec("diff_anticorrelation must lie in [-1, 0]");

    // Split the log-variance budget ln(1 + cv^2) between the alternating
    // perturbation, the two regime levels and per-second lognormal noise;
    // the three factors are independent with unit mean.
    const double budget = std::log1p(spec.cv_target * spec.cv_target);
    const double alt_share = 0.5 * -spec.diff_anticorrelation;
    const double alt = std::min(0.9, std::sqrt(std::expm1(alt_share * budget)));
    double remaining = budget - std::log1p(alt * alt);
    const double level = std::min(0.9, std::sqrt(std::expm1(0.5 * remaining)));
    remaining -= std::log1p(level * level);
    const double noise_var = std::max(0.0, remaining);

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    const auto n = spec.duration_s;
    Eigen::VectorXd rate(n);
    bool high = uniform(rng) < 0.5;
    for (Eigen::Index t = 0; t < n; ++t) {
        if (t > 0 && uniform(rng) < spec.regime_switch_rate) high = !high;
        const double regime = high ? 1.0 + level : 1.0 - level;
        const double sign = (t % 2 == 0) ? 1.0 : -1.0;
        const double noise = noise_var > 0.0 ? std::exp(-0.5 * noise_var + std::sqrt(noise_var) * normal(rng)) : 1.0;
        rate[t] = std::max(0.0, regime * (1.0 + sign * alt) * noise);
    }
    const double realized = rate.mean();
    if (realized > 0.0) rate *= spec.mean_bps / realized;

    ThroughputTrace trace;
    trace.id = std::move(id);
    trace.bytes.resize(n);
    for (Eigen::Index t = 0; t < n; ++t)
        trace.bytes[t] = std::max<std::int64_t>(0, std::llround(rate[t] / 8.0));
    return trace;
}

std::vector<SyntheticTraceSpec> synthetic_suite(std::uint64_t base_seed)
{
    constexpr double kSwitchRates[] = {0.01, 0.02, 0.05, 0.1, 0.2};
    constexpr double kAnticorrelation[] = {-0.2, -0.35, -0.5, -0.65};
    std::vector<SyntheticTraceSpec> suite;
    for (int k = 0; k < 10; ++k) {
        SyntheticTraceSpec spec;
        spec.seed = base_seed + static_cast<std::uint64_t>(k);
        spec.duration_s = 1800;
        spec.mean_bps = 0.5e6 * std::pow(6.0, k / 9.0);
        spec.cv_target = 0.6 + 0.04 * k;
        spec.regime_switch_rate = kSwitchRates[k % 5];
        spec.diff_anticorrelation = kAnticorrelation[k % 4];
        suite.push_back(spec);
    }
    return suite;
}

}  // namespace hals
