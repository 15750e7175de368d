#include "hals/predictors.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <vector>

#include "pattern_search.hpp"

namespace hals {

namespace {

constexpr double kCoarseStep = 0.05;
constexpr int kCoarsePoints = 21;
constexpr std::size_t kMaxRefinements = 8;

// Improvement threshold for parameter tuning; proportional to the data scale
// so that ties (flat MSE) resolve the same way for scaled inputs.
double tie_tolerance(const Eigen::Ref<const Eigen::VectorXd>& past)
{
    const double scale = past.cwiseAbs().maxCoeff();
    return 1e-13 * std::max(scale * scale, std::numeric_limits<double>::min());
}

std::vector<std::string> split(const std::string& text, char sep)
{
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        parts.push_back(text.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return parts;
}

}  // namespace

PredictorSpec PredictorSpec::parse(const std::string& text)
{
    const auto parts = split(text, ':');
    if (parts.size() < 2 || parts.size() > 3) throw ConfigError("bad predictor '" + text + "'");

    PredictorSpec spec;
    if (parts[0] == "SMA")
        spec.kind = PredictorKind::SMA;
    else if (parts[0] == "SES")
        spec.kind = PredictorKind::SES;
    else if (parts[0] == "LinExt")
        spec.kind = PredictorKind::LinExt;
    else if (parts[0] == "HW")
        spec.kind = PredictorKind::HW;
    else
        throw ConfigError("unknown predictor type '" + parts[0] + "'");

    const auto& n = parts[1];
    auto [ptr, ec] = std::from_chars(n.data(), n.data() + n.size(), spec.n_past);
    if (ec != std::errc{} || ptr != n.data() + n.size()) throw ConfigError("bad sample count in '" + text + "'");

    if (parts.size() == 3) {
        const auto& p = parts[2];
        if (spec.kind == PredictorKind::SMA) {
            if (p == "ar")
                spec.mean_type = MeanType::Arithmetic;
            else if (p == "gm")
                spec.mean_type = MeanType::Geometric;
            else if (p == "hm")
                spec.mean_type = MeanType::Harmonic;
            else
                throw ConfigError("unknown mean type '" + p + "'");
        } else if (p != "mse" || spec.kind == PredictorKind::LinExt) {
            throw ConfigError("unexpected parameter '" + p + "' in '" + text + "'");
        }
    }
    spec.validate();
    return spec;
}

std::string PredictorSpec::to_string() const
{
    const std::string n = std::to_string(n_past);
    switch (kind) {
    case PredictorKind::SMA: {
        const char* mean = mean_type == MeanType::Arithmetic ? "ar" : mean_type == MeanType::Geometric ? "gm" : "hm";
        return "SMA:" + n + ":" + mean;
    }
    case PredictorKind::SES: return "SES:" + n + ":mse";
    case PredictorKind::LinExt: return "LinExt:" + n;
    case PredictorKind::HW: return "HW:" + n + ":mse";
    }
    return {};
}

void PredictorSpec::validate() const
{
    const int minimum = kind == PredictorKind::SMA ? 1 : kind == PredictorKind::HW ? 3 : 2;
    if (n_past < minimum)
        throw ConfigError(to_string() + " needs at least " + std::to_string(minimum) + " past values");
}

double ses_forecast(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha)
{
    double level = past[0];
    for (Eigen::Index k = 1; k < past.size(); ++k) level += alpha * (past[k] - level);
    return level;
}

double ses_mse(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha)
{
    double level = past[0];
    double sse = 0.0;
    for (Eigen::Index k = 1; k < past.size(); ++k) {
        const double err = past[k] - level;
        sse += err * err;
        level += alpha * err;
    }
    return sse / static_cast<double>(past.size() - 1);
}

SmoothingFit fit_ses(const Eigen::Ref<const Eigen::VectorXd>& past)
{
    if (past.size() < 2) throw TooFewSamples("SES needs at least 2 past values");
    const double tol = tie_tolerance(past);

    std::array<double, kCoarsePoints> grid{};
    std::size_t best = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        grid[g] = ses_mse(past, kCoarseStep * static_cast<double>(g));
        if (grid[g] < grid[best] - tol) best = g;
    }
    SmoothingFit fit;
    fit.alpha = kCoarseStep * static_cast<double>(best);
    fit.mse = grid[best];

    const auto objective = [&](const Eigen::VectorXd& a) { return ses_mse(past, a[0]); };
    detail::SearchOptions options;
    options.initial_step = kCoarseStep / 2;
    options.tolerance = tol;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const bool left_ok = g == 0 || grid[g] <= grid[g - 1];
        const bool right_ok = g + 1 == grid.size() || grid[g] <= grid[g + 1];
        if (!left_ok || !right_ok) continue;
        const double centre = kCoarseStep * static_cast<double>(g);
        const Eigen::VectorXd lo = Eigen::VectorXd::Constant(1, std::max(0.0, centre - kCoarseStep));
        const Eigen::VectorXd hi = Eigen::VectorXd::Constant(1, std::min(1.0, centre + kCoarseStep));
        const auto r = detail::pattern_search(objective, Eigen::VectorXd::Constant(1, centre), lo, hi, options);
        if (r.value < fit.mse - tol || (r.value <= fit.mse + tol && r.x[0] < fit.alpha)) {
            fit.alpha = r.x[0];
            fit.mse = r.value;
        }
    }
    fit.prediction = ses_forecast(past, fit.alpha);
    return fit;
}

double predict_ses(const Eigen::Ref<const Eigen::VectorXd>& past) { return fit_ses(past).prediction; }

namespace {

template <typename Visit>
void hw_run(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha, double beta, double& level, double& trend,
            Visit&& visit)
{
    level = past[1];
    trend = past[1] - past[0];
    for (Eigen::Index k = 2; k < past.size(); ++k) {
        const double forecast = level + trend;
        const double err = past[k] - forecast;
        visit(err);
        const double next = forecast + alpha * err;
        trend += beta * (next - level - trend);
        level = next;
    }
}

}  // namespace

double hw_forecast(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha, double beta)
{
    double level = 0.0;
    double trend = 0.0;
    hw_run(past, alpha, beta, level, trend, [](double) {});
    return level + trend;
}

double hw_mse(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha, double beta)
{
    double level = 0.0;
    double trend = 0.0;
    double sse = 0.0;
    hw_run(past, alpha, beta, level, trend, [&](double err) { sse += err * err; });
    return sse / static_cast<double>(past.size() - 2);
}

SmoothingFit fit_hw(const Eigen::Ref<const Eigen::VectorXd>& past)
{
    if (past.size() < 3) throw TooFewSamples("HW needs at least 3 past values");
    const double tol = tie_tolerance(past);

    Eigen::Matrix<double, kCoarsePoints, kCoarsePoints> grid;
    int best_a = 0;
    int best_b = 0;
    for (int a = 0; a < kCoarsePoints; ++a) {
        for (int b = 0; b < kCoarsePoints; ++b) {
            grid(a, b) = hw_mse(past, kCoarseStep * a, kCoarseStep * b);
            if (grid(a, b) < grid(best_a, best_b) - tol) {
                best_a = a;
                best_b = b;
            }
        }
    }
    SmoothingFit fit;
    fit.alpha = kCoarseStep * best_a;
    fit.beta = kCoarseStep * best_b;
    fit.mse = grid(best_a, best_b);

    // Discrete local minima of the coarse grid seed the refinement.
    struct Seed {
        double value;
        int a;
        int b;
    };
    std::vector<Seed> seeds;
    for (int a = 0; a < kCoarsePoints; ++a) {
        for (int b = 0; b < kCoarsePoints; ++b) {
            bool is_min = true;
            for (int da = -1; da <= 1 && is_min; ++da) {
                for (int db = -1; db <= 1; ++db) {
                    const int na = a + da;
                    const int nb = b + db;
                    if ((da == 0 && db == 0) || na < 0 || nb < 0 || na >= kCoarsePoints || nb >= kCoarsePoints)
                        continue;
                    if (grid(na, nb) < grid(a, b) - tol) {
                        is_min = false;
                        break;
                    }
                }
            }
            if (is_min) seeds.push_back({grid(a, b), a, b});
        }
    }
    // Order by value quantized to the tie tolerance, then by grid position, so
    // rounding noise in near-equal values does not reorder seeds.
    const auto bucket = [tol](double v) { return std::floor(v / tol); };
    std::stable_sort(seeds.begin(), seeds.end(), [&](const Seed& l, const Seed& r) {
        const double bl = bucket(l.value);
        const double br = bucket(r.value);
        if (bl != br) return bl < br;
        return std::pair(l.a, l.b) < std::pair(r.a, r.b);
    });
    if (seeds.size() > kMaxRefinements) seeds.resize(kMaxRefinements);

    const auto objective = [&](const Eigen::VectorXd& p) { return hw_mse(past, p[0], p[1]); };
    detail::SearchOptions options;
    options.initial_step = kCoarseStep / 2;
    options.tolerance = tol;
    const Eigen::VectorXd lower = Eigen::VectorXd::Zero(2);
    const Eigen::VectorXd upper = Eigen::VectorXd::Ones(2);
    for (const auto& seed : seeds) {
        const Eigen::Vector2d start(kCoarseStep * seed.a, kCoarseStep * seed.b);
        const auto r = detail::pattern_search(objective, start, lower, upper, options);
        const bool better = r.value < fit.mse - tol;
        const bool tie_smaller = r.value <= fit.mse + tol
                                 && (r.x[0] < fit.alpha || (r.x[0] == fit.alpha && r.x[1] < fit.beta));
        if (better || tie_smaller) {
            fit.alpha = r.x[0];
            fit.beta = r.x[1];
            fit.mse = r.value;
        }
    }
    fit.prediction = hw_forecast(past, fit.alpha, fit.beta);
    return fit;
}

double predict_hw(const Eigen::Ref<const Eigen::VectorXd>& past) { return fit_hw(past).prediction; }

Prediction predict(const PredictorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& past)
{
    const auto n = std::min<Eigen::Index>(spec.n_past, past.size());
    const auto input = past.tail(n);
    switch (spec.kind) {
    case PredictorKind::SMA: return predict_sma_flagged(input, spec.mean_type);
    case PredictorKind::SES: return {predict_ses(input), false};
    case PredictorKind::LinExt: return {predict_linext(input), false};
    case PredictorKind::HW: return {predict_hw(input), false};
    }
    return {};
}

Eigen::VectorXd horizon_means(const WindowedSeries& series, int horizon_s)
{
    if (horizon_s < 1) throw ConfigError("horizon must be at least 1 s");
    if (series.window_s == horizon_s) return series.values;
    if (series.window_s != 1)
        throw ConfigError("series windowed at " + std::to_string(series.window_s)
                          + " s cannot produce horizon " + std::to_string(horizon_s) + " s");
    const auto n = series.values.size();
    if (horizon_s > n) return Eigen::VectorXd();
    Eigen::VectorXd prefix(n + 1);
    prefix[0] = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + series.values[k];
    Eigen::VectorXd means(n - horizon_s + 1);
    for (Eigen::Index k = 0; k < means.size(); ++k) means[k] = (prefix[k + horizon_s] - prefix[k]) / horizon_s;
    return means;
}

std::vector<PredictionRecord> evaluate_predictor(const WindowedSeries& series, const PredictorSpec& spec,
                                                 int horizon_s, double rho_min)
{
    spec.validate();
    const Eigen::VectorXd means = horizon_means(series, horizon_s);
    const Eigen::Index seconds = means.size() + horizon_s - 1;
    const Eigen::Index first = static_cast<Eigen::Index>(spec.n_past) * horizon_s;
    const Eigen::Index last = seconds - horizon_s;
    if (means.size() == 0 || first > last)
        throw SeriesTooShort("need " + std::to_string(first + horizon_s) + " s for " + spec.to_string()
                             + " at horizon " + std::to_string(horizon_s) + " s");

    std::vector<PredictionRecord> records;
    records.reserve(static_cast<std::size_t>(last - first + 1));
    Eigen::VectorXd past(spec.n_past);
    for (Eigen::Index t = first; t <= last; ++t) {
        for (int q = 0; q < spec.n_past; ++q) past[q] = means[t - (spec.n_past - q) * horizon_s];
        const Prediction p = predict(spec, past);
        PredictionRecord rec;
        rec.t_issued = t;
        rec.horizon_s = horizon_s;
        rec.rho_hat = p.value;
        rec.rho_actual = means[t];
        rec.signed_error = signed_relative_error(p.value, means[t], rho_min);
        rec.fell_back = p.fell_back;
        records.push_back(rec);
    }
    return records;
}

}  // namespace hals
