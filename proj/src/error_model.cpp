#include "hals/error_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/erf.hpp>

#include "hals/errors.hpp"
#include "pattern_search.hpp"

namespace hals {

namespace {

constexpr double kMinScale = 1e-6;
constexpr double kMaxScale = 1e6;
constexpr double kLocationBound = 100.0;
constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

bool is_location_scale(Family f) { return f == Family::Normal || f == Family::Logistic; }

// Search coordinates: log of positive parameters, locations as-is.
Eigen::Vector2d to_search(Family family, const Eigen::Vector2d& params)
{
    if (is_location_scale(family)) return {params[0], std::log(params[1])};
    if (family == Family::Exponential) return {std::log(params[0]), 0.0};
    return {std::log(params[0]), std::log(params[1])};
}

Eigen::Vector2d from_search(Family family, const Eigen::Vector2d& theta)
{
    if (is_location_scale(family)) return {theta[0], std::exp(theta[1])};
    if (family == Family::Exponential) return {std::exp(theta[0]), 0.0};
    return {std::exp(theta[0]), std::exp(theta[1])};
}

double sample_median(std::vector<double> v)
{
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

}  // namespace

std::string to_string(Family family)
{
    switch (family) {
    case Family::Exponential: return "exponential";
    case Family::Normal: return "normal";
    case Family::Logistic: return "logistic";
    case Family::Lomax: return "lomax";
    }
    return {};
}

Family parse_family(const std::string& name)
{
    if (name == "exponential") return Family::Exponential;
    if (name == "normal") return Family::Normal;
    if (name == "logistic") return Family::Logistic;
    if (name == "lomax") return Family::Lomax;
    throw ConfigError("unknown distribution family '" + name + "'");
}

ErrorDistribution::ErrorDistribution(Family family, Eigen::Vector2d params)
    : family_(family), params_(std::move(params))
{
    const bool ok = family == Family::Exponential ? params_[0] > 0.0
                    : is_location_scale(family)   ? std::isfinite(params_[0]) && params_[1] > 0.0
                                                  : params_[0] > 0.0 && params_[1] > 0.0;
    if (!ok) throw ConfigError(to_string(family) + ": parameters out of range");
}

ErrorDistribution ErrorDistribution::exponential(double rate) { return {Family::Exponential, {rate, 0.0}}; }
ErrorDistribution ErrorDistribution::normal(double mean, double sd) { return {Family::Normal, {mean, sd}}; }
ErrorDistribution ErrorDistribution::logistic(double location, double scale)
{
    return {Family::Logistic, {location, scale}};
}
ErrorDistribution ErrorDistribution::lomax(double scale, double shape) { return {Family::Lomax, {scale, shape}}; }
ErrorDistribution ErrorDistribution::from_params(Family family, const Eigen::Vector2d& params)
{
    return {family, params};
}

double ErrorDistribution::base_cdf(double x) const
{
    switch (family_) {
    case Family::Exponential: return x <= 0.0 ? 0.0 : -std::expm1(-params_[0] * x);
    case Family::Normal: return 0.5 * std::erfc(-(x - params_[0]) / (params_[1] * M_SQRT2));
    case Family::Logistic: return 1.0 / (1.0 + std::exp(-(x - params_[0]) / params_[1]));
    case Family::Lomax: return x <= 0.0 ? 0.0 : -std::expm1(-params_[1] * std::log1p(x / params_[0]));
    }
    return 0.0;
}

double ErrorDistribution::base_sf(double x) const
{
    switch (family_) {
    case Family::Exponential: return x <= 0.0 ? 1.0 : std::exp(-params_[0] * x);
    case Family::Normal: return 0.5 * std::erfc((x - params_[0]) / (params_[1] * M_SQRT2));
    case Family::Logistic: return 1.0 / (1.0 + std::exp((x - params_[0]) / params_[1]));
    case Family::Lomax: return x <= 0.0 ? 1.0 : std::exp(-params_[1] * std::log1p(x / params_[0]));
    }
    return 1.0;
}

double ErrorDistribution::base_quantile(double p) const
{
    if (p <= 0.0) return family_ == Family::Exponential || family_ == Family::Lomax ? 0.0 : -kInf;
    if (p >= 1.0) return kInf;
    switch (family_) {
    case Family::Exponential: return -std::log1p(-p) / params_[0];
    case Family::Normal: return params_[0] - params_[1] * M_SQRT2 * boost::math::erfc_inv(2.0 * p);
    case Family::Logistic: return params_[0] + params_[1] * std::log(p / (1.0 - p));
    case Family::Lomax: return params_[0] * std::expm1(-std::log1p(-p) / params_[1]);
    }
    return 0.0;
}

double ErrorDistribution::mass_between(double a, double b) const
{
    return use_upper_tail_ ? base_sf(a) - base_sf(b) : base_cdf(b) - base_cdf(a);
}

double ErrorDistribution::cdf(double x) const
{
    if (std::isnan(x)) return x;
    if (x <= lower_) return 0.0;
    if (x >= upper_) return 1.0;
    return clamp01(mass_between(lower_, x) / mass_);
}

double ErrorDistribution::quantile(double u) const
{
    u = clamp01(u);
    double q = 0.0;
    if (use_upper_tail_) {
        const double sf = base_sf(lower_) - u * mass_;
        q = base_quantile(1.0 - sf);
    } else {
        q = base_quantile(base_cdf(lower_) + u * mass_);
    }
    return std::clamp(q, lower_, upper_);
}

ErrorDistribution truncate(const ErrorDistribution& dist, double a, double b)
{
    ErrorDistribution out = dist;
    out.lower_ = std::max(a, dist.lower_);
    out.upper_ = std::min(b, dist.upper_);
    if (!(out.lower_ < out.upper_))
        throw DegenerateTruncation("empty range [" + std::to_string(a) + ", " + std::to_string(b) + "]");
    out.use_upper_tail_ = dist.base_cdf(out.lower_) > 0.5;
    out.mass_ = out.mass_between(out.lower_, out.upper_);
    if (!(out.mass_ > 0.0) || !std::isfinite(out.mass_))
        throw DegenerateTruncation(to_string(dist.family()) + " has no mass in [" + std::to_string(out.lower_) + ", "
                                   + std::to_string(out.upper_) + "]");
    return out;
}

Ecdf::Ecdf(std::span<const double> samples) : sorted_(samples.begin(), samples.end())
{
    if (sorted_.empty()) throw EmptyInput("ECDF of an empty sample");
    std::sort(sorted_.begin(), sorted_.end());
}

double Ecdf::operator()(double x) const
{
    const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

double Ecdf::left_limit(double x) const
{
    const auto it = std::lower_bound(sorted_.begin(), sorted_.end(), x);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
}

Ecdf ecdf(std::span<const double> samples) { return Ecdf(samples); }

double ks_distance(std::span<const double> samples, const ErrorDistribution& dist)
{
    if (samples.empty()) throw EmptyInput("KS distance of an empty sample");
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double f = dist.cdf(sorted[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

FitResult fit_distribution(std::span<const double> samples, Family family, Interval truncation, Interval fit_range,
                           const FitOptions& options)
{
    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());

    // Unique in-range points with multiplicity and right-continuous ECDF value.
    std::vector<double> xs;
    std::vector<double> weights;
    std::vector<double> targets;
    std::size_t in_range = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
        const double x = sorted[i];
        if (x >= fit_range.lo && x <= fit_range.hi) {
            xs.push_back(x);
            weights.push_back(static_cast<double>(j - i));
            targets.push_back(static_cast<double>(j) / n);
            in_range += j - i;
        }
        i = j;
    }
    if (in_range < kMinFitSamples)
        throw TooFewSamples(std::to_string(in_range) + " samples inside the fit range, need "
                            + std::to_string(kMinFitSamples));

    const auto objective_for = [&](const Eigen::Vector2d& params) {
        try {
            const auto dist = truncate(ErrorDistribution::from_params(family, params), truncation.lo, truncation.hi);
            double sum = 0.0;
            for (std::size_t k = 0; k < xs.size(); ++k) {
                const double r = dist.cdf(xs[k]) - targets[k];
                sum += weights[k] * r * r;
            }
            return std::isfinite(sum) ? sum : kInf;
        } catch (const Error&) {
            return kInf;
        }
    };

    // All in-range points identical: the location-scale families collapse onto it.
    if (is_location_scale(family) && xs.size() == 1) {
        const Eigen::Vector2d params(xs.front(), kMinScale);
        return {truncate(ErrorDistribution::from_params(family, params), truncation.lo, truncation.hi),
                objective_for(params), in_range};
    }

    const double log_lo = std::log(kMinScale);
    const double log_hi = std::log(kMaxScale);
    Eigen::VectorXd lower(2);
    Eigen::VectorXd upper(2);
    if (is_location_scale(family)) {
        lower << -kLocationBound, log_lo;
        upper << kLocationBound, log_hi;
    } else {
        lower << log_lo, log_lo;
        upper << log_hi, log_hi;
    }
    const int dims = family == Family::Exponential ? 1 : 2;
    lower.conservativeResize(dims);
    upper.conservativeResize(dims);

    std::vector<Eigen::Vector2d> starts;
    if (options.warm_start) {
        starts.push_back(*options.warm_start);
    } else {
        const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
        const double median = sample_median(sorted);
        double sd = 0.0;
        for (double v : sorted) sd += (v - mean) * (v - mean);
        sd = std::sqrt(sd / n);
        if (!(sd > 0.0)) sd = std::max(0.1 * std::abs(mean), 1e-3);
        const double typical = std::max(median > 0.0 ? median : mean, 1e-3);
        switch (family) {
        case Family::Exponential:
            for (double f : {0.5, 1.0, 2.0}) starts.emplace_back(f / std::max(mean, 1e-3), 0.0);
            break;
        case Family::Normal:
            starts.emplace_back(median, sd);
            starts.emplace_back(0.0, 2.0 * sd);
            starts.emplace_back(mean, 0.5 * sd);
            break;
        case Family::Logistic: {
            const double s = sd * std::sqrt(3.0) / M_PI;
            starts.emplace_back(median, s);
            starts.emplace_back(0.0, 2.0 * s);
            starts.emplace_back(mean, 0.5 * s);
            break;
        }
        case Family::Lomax:
            for (double shape : {1.0, 2.0, 4.0})
                starts.emplace_back(typical / std::expm1(std::log(2.0) / shape), shape);
            break;
        }
    }

    detail::SearchOptions search;
    search.initial_step = options.initial_step;
    search.min_step = options.min_step;
    search.max_evaluations = options.max_evaluations;
    const auto objective = [&](const Eigen::VectorXd& theta) {
        Eigen::Vector2d full = Eigen::Vector2d::Zero();
        full.head(theta.size()) = theta;
        return objective_for(from_search(family, full));
    };

    std::optional<detail::SearchResult> best;
    for (const auto& start : starts) {
        const Eigen::Vector2d theta = to_search(family, start);
        auto r = detail::pattern_search(objective, theta.head(dims), lower, upper, search);
        if (!best || r.value < best->value) best = std::move(r);
    }
    if (!best || !std::isfinite(best->value)) throw FitDiverged(to_string(family) + " fit has no finite objective");

    Eigen::Vector2d theta = Eigen::Vector2d::Zero();
    theta.head(dims) = best->x;
    const Eigen::Vector2d params = from_search(family, theta);
    return {truncate(ErrorDistribution::from_params(family, params), truncation.lo, truncation.hi), best->value,
            in_range};
}

SignProbabilities conditional_sign_probabilities(std::span<const double> signed_errors, std::size_t stride)
{
    if (stride == 0) stride = 1;
    if (signed_errors.size() < stride + 1)
        throw TooFewSamples("need at least " + std::to_string(stride + 1) + " errors for sign transitions");

    SignProbabilities out;
    const auto under = [](double e) { return e <= 0.0; };
    std::size_t n_under = 0;
    for (double e : signed_errors) n_under += under(e) ? 1 : 0;
    out.p_u = static_cast<double>(n_under) / static_cast<double>(signed_errors.size());

    std::size_t from_u = 0, u_to_u = 0, from_o = 0, o_to_o = 0;
    for (std::size_t k = stride; k < signed_errors.size(); ++k) {
        const bool prev = under(signed_errors[k - stride]);
        const bool cur = under(signed_errors[k]);
        if (prev) {
            ++from_u;
            u_to_u += cur ? 1 : 0;
        } else {
            ++from_o;
            o_to_o += cur ? 0 : 1;
        }
    }
    out.under_origin_observed = from_u > 0;
    out.over_origin_observed = from_o > 0;
    out.p_u_given_u = from_u > 0 ? static_cast<double>(u_to_u) / static_cast<double>(from_u) : out.p_u;
    out.p_o_given_o = from_o > 0 ? static_cast<double>(o_to_o) / static_cast<double>(from_o) : 1.0 - out.p_u;
    return out;
}

double ComposedErrorModel::cdf(double x) const
{
    if (std::isnan(x)) return x;
    if (x < 0.0) return clamp01(p_under * (1.0 - under.cdf(-x)));
    return clamp01(p_under + (1.0 - p_under) * over.cdf(x));
}

ErrorModelState::ErrorModelState(ErrorModelConfig config) : config_(config)
{
    if (config_.horizon_s < 1) throw ConfigError("horizon must be at least 1 s");
    if (!(config_.alpha_cdf > 0.0)) throw ConfigError("alpha_cdf must be positive");
}

std::optional<ErrorDistribution> ErrorModelState::refit(const std::vector<double>& samples, Family family,
                                                        Interval truncation, Interval fit_range,
                                                        const std::optional<ErrorDistribution>& previous) const
{
    std::size_t in_range = 0;
    for (double v : samples) in_range += (v >= fit_range.lo && v <= fit_range.hi) ? 1 : 0;
    if (in_range < kMinFitSamples) return std::nullopt;
    FitOptions options;
    if (previous) {
        options.warm_start = previous->params();
        options.initial_step = 0.1;
        options.min_step = 1e-3;
    } else {
        options.min_step = 1e-4;
    }
    try {
        return fit_distribution(samples, family, truncation, fit_range, options).distribution;
    } catch (const Error&) {
        return std::nullopt;
    }
}

void ErrorModelState::update(const PredictionRecord& record, double now)
{
    if (record.horizon_s != config_.horizon_s)
        throw HorizonMismatch("record horizon " + std::to_string(record.horizon_s) + " s, model horizon "
                              + std::to_string(config_.horizon_s) + " s");

    bool under_changed = false;
    bool over_changed = false;
    const auto mark = [&](double e) { (e <= 0.0 ? under_changed : over_changed) = true; };

    history_.push_back(record);
    mark(record.signed_error);
    (record.signed_error <= 0.0 ? all_under_ : all_over_).push_back(std::abs(record.signed_error));
    (record.signed_error <= 0.0 ? session_under_ : session_over_).reset();

    const double window = config_.window_s();
    while (!history_.empty()
           && now - static_cast<double>(history_.front().t_issued + history_.front().horizon_s) > window) {
        mark(history_.front().signed_error);
        history_.pop_front();
    }

    std::vector<double> under;
    std::vector<double> over;
    std::vector<double> errors;
    errors.reserve(history_.size());
    for (const auto& r : history_) {
        errors.push_back(r.signed_error);
        (r.signed_error <= 0.0 ? under : over).push_back(std::abs(r.signed_error));
    }
    if (under_changed)
        under_fit_ = refit(under, config_.under_family, kUnderTruncation, kUnderFitRange, under_fit_);
    if (over_changed) over_fit_ = refit(over, config_.over_family, kOverTruncation, kOverFitRange, over_fit_);

    // Consecutive predictions of one horizon cover back-to-back intervals
    // horizon_s seconds apart, so transitions pair issue times t - T and t.
    SignProbabilities signs;
    std::size_t n_under = 0;
    for (double e : errors) n_under += e <= 0.0 ? 1 : 0;
    signs.p_u = static_cast<double>(n_under) / static_cast<double>(errors.size());
    std::size_t from_u = 0, u_to_u = 0, from_o = 0, o_to_o = 0;
    std::size_t j = 0;
    for (std::size_t k = 0; k < history_.size(); ++k) {
        const auto target = history_[k].t_issued - config_.horizon_s;
        while (j < k && history_[j].t_issued < target) ++j;
        if (j >= k || history_[j].t_issued != target) continue;
        const bool prev = history_[j].signed_error <= 0.0;
        const bool cur = history_[k].signed_error <= 0.0;
        if (prev) {
            ++from_u;
            u_to_u += cur ? 1 : 0;
        } else {
            ++from_o;
            o_to_o += cur ? 0 : 1;
        }
    }
    signs.under_origin_observed = from_u > 0;
    signs.over_origin_observed = from_o > 0;
    signs.p_u_given_u = from_u > 0 ? static_cast<double>(u_to_u) / static_cast<double>(from_u) : signs.p_u;
    signs.p_o_given_o = from_o > 0 ? static_cast<double>(o_to_o) / static_cast<double>(from_o) : 1.0 - signs.p_u;
    signs_ = signs;

    last_sign_ = history_.back().signed_error <= 0.0 ? Sign::Under : Sign::Over;
}

double ErrorModelState::effective_p_under() const
{
    if (history_.empty()) return 0.5;
    if (config_.pu_mode == PuMode::Marginal) return signs_.p_u;
    switch (last_sign_) {
    case Sign::Under: return signs_.p_u_given_u;
    case Sign::Over: return signs_.p_u_given_o();
    case Sign::None: break;
    }
    return signs_.p_u;
}

ErrorDistribution ErrorModelState::under_distribution() const
{
    if (under_fit_) return *under_fit_;
    if (!session_under_) session_under_ = refit(all_under_, config_.under_family, kUnderTruncation, kUnderFitRange, {});
    if (*session_under_) return **session_under_;
    return ComposedErrorModel{}.under;
}

ErrorDistribution ErrorModelState::over_distribution() const
{
    if (over_fit_) return *over_fit_;
    if (!session_over_) session_over_ = refit(all_over_, config_.over_family, kOverTruncation, kOverFitRange, {});
    if (*session_over_) return **session_over_;
    return ComposedErrorModel{}.over;
}

ComposedErrorModel ErrorModelState::snapshot() const
{
    return {under_distribution(), over_distribution(), effective_p_under()};
}

double composed_cdf(const ErrorModelState& state, double x) { return state.snapshot().cdf(x); }

}  // namespace hals
