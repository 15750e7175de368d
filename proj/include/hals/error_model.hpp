#pragma once

#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hals/predictors.hpp"

namespace hals {

enum class Family { Exponential, Normal, Logistic, Lomax };

std::string to_string(Family family);
Family parse_family(const std::string& name);

/// A parametric distribution on the real line, optionally truncated to
/// [lower, upper]. Parameters by family:
///   Exponential: rate
///   Normal:      mean, standard deviation
///   Logistic:    location, scale
///   Lomax:       scale, shape   (F(x) = 1 - (1 + x/scale)^-shape, x >= 0)
class ErrorDistribution {
public:
    static ErrorDistribution exponential(double rate);
    static ErrorDistribution normal(double mean, double sd);
    static ErrorDistribution logistic(double location, double scale);
    static ErrorDistribution lomax(double scale, double shape);
    static ErrorDistribution from_params(Family family, const Eigen::Vector2d& params);

    Family family() const { return family_; }
    const Eigen::Vector2d& params() const { return params_; }
    int param_count() const { return family_ == Family::Exponential ? 1 : 2; }
    double lower() const { return lower_; }
    double upper() const { return upper_; }

    /// Untruncated CDF and survival function.
    double base_cdf(double x) const;
    double base_sf(double x) const;
    double base_quantile(double p) const;

    /// Truncated CDF: 0 below lower(), 1 above upper().
    double cdf(double x) const;
    double quantile(double u) const;

    friend ErrorDistribution truncate(const ErrorDistribution& dist, double a, double b);

private:
    ErrorDistribution(Family family, Eigen::Vector2d params);

    // Mass of the base distribution inside [lower, upper], computed from
    // whichever tail keeps precision.
    double mass_between(double a, double b) const;

    Family family_;
    Eigen::Vector2d params_;
    double lower_ = -std::numeric_limits<double>::infinity();
    double upper_ = std::numeric_limits<double>::infinity();
    bool use_upper_tail_ = false;
    double mass_ = 1.0;
};

/// F_tr(x) = (F(x) - F(a)) / (F(b) - F(a)). Truncation is always relative to
/// the untruncated distribution, intersected with any existing range.
ErrorDistribution truncate(const ErrorDistribution& dist, double a, double b);

/// Right-continuous empirical CDF.
class Ecdf {
public:
    explicit Ecdf(std::span<const double> samples);

    double operator()(double x) const;
    double left_limit(double x) const;
    std::size_t size() const { return sorted_.size(); }
    const std::vector<double>& sorted() const { return sorted_; }

private:
    std::vector<double> sorted_;
};

Ecdf ecdf(std::span<const double> samples);

/// sup |ECDF - F| checked on both sides of every jump.
double ks_distance(std::span<const double> samples, const ErrorDistribution& dist);

struct Interval {
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
};

inline constexpr Interval kUnderTruncation{0.0, 1.0};
inline constexpr Interval kOverTruncation{0.0, std::numeric_limits<double>::infinity()};
inline constexpr Interval kUnderFitRange{0.1, 1.0};
inline constexpr Interval kOverFitRange{0.1, 2.0};
inline constexpr std::size_t kMinFitSamples = 8;

struct FitOptions {
    // When set, a single search starts here instead of the fixed multi-start set.
    std::optional<Eigen::Vector2d> warm_start;
    double initial_step = 0.5;
    double min_step = 1e-7;
    int max_evaluations = 20000;
};

struct FitResult {
    ErrorDistribution distribution;
    double objective = 0.0;
    std::size_t samples_in_range = 0;
};

/// Least-squares fit of F_tr to the empirical CDF, evaluated at the samples
/// that fall inside fit_range. The ECDF is built from all samples.
FitResult fit_distribution(std::span<const double> samples, Family family, Interval truncation, Interval fit_range,
                           const FitOptions& options = {});

struct SignProbabilities {
    double p_u = 0.5;
    double p_u_given_u = 0.5;
    double p_o_given_o = 0.5;
    // False when no transition out of that sign was seen; the value then falls back to the marginal.
    bool under_origin_observed = false;
    bool over_origin_observed = false;

    double p_u_given_o() const { return 1.0 - p_o_given_o; }
};

/// Zero errors count as underestimations. Transitions pair element k with
/// element k - stride.
SignProbabilities conditional_sign_probabilities(std::span<const double> signed_errors, std::size_t stride = 1);

enum class PuMode { Marginal, Conditional };
enum class Sign { None, Under, Over };

/// Immutable view of a fitted per-horizon error model; composes the signed-error CDF.
struct ComposedErrorModel {
    ErrorDistribution under = truncate(ErrorDistribution::normal(0.0, 1e-6), 0.0, 1.0);
    ErrorDistribution over = truncate(ErrorDistribution::lomax(0.5, 1.5), 0.0, std::numeric_limits<double>::infinity());
    double p_under = 0.5;

    /// CDF of the signed relative error. Below zero the underestimation CDF is
    /// reflected so the result stays nondecreasing.
    double cdf(double x) const;
};

struct ErrorModelConfig {
    int horizon_s = 1;
    double alpha_cdf = 60.0;
    Family under_family = Family::Normal;
    Family over_family = Family::Lomax;
    PuMode pu_mode = PuMode::Conditional;

    double window_s() const { return alpha_cdf * horizon_s; }
};

/// Online per-horizon error model for one streaming session.
class ErrorModelState {
public:
    explicit ErrorModelState(ErrorModelConfig config);

    /// Evicts records realized more than window_s before now, appends the
    /// record, refits the sides whose samples changed and recomputes sign
    /// probabilities.
    void update(const PredictionRecord& record, double now);

    const ErrorModelConfig& config() const { return config_; }
    const std::deque<PredictionRecord>& history() const { return history_; }
    const SignProbabilities& sign_probabilities() const { return signs_; }
    Sign last_sign() const { return last_sign_; }
    bool under_fallback() const { return !under_fit_.has_value(); }
    bool over_fallback() const { return !over_fit_.has_value(); }

    /// P^u used for composition; marginal or conditioned on the last sign.
    double effective_p_under() const;
    ComposedErrorModel snapshot() const;

private:
    std::optional<ErrorDistribution> refit(const std::vector<double>& samples, Family family, Interval truncation,
                                           Interval fit_range, const std::optional<ErrorDistribution>& previous) const;
    ErrorDistribution under_distribution() const;
    ErrorDistribution over_distribution() const;

    ErrorModelConfig config_;
    std::deque<PredictionRecord> history_;
    std::vector<double> all_under_;
    std::vector<double> all_over_;
    std::optional<ErrorDistribution> under_fit_;
    std::optional<ErrorDistribution> over_fit_;
    // Fits over the whole session, used while the window is too sparse.
    mutable std::optional<std::optional<ErrorDistribution>> session_under_;
    mutable std::optional<std::optional<ErrorDistribution>> session_over_;
    SignProbabilities signs_;
    Sign last_sign_ = Sign::None;
};

double composed_cdf(const ErrorModelState& state, double x);

}  // namespace hals
