#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hals/errors.hpp"
#include "hals/traces.hpp"

namespace hals {

enum class PredictorKind { SMA, SES, LinExt, HW };
enum class MeanType { Arithmetic, Geometric, Harmonic };

/// Written as "<kind>:<n>[:<param>]", e.g. "SMA:1:ar", "SES:5:mse", "LinExt:3", "HW:10:mse".
struct PredictorSpec {
    PredictorKind kind = PredictorKind::SMA;
    int n_past = 1;
    MeanType mean_type = MeanType::Arithmetic;

    static PredictorSpec parse(const std::string& text);
    std::string to_string() const;
    void validate() const;
};

struct Prediction {
    double value = 0.0;
    bool fell_back = false;  // gm/hm saw a non-positive sample and used the arithmetic mean
};

struct PredictionRecord {
    std::int64_t t_issued = 0;
    int horizon_s = 1;
    double rho_hat = 0.0;
    double rho_actual = 0.0;
    double signed_error = 0.0;
    bool fell_back = false;
};

/// Result of tuning a smoothing predictor on its own input.
struct SmoothingFit {
    double prediction = 0.0;
    double alpha = 0.0;
    double beta = 0.0;  // Holt-Winters only
    double mse = 0.0;
};

template <typename Derived>
Prediction predict_sma_flagged(const Eigen::DenseBase<Derived>& past, MeanType mean_type)
{
    if (past.size() == 0) throw EmptyInput("SMA needs at least one past value");
    const auto x = past.derived().template cast<double>().array().eval();
    if (mean_type != MeanType::Arithmetic && (x <= 0.0).any()) return {x.mean(), true};
    switch (mean_type) {
    case MeanType::Geometric: return {std::exp(x.log().mean()), false};
    case MeanType::Harmonic: return {static_cast<double>(x.size()) / x.inverse().sum(), false};
    case MeanType::Arithmetic: break;
    }
    return {x.mean(), false};
}

template <typename Derived>
double predict_sma(const Eigen::DenseBase<Derived>& past, MeanType mean_type = MeanType::Arithmetic)
{
    return predict_sma_flagged(past, mean_type).value;
}

/// Least-squares line through (1, x_1) .. (n, x_n), evaluated at n + 1.
template <typename Derived>
double predict_linext(const Eigen::DenseBase<Derived>& past)
{
    const auto n = past.size();
    if (n < 2) throw TooFewSamples("LinExt needs at least 2 past values");
    const Eigen::ArrayXd x = past.derived().template cast<double>().array();
    const Eigen::ArrayXd t = Eigen::ArrayXd::LinSpaced(n, 1.0, static_cast<double>(n));
    const double t_mean = 0.5 * static_cast<double>(n + 1);
    const double x_mean = x.mean();
    const double slope = ((t - t_mean) * (x - x_mean)).sum() / (t - t_mean).square().sum();
    return x_mean + slope * (static_cast<double>(n + 1) - t_mean);
}

double ses_forecast(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha);
double ses_mse(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha);
SmoothingFit fit_ses(const Eigen::Ref<const Eigen::VectorXd>& past);
double predict_ses(const Eigen::Ref<const Eigen::VectorXd>& past);

double hw_forecast(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha, double beta);
double hw_mse(const Eigen::Ref<const Eigen::VectorXd>& past, double alpha, double beta);
SmoothingFit fit_hw(const Eigen::Ref<const Eigen::VectorXd>& past);
double predict_hw(const Eigen::Ref<const Eigen::VectorXd>& past);

/// Dispatches on spec.kind; uses the last spec.n_past entries of past.
Prediction predict(const PredictorSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& past);

/// Signed relative error with both rates floored at rho_min. Positive means overestimation.
inline double signed_relative_error(double rho_hat, double rho, double rho_min)
{
    const double actual = std::max(rho, rho_min);
    return (std::max(rho_hat, rho_min) - actual) / actual;
}

/// Means over [k, k + horizon_s) for every k, derived from a 1 s series or
/// taken directly from a series already windowed at horizon_s.
Eigen::VectorXd horizon_means(const WindowedSeries& series, int horizon_s);

/// One record per admissible issue time t: the past inputs are n_past
/// back-to-back horizon-length means ending at t, the target is the mean over
/// [t, t + horizon_s).
std::vector<PredictionRecord> evaluate_predictor(const WindowedSeries& series, const PredictorSpec& spec,
                                                 int horizon_s, double rho_min);

}  // namespace hals
