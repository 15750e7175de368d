#pragma once

#include <algorithm>
#include <functional>

#include <Eigen/Core>

namespace hals::detail {

struct SearchResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int evaluations = 0;
};

struct SearchOptions {
    double initial_step = 0.05;
    double min_step = 1e-9;
    int max_evaluations = 20000;
    // A move is taken only when it improves by more than this amount.
    double tolerance = 0.0;
};

/// Hooke-Jeeves pattern search inside the box [lower, upper]. Coordinate
/// exploration with step halving, plus a pattern move along the last
/// successful displacement.
template <typename Objective>
SearchResult pattern_search(const Objective& f, Eigen::VectorXd start, const Eigen::VectorXd& lower,
                            const Eigen::VectorXd& upper, const SearchOptions& options)
{
    const auto clamp = [&](Eigen::VectorXd x) {
        return x.cwiseMax(lower).cwiseMin(upper).eval();
    };
    SearchResult result;
    result.x = clamp(std::move(start));
    result.value = f(result.x);
    result.evaluations = 1;

    const auto explore = [&](Eigen::VectorXd base, double base_value, double step, double& out_value) {
        for (Eigen::Index d = 0; d < base.size(); ++d) {
            for (const double dir : {-1.0, 1.0}) {
                Eigen::VectorXd trial = base;
                trial[d] = std::clamp(trial[d] + dir * step, lower[d], upper[d]);
                if (trial[d] == base[d]) continue;
                const double v = f(trial);
                ++result.evaluations;
                if (v < base_value - options.tolerance) {
                    base = std::move(trial);
                    base_value = v;
                    break;
                }
            }
        }
        out_value = base_value;
        return base;
    };

    double step = options.initial_step;
    while (step >= options.min_step && result.evaluations < options.max_evaluations) {
        double value = 0.0;
        Eigen::VectorXd moved = explore(result.x, result.value, step, value);
        if (value < result.value - options.tolerance) {
            // Keep following the pattern while it pays off.
            while (result.evaluations < options.max_evaluations) {
                const Eigen::VectorXd direction = moved - result.x;
                result.x = moved;
                result.value = value;
                const Eigen::VectorXd jump = clamp(result.x + direction);
                double jump_value = f(jump);
                ++result.evaluations;
                double explored_value = 0.0;
                Eigen::VectorXd explored = explore(jump, jump_value, step, explored_value);
                if (explored_value < result.value - options.tolerance) {
                    moved = std::move(explored);
                    value = explored_value;
                } else {
                    break;
                }
            }
        } else {
            step *= 0.5;
        }
    }
    return result;
}

}  // namespace hals::detail
