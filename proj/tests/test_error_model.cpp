#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "hals/error_model.hpp"
#include "hals/errors.hpp"

using namespace hals;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> lomax_samples(double scale, double shape, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& x : out) x = scale * (std::pow(1.0 - u(rng), -1.0 / shape) - 1.0);
    return out;
}

// Composite Simpson on [0, x] of the Lomax density.
double lomax_integral(double scale, double shape, double x)
{
    const auto pdf = [&](double t) { return shape / scale * std::pow(1.0 + t / scale, -shape - 1.0); };
    const int n = 20000;
    const double h = x / n;
    double sum = pdf(0) + pdf(x);
    for (int k = 1; k < n; ++k) sum += (k % 2 ? 4.0 : 2.0) * pdf(k * h);
    return sum * h / 3.0;
}

PredictionRecord record(std::int64_t t, double e, int horizon = 1)
{
    PredictionRecord r;
    r.t_issued = t;
    r.horizon_s = horizon;
    r.rho_hat = 1e6 * (1 + e);
    r.rho_actual = 1e6;
    r.signed_error = e;
    return r;
}

}  // namespace

TEST_CASE("ecdf examples")
{
    const std::vector<double> one{1};
    const auto f = ecdf(one);
    CHECK(f(0.999) == 0);
    CHECK(f(1) == 1);

    const std::vector<double> two{1, 2};
    CHECK(ecdf(two)(1) == 0.5);
    CHECK(ecdf(two)(2) == 1);
    CHECK(ecdf(two).left_limit(2) == 0.5);

    const std::vector<double> a{3, 1, 2}, b{1, 2, 3};
    for (double x : {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0}) CHECK(ecdf(a)(x) == ecdf(b)(x));

    CHECK_THROWS_AS(ecdf(std::vector<double>{}), EmptyInput);
}

TEST_CASE("truncation examples")
{
    const auto n = truncate(ErrorDistribution::normal(0.5, 10), 0, 1);
    CHECK(n.cdf(0.5) == doctest::Approx(0.5));
    CHECK(n.cdf(0) == 0);
    CHECK(n.cdf(1) == 1);
    CHECK(n.cdf(-3) == 0);
    CHECK(n.cdf(7) == 1);

    const auto l = ErrorDistribution::lomax(1, 1);
    CHECK(l.cdf(1) == doctest::Approx(0.5));
    const auto lt = truncate(l, 0, kInf);
    for (double x : {0.1, 1.0, 5.0, 100.0}) CHECK(lt.cdf(x) == doctest::Approx(l.cdf(x)).epsilon(1e-14));

    const auto g = ErrorDistribution::logistic(0.2, 0.3);
    const auto gt = truncate(g, -kInf, kInf);
    for (double x : {-2.0, 0.0, 0.4, 3.0}) CHECK(gt.cdf(x) == doctest::Approx(g.cdf(x)).epsilon(1e-14));

    CHECK_THROWS_AS(truncate(ErrorDistribution::lomax(1, 1), -2, -1), DegenerateTruncation);
    CHECK_THROWS_AS(truncate(ErrorDistribution::normal(0, 1), 1, 1), DegenerateTruncation);
}

TEST_CASE("truncation follows the rescaling formula")
{
    for (const auto& d : {ErrorDistribution::normal(0.3, 0.4), ErrorDistribution::logistic(-0.2, 0.5),
                          ErrorDistribution::exponential(2.5), ErrorDistribution::lomax(0.7, 1.8)}) {
        const double a = 0.05, b = 0.9;
        const auto t = truncate(d, a, b);
        for (double x = a; x <= b; x += 0.05) {
            const double expect = (d.base_cdf(x) - d.base_cdf(a)) / (d.base_cdf(b) - d.base_cdf(a));
            CHECK(t.cdf(x) == doctest::Approx(expect).epsilon(1e-12));
            CHECK(t.quantile(t.cdf(x)) == doctest::Approx(x).epsilon(1e-9));
        }
    }
}

TEST_CASE("nested truncation equals the inner truncation")
{
    for (const auto& d : {ErrorDistribution::normal(0.1, 0.7), ErrorDistribution::logistic(1, 2),
                          ErrorDistribution::lomax(0.5, 1.5), ErrorDistribution::exponential(0.8)}) {
        const auto outer = truncate(d, 0.0, 3.0);
        const auto twice = truncate(outer, 0.2, 1.4);
        const auto once = truncate(d, 0.2, 1.4);
        for (double x = 0.0; x <= 2.0; x += 0.01) CHECK(twice.cdf(x) == doctest::Approx(once.cdf(x)).epsilon(1e-12));
    }
}

TEST_CASE("far tails keep precision")
{
    const auto t = truncate(ErrorDistribution::normal(-20, 1), 0, 1);
    CHECK(t.cdf(0.5) > 0);
    CHECK(t.cdf(0.5) <= 1);
    CHECK(t.cdf(1) == 1);
}

TEST_CASE("lomax closed form matches numerical integration")
{
    const double scale = 0.5, shape = 1.5;
    const auto d = ErrorDistribution::lomax(scale, shape);
    for (int k = 1; k <= 100; ++k) {
        const double x = 0.05 * k;
        CHECK(std::abs(d.cdf(x) - lomax_integral(scale, shape, x)) <= 1e-9);
    }
}

TEST_CASE("ks distance examples")
{
    const auto median = ErrorDistribution::normal(0, 1);
    CHECK(ks_distance(std::vector<double>{0.0}, median) == doctest::Approx(0.5));
    CHECK_THROWS_AS(ks_distance(std::vector<double>{}, median), EmptyInput);

    const auto d = ErrorDistribution::lomax(0.5, 2);
    for (int n : {5, 20, 100}) {
        std::vector<double> q;
        for (int k = 1; k <= n; ++k) q.push_back(d.quantile(static_cast<double>(k) / (n + 1)));
        CHECK(ks_distance(q, d) <= 1.0 / (n + 1) + 1e-12);
    }

    const std::vector<double> s{0.1, 0.25, 0.3, 0.8};
    const auto g = ErrorDistribution::logistic(0.4, 0.2);
    double oracle = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        oracle = std::max(oracle, std::abs((k + 1.0) / s.size() - g.cdf(s[k])));
        oracle = std::max(oracle, std::abs(static_cast<double>(k) / s.size() - g.cdf(s[k])));
    }
    CHECK(ks_distance(s, g) == doctest::Approx(oracle));
}

TEST_CASE("lomax fit recovers its parameters")
{
    const auto x = lomax_samples(0.5, 2.0, 5000, 17);
    const auto fit = fit_distribution(x, Family::Lomax, kOverTruncation, Interval{0.0, kInf});
    const auto& p = fit.distribution.params();
    CHECK(std::abs(p[0] - 0.5) <= 0.15 * 0.5);
    CHECK(std::abs(p[1] - 2.0) <= 0.15 * 2.0);

    const auto normal = fit_distribution(x, Family::Normal, kOverTruncation, Interval{0.0, kInf});
    CHECK(ks_distance(x, normal.distribution) > ks_distance(x, fit.distribution));
}

TEST_CASE("point mass fit collapses the normal")
{
    const std::vector<double> x(20, 0.3);
    const auto fit = fit_distribution(x, Family::Normal, kUnderTruncation, kUnderFitRange);
    CHECK(fit.distribution.params()[0] == doctest::Approx(0.3).epsilon(1e-3));
    CHECK(fit.distribution.params()[1] <= 1e-3);
}

TEST_CASE("fits are deterministic and need enough samples")
{
    const auto x = lomax_samples(0.3, 1.2, 300, 4);
    for (auto family : {Family::Exponential, Family::Normal, Family::Logistic, Family::Lomax}) {
        const auto a = fit_distribution(x, family, kOverTruncation, kOverFitRange);
        const auto b = fit_distribution(x, family, kOverTruncation, kOverFitRange);
        CHECK(a.distribution.params() == b.distribution.params());
        CHECK(a.objective == b.objective);
    }
    const std::vector<double> few{0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.05};
    CHECK_THROWS_AS(fit_distribution(few, Family::Normal, kUnderTruncation, kUnderFitRange), TooFewSamples);
}

TEST_CASE("fitted parameters are a local minimum of the objective")
{
    const auto x = lomax_samples(0.4, 1.6, 400, 8);
    const auto fit = fit_distribution(x, Family::Lomax, kOverTruncation, kOverFitRange);
    const Ecdf f(x);
    const auto objective = [&](const Eigen::Vector2d& p) {
        const auto d = truncate(ErrorDistribution::from_params(Family::Lomax, p), 0, kInf);
        double sum = 0;
        for (double v : x)
            if (v >= kOverFitRange.lo && v <= kOverFitRange.hi) sum += std::pow(d.cdf(v) - f(v), 2);
        return sum;
    };
    const auto best = fit.distribution.params();
    const double at = objective(best);
    for (double dx : {-0.01, 0.01})
        for (int axis : {0, 1}) {
            Eigen::Vector2d p = best;
            p[axis] *= 1 + dx;
            CHECK(objective(p) >= at - 1e-12);
        }
}

TEST_CASE("sign probability examples")
{
    const std::vector<double> alt{-0.1, 0.2, -0.3, 0.1, 0.0};
    const auto a = conditional_sign_probabilities(alt);
    CHECK(a.p_u == doctest::Approx(0.6));
    CHECK(a.p_u_given_u == 0);
    CHECK(a.p_o_given_o == 0);

    const auto b = conditional_sign_probabilities(std::vector<double>{-0.1, -0.2, 0.0});
    CHECK(b.p_u == 1);
    CHECK(b.p_u_given_u == 1);

    const auto c = conditional_sign_probabilities(std::vector<double>{-0.1, 0.4});
    CHECK_FALSE(c.over_origin_observed);
    CHECK(c.p_u_given_o() == doctest::Approx(c.p_u));

    CHECK_THROWS_AS(conditional_sign_probabilities(std::vector<double>{0.1}), TooFewSamples);
}

TEST_CASE("sign chain stationary probability matches the marginal")
{
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto [puu, poo] : {std::pair{0.8, 0.6}, std::pair{0.3, 0.3}, std::pair{0.95, 0.5}}) {
        std::vector<double> e;
        bool under = true;
        for (int k = 0; k < 20000; ++k) {
            e.push_back(under ? -0.1 : 0.1);
            under = under ? u(rng) < puu : u(rng) >= poo;
        }
        const auto s = conditional_sign_probabilities(e);
        const double stationary = (1 - s.p_o_given_o) / ((1 - s.p_u_given_u) + (1 - s.p_o_given_o));
        CHECK(std::abs(stationary - s.p_u) <= 0.1);
        CHECK(s.p_u_given_u == doctest::Approx(puu).epsilon(0.05));
    }
}

TEST_CASE("error model state update")
{
    ErrorModelState empty({});
    CHECK(empty.effective_p_under() == 0.5);

    ErrorModelState s({});
    s.update(record(10, -0.2), 11);
    CHECK(s.history().size() == 1);
    CHECK(s.under_fallback());
    CHECK(s.over_fallback());
    CHECK(s.last_sign() == Sign::Under);
    CHECK_THROWS_AS(s.update(record(11, 0.1, 2), 12), HorizonMismatch);

    ErrorModelConfig cfg;
    cfg.alpha_cdf = 120;
    ErrorModelState w(cfg);
    for (int t = 0; t < 200; ++t) w.update(record(t, t % 3 ? 0.1 : -0.1), t + 1);
    CHECK(w.history().size() == 121);
    for (const auto& r : w.history()) CHECK(200.0 - static_cast<double>(r.t_issued + r.horizon_s) <= 120.0);

    ErrorModelState alt({});
    for (int t = 0; t < 60; ++t) alt.update(record(t, t % 2 ? 0.3 : -0.3), t + 1);
    CHECK(alt.sign_probabilities().p_u_given_u <= 0.05);
    CHECK(alt.last_sign() == Sign::Over);
    CHECK(alt.effective_p_under() == doctest::Approx(1.0));
}

TEST_CASE("error model fits once a side has enough samples")
{
    ErrorModelState s({});
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.1, 0.9);
    for (int t = 0; t < 40; ++t) s.update(record(t, t % 2 ? u(rng) : -u(rng)), t + 1);
    CHECK_FALSE(s.under_fallback());
    CHECK_FALSE(s.over_fallback());
}

TEST_CASE("composed cdf examples")
{
    ComposedErrorModel m;
    m.p_under = 0.5;
    m.over = truncate(ErrorDistribution::lomax(1, 1), 0, kInf);
    CHECK(m.cdf(0) == doctest::Approx(0.5));
    CHECK(m.cdf(1) == doctest::Approx(0.75));
    CHECK(m.cdf(1e300) == doctest::Approx(1));
    CHECK(m.cdf(-1) == doctest::Approx(0).epsilon(1e-12));
    CHECK(m.cdf(-2) == 0);

    m.under = truncate(ErrorDistribution::normal(0.3, 0.2), 0, 1);
    CHECK(m.cdf(-0.3) == doctest::Approx(0.5 * (1 - m.under.cdf(0.3))));
}

TEST_CASE("composed cdf is monotone on random states")
{
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.05, 3);
    std::uniform_real_distribution<double> p(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        ComposedErrorModel m;
        m.p_under = p(rng);
        m.under = truncate(trial % 2 ? ErrorDistribution::normal(p(rng), u(rng)) : ErrorDistribution::logistic(p(rng), u(rng)),
                           0, 1);
        m.over = truncate(ErrorDistribution::lomax(u(rng), u(rng)), 0, kInf);
        double prev = -1;
        for (double x = -0.999; x < 1e3; x = x < 2 ? x + 0.001 : x * 1.05) {
            const double c = m.cdf(x);
            CHECK(c >= prev);
            CHECK(c >= 0);
            CHECK(c <= 1);
            prev = c;
        }
    }
}

TEST_CASE("state snapshot uses the configured sign mode")
{
    ErrorModelConfig cfg;
    cfg.pu_mode = PuMode::Marginal;
    ErrorModelState s(cfg);
    for (int t = 0; t < 30; ++t) s.update(record(t, t % 3 == 0 ? 0.2 : -0.2), t + 1);
    CHECK(s.effective_p_under() == doctest::Approx(s.sign_probabilities().p_u));
    CHECK(s.snapshot().p_under == s.effective_p_under());
    CHECK(composed_cdf(s, 0.0) == doctest::Approx(s.effective_p_under()));
}
