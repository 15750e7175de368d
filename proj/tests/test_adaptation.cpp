#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "hals/adaptation.hpp"
#include "hals/errors.hpp"
#include "oracles.hpp"

using namespace hals;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

StreamManifest manifest_of(std::vector<double> rates, std::vector<double> psnr, double tau = 2.0)
{
    std::vector<Representation> reps;
    for (std::size_t j = 0; j < rates.size(); ++j) reps.push_back({rates[j], psnr[j]});
    return generate_manifest(tau, reps, 50, 0.0, 1);
}

struct Fixture {
    std::vector<double> predictions;
    std::vector<ComposedErrorModel> models;
    DecisionContext context;

    Fixture(std::int64_t segment, double t_request, double base_bps, std::mt19937_64* rng = nullptr)
    {
        std::uniform_real_distribution<double> u(0.2, 2.0);
        std::uniform_real_distribution<double> p(0.2, 0.8);
        for (int h = 1; h <= 10; ++h) {
            predictions.push_back(rng ? base_bps * u(*rng) : base_bps);
            ComposedErrorModel m;
            if (rng) {
                m.p_under = p(*rng);
                m.under = truncate(ErrorDistribution::normal(p(*rng) - 0.2, u(*rng) / 4), 0, 1);
                m.over = truncate(ErrorDistribution::lomax(u(*rng), u(*rng)), 0, kInf);
            }
            models.push_back(m);
        }
        context.segment = segment;
        context.t_request = t_request;
        context.t_pi = std::floor(t_request);
        context.delta_p = 5.0;
        context.predictions = predictions;
        context.models = models;
    }
};

}  // namespace

TEST_CASE("reachable horizon examples")
{
    CHECK(reachable_horizon(3, 6, 2, 5, 10) == 5);
    CHECK(reachable_horizon(0, 0, 2, 5, 10) == 2);
    CHECK(reachable_horizon(3, 6, 2, 5, 4) == 3);
    CHECK(reachable_horizon(3, 6, 2, 5, 1) == 3);
}

TEST_CASE("covering horizon")
{
    CHECK(covering_horizon(6, 11, 10) == 5);
    CHECK(covering_horizon(6, 10.5, 10) == 5);
    CHECK(covering_horizon(6, 6.2, 10) == 1);
    CHECK(covering_horizon(6, 30, 10) == 10);
}

TEST_CASE("rebuffer probability composition")
{
    const std::vector<double> met{1, 1, 1};
    CHECK(combine_rebuffer_probability(met, PrbMode::Product) == 0);
    CHECK(combine_rebuffer_probability(met, PrbMode::PaperSumClamped) == 0);
    const std::vector<double> one{0.6};
    CHECK(combine_rebuffer_probability(one, PrbMode::Product) == doctest::Approx(0.4));
    CHECK(combine_rebuffer_probability(one, PrbMode::PaperSumClamped) == doctest::Approx(0.4));
    const std::vector<double> two{0.9, 0.8};
    CHECK(combine_rebuffer_probability(two, PrbMode::Product) == doctest::Approx(0.28));
    CHECK(combine_rebuffer_probability(two, PrbMode::PaperSumClamped) == 0);
}

TEST_CASE("rebuffer subutility")
{
    CHECK(u_rb(0, -200) == 1);
    CHECK(u_rb(1, -200) == doctest::Approx(0).epsilon(1e-15));
    CHECK(u_rb(0.5, -1e-9) == doctest::Approx(0.5).epsilon(1e-6));
    // Far in the tail both exponentials are tiny; the ratio must keep relative precision.
    const double a = -229.3, p = 0.28;
    const double expect = std::exp(a * p) * (1 - std::exp(a * (1 - p)));
    CHECK(u_rb(p, a) > 0);
    CHECK(u_rb(p, a) == doctest::Approx(expect).epsilon(1e-12));
    double prev = 2;
    for (double p = 0; p <= 1; p += 0.01) {
        const double v = u_rb(p, -5);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("quality subutilities")
{
    const auto mf = manifest_of({1e5, 5e5, 1e6}, {30, 35, 40});
    Trajectory t{0, {0, 0}};
    CHECK(u_q(t, mf) == 0);
    t.choices = {2, 2};
    CHECK(u_q(t, mf) == 1);
    t.choices = {1, 1};
    CHECK(u_q(t, mf) == doctest::Approx(0.5));

    CHECK(u_qf(Trajectory{0, {1, 1, 1}}, mf, 1) == 1);
    CHECK(u_qf(Trajectory{0, {1, 2}}, mf, 1) == doctest::Approx(0.75));
    CHECK(u_qf(Trajectory{0, {2, 0}}, mf, std::nullopt) == doctest::Approx(0.5));

    const auto two = manifest_of({1e5, 1e6}, {30, 40});
    CHECK(u_qf(Trajectory{0, {1}}, two, 0) == 0);

    auto flat = mf;
    for (auto& r : flat.representations) r.psnr_db = 30;
    CHECK_THROWS_AS(u_q(0, flat), DegeneratePsnrRange);
}

TEST_CASE("utility examples")
{
    CHECK(utility(u_rb(1, -200), 1, 1, 0.6) == doctest::Approx(0).epsilon(1e-15));
    CHECK(utility(u_rb(0, -200), 1, 1, 0.6) == 1);
    CHECK(utility(1, 0.5, 1, 0.6) == doctest::Approx(0.7));
}

TEST_CASE("single representation always picks it")
{
    StreamManifest mf;
    mf.representations = {{1e6, 35}};
    mf.segment_sizes = Eigen::MatrixXd::Constant(5, 1, 2e6);
    Fixture f(3, 8, 1e3);
    CHECK(choose_representation(f.context, mf, {}).representation == 0);
}

TEST_CASE("quality dominates when rebuffering is impossible")
{
    const auto mf = manifest_of({1e5, 5e5, 1e6, 2e6}, {30, 33, 36, 40});
    Fixture f(3, 8, 1e13);
    AdaptationConfig cfg;
    cfg.alpha_q = 1;
    CHECK(choose_representation(f.context, mf, cfg).representation == 3);
}

TEST_CASE("search matches brute force enumeration")
{
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0, 1);
    int compared = 0;
    for (int trial = 0; trial < 120; ++trial) {
        const std::size_t m = 2 + trial % 3;
        std::vector<double> rates, psnr;
        for (std::size_t j = 0; j < m; ++j) {
            rates.push_back(2e5 * std::pow(2.5, static_cast<double>(j)));
            psnr.push_back(30 + 4.0 * static_cast<double>(j) + u(rng));
        }
        const auto mf = manifest_of(rates, psnr);
        const std::int64_t seg = 3 + trial % 5;
        const double t_request = static_cast<double>(seg + 1) * 2 + u(rng) * 2.5;
        Fixture f(seg, t_request, rates[m / 2] * 1.5, &rng);
        if (trial % 4 == 1) f.context.previous_representation = trial % m;
        AdaptationConfig cfg;
        cfg.alpha_q = 0.3 + 0.6 * u(rng);
        cfg.alpha_rb = trial % 3 == 0 ? -200 : -10;
        cfg.prb_mode = trial % 5 == 0 ? PrbMode::PaperSumClamped : PrbMode::Product;
        cfg.t_max_s = 6 + trial % 5;

        const auto l = reachable_horizon(seg, f.context.t_pi, 2, 5, cfg.t_max_s);
        const auto length = static_cast<std::size_t>(l - seg + 1);
        if (std::pow(static_cast<double>(m), static_cast<double>(length)) > 1e4) continue;
        const oracle::BruteForce brute(length, f.context, mf, cfg);
        const auto d = choose_representation(f.context, mf, cfg);
        REQUIRE(d.trajectory.choices.size() == length);
        CHECK(d.exhaustive);
        const double chosen = oracle::BruteForce::score(d.trajectory.choices, f.context, mf, cfg);
        CHECK(chosen == doctest::Approx(brute.best_u).epsilon(1e-12));
        CHECK(d.score.u == doctest::Approx(chosen).epsilon(1e-12));
        CHECK(d.representation == d.trajectory.choices.front());
        ++compared;
    }
    CHECK(compared >= 80);
}

TEST_CASE("ties go to the lower representation and fewer switches")
{
    const auto mf = manifest_of({1e5, 5e5, 1e6}, {30, 35, 40});
    Fixture f(3, 8, 1e3);
    AdaptationConfig cfg;
    // With almost no throughput every trajectory has utility zero.
    const auto d = choose_representation(f.context, mf, cfg);
    CHECK(d.score.u == doctest::Approx(0).epsilon(1e-12));
    CHECK(d.representation == 0);
    for (auto c : d.trajectory.choices) CHECK(c == 0);
}

TEST_CASE("better predictions never lower the chosen utility")
{
    std::mt19937_64 rng(9);
    const auto mf = manifest_of({2e5, 6e5, 1.5e6}, {30, 34, 40});
    for (int trial = 0; trial < 30; ++trial) {
        Fixture f(4, 10.5, 8e5, &rng);
        const double before = choose_representation(f.context, mf, {}).score.u;
        for (auto& p : f.predictions) p *= 1.3;
        const double after = choose_representation(f.context, mf, {}).score.u;
        CHECK(after >= before - 1e-12);
    }
}

TEST_CASE("utility is bounded by the rebuffer subutility")
{
    std::mt19937_64 rng(4);
    const auto mf = manifest_of({2e5, 6e5, 1.5e6}, {30, 34, 40});
    for (int trial = 0; trial < 20; ++trial) {
        Fixture f(4, 10.5, 8e5, &rng);
        for (std::size_t a = 0; a < 3; ++a)
            for (std::size_t b = 0; b < 3; ++b) {
                const auto s = score_trajectory(Trajectory{4, {a, b, a}}, f.context, mf, {});
                CHECK(s.u >= 0);
                CHECK(s.u <= s.u_rb + 1e-15);
                CHECK(s.u_rb <= 1);
            }
    }
}

TEST_CASE("psnr affine maps leave the decision unchanged")
{
    std::mt19937_64 rng(12);
    const auto mf = manifest_of({2e5, 6e5, 1.5e6}, {30, 34, 40});
    auto scaled = mf;
    for (auto& r : scaled.representations) r.psnr_db = 2.5 * r.psnr_db - 7;
    for (int trial = 0; trial < 20; ++trial) {
        Fixture f(4, 10.5, 8e5, &rng);
        f.context.previous_representation = trial % 3;
        const auto a = choose_representation(f.context, mf, {});
        const auto b = choose_representation(f.context, scaled, {});
        CHECK(a.trajectory.choices == b.trajectory.choices);
        CHECK(a.score.u == doctest::Approx(b.score.u).epsilon(1e-12));
    }
}

TEST_CASE("beam search runs when enumeration is capped")
{
    std::mt19937_64 rng(6);
    const auto mf = manifest_of({2e5, 6e5, 1.5e6, 3e6}, {30, 34, 37, 40});
    Fixture f(4, 10.5, 8e5, &rng);
    AdaptationConfig cfg;
    cfg.enumeration_cap = 10;
    const auto d = choose_representation(f.context, mf, cfg);
    CHECK_FALSE(d.exhaustive);
    CHECK(d.representation < 4);
    const auto exact = choose_representation(f.context, mf, {});
    CHECK(d.score.u <= exact.score.u + 1e-12);
}

TEST_CASE("missing predictions are reported")
{
    const auto mf = manifest_of({2e5, 6e5}, {30, 40});
    Fixture f(4, 10.5, 8e5);
    f.context.predictions = std::span<const double>(f.predictions).first(2);
    CHECK_THROWS_AS(rebuffer_probability(Trajectory{4, {0, 0, 0}}, f.context, mf, {}), MissingPrediction);
}

TEST_CASE("tune in examples")
{
    const auto a = tune_in(10, 2, 5);
    CHECK(a.first_segment == 4);
    CHECK(a.delta_p == 5);
    CHECK(a.playback_start == 13);
    CHECK(a.representation == 0);
    CHECK(tune_in(2, 2, 5).first_segment == 0);
    CHECK_THROWS_AS(tune_in(1.5, 2, 5), NoSegmentAvailable);

    for (double t = 2; t < 60; t += 0.37) {
        const auto ti = tune_in(t, 2, 5);
        CHECK(ti.playback_start >= t + 2 - 1e-9);
        if (ti.first_segment > 0) CHECK(ti.playback_start - 2 < t + 2);
        CHECK((ti.first_segment + 1) * 2.0 < t + 2);
        if (std::fmod(t, 2.0) <= 1.0) CHECK((ti.first_segment + 1) * 2.0 <= t + 1e-9);
    }
}

TEST_CASE("deadline miss re-tunes and counts skips")
{
    ClientState s;
    s.next_segment = 2;
    const auto next = on_deadline_miss(s, 10, 2, 5);
    CHECK(next.next_segment == 4);
    CHECK(next.skipped == 2);
    CHECK(next.awaiting_tune_in_segment);

    ClientState r;
    std::int64_t last = 0;
    double t = 2;
    for (int k = 0; k < 10; ++k) {
        r = on_deadline_miss(r, t, 2, 5);
        CHECK(r.skipped >= last);
        last = r.skipped;
        t += 3.1;
    }
}

TEST_CASE("buffer level")
{
    ClientState s;
    CHECK(buffer_level(s, 4, 2) == 0);
    s.last_played_deadline = 11;
    CHECK(buffer_level(s, 9, 2) == 4);
    CHECK(buffer_level(s, 20, 2) == 0);
}

TEST_CASE("fixed margin examples")
{
    const auto mf = manifest_of({1e5, 7e5, 9e5}, {30, 35, 40});
    CHECK(fixed_margin_choice(0.8, 1e6, mf) == 1);
    CHECK(fixed_margin_choice(0.8, 1e4, mf) == 0);
    CHECK(fixed_margin_choice(0.999, 9.1e5, mf) == 2);
    CHECK_THROWS_AS(fixed_margin_choice(1.0, 1e6, mf), ConfigError);
}

TEST_CASE("oracle examples")
{
    const auto mf = manifest_of({1e5, 1e6, 3e6, 9e6}, {30, 34, 37, 40});
    const auto at_rate = [](double rate) -> DownloadClock {
        return [rate](double start, double bits) { return rate > 0 ? start + bits / rate : kInf; };
    };
    CHECK(oracle_choice(3, 8, 5, 10, mf, at_rate(1e6)) == 1);
    CHECK(oracle_choice(3, 8, 5, 10, mf, at_rate(0)) == 0);
    CHECK(oracle_choice(3, 8, 5, 10, mf, at_rate(1e15)) == 3);
}

TEST_CASE("manifest generation and validation")
{
    const auto ladder = geometric_ladder(1e5, 4.2e6, 10);
    REQUIRE(ladder.size() == 10);
    CHECK(ladder.front().mmbr_bps == doctest::Approx(1e5));
    CHECK(ladder.back().mmbr_bps == doctest::Approx(4.2e6));
    const auto mf = generate_manifest(2, ladder, 200, 0.3, 5);
    CHECK_NOTHROW(mf.validate());
    for (std::size_t j = 0; j < mf.m(); ++j)
        CHECK(mf.segment_sizes.col(static_cast<Eigen::Index>(j)).mean() / 2
              == doctest::Approx(ladder[j].mmbr_bps).epsilon(1e-9));
    CHECK(mf.size_bits(205, 1) == mf.size_bits(5, 1));

    auto bad = mf;
    bad.segment_sizes(0, 0) = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = mf;
    std::swap(bad.representations[0], bad.representations[1]);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = mf;
    bad.segment_sizes.col(2) *= 1.05;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("adaptation config validation")
{
    AdaptationConfig c;
    CHECK_NOTHROW(c.validate(2));
    c.delta_p_max_s = 3;
    CHECK_THROWS_AS(c.validate(2), ConfigError);
    c = {};
    c.alpha_rb = 0.5;
    CHECK_THROWS_AS(c.validate(2), ConfigError);
    c = {};
    c.alpha_q = 1.5;
    CHECK_THROWS_AS(c.validate(2), ConfigError);
}

TEST_CASE("prediction tracker issues per horizon predictions")
{
    SyntheticTraceSpec spec;
    spec.duration_s = 200;
    const auto trace = generate_trace(spec);
    PredictionTracker tracker({});
    tracker.advance(trace, 0);
    REQUIRE(tracker.predictions().size() == 10);
    CHECK(tracker.predictions()[0] == doctest::Approx(1e4));
    tracker.advance(trace, 100);
    CHECK(tracker.clock() == 100);
    // SMA:1 over the previous T seconds.
    const auto bits = window(trace, 1).values;
    for (int h : {1, 4, 10})
        CHECK(tracker.predictions()[h - 1] == doctest::Approx(bits.segment(100 - h, h).mean()));
    CHECK(tracker.model(1).history().size() > 50);
    CHECK(tracker.snapshots().size() == 10);
}
