#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hals/errors.hpp"
#include "hals/simulator.hpp"

using namespace hals;

namespace {

ThroughputTrace constant_trace(std::int64_t bytes_per_s, Eigen::Index seconds, std::string id = "c")
{
    ThroughputTrace t;
    t.id = std::move(id);
    t.bytes = decltype(t.bytes)::Constant(seconds, bytes_per_s);
    return t;
}

StreamManifest ladder_manifest(std::size_t count = 10)
{
    return generate_manifest(2.0, geometric_ladder(1e5, 4.2e6, count), 900, 0.0, 1);
}

std::string log_text(const SessionEventLog& log)
{
    std::ostringstream out;
    write_event_log(out, log);
    return out.str();
}

std::vector<std::unique_ptr<Policy>> all_policies()
{
    std::vector<std::unique_ptr<Policy>> p;
    p.push_back(std::make_unique<UtilityPolicy>());
    p.push_back(std::make_unique<FixedMarginPolicy>(0.7));
    p.push_back(std::make_unique<FixedMarginPolicy>(0.9));
    p.push_back(std::make_unique<OraclePolicy>());
    p.push_back(std::make_unique<LowestPolicy>());
    return p;
}

}  // namespace

TEST_CASE("trace clock drains uniformly within each second")
{
    ThroughputTrace t;
    t.id = "x";
    t.bytes = decltype(t.bytes)::Zero(4);
    t.bytes << 1000, 0, 2000, 500;
    const TraceClock clock(t);
    CHECK(clock.capacity_until(0.5) == doctest::Approx(4000));
    CHECK(clock.capacity_until(2.25) == doctest::Approx(8000 + 4000));
    CHECK(clock.completion(0, 8000) == doctest::Approx(1));
    CHECK(clock.completion(0.5, 8000) == doctest::Approx(2.25));
    CHECK(clock.completion(3, 4000) == doctest::Approx(4));
    CHECK(std::isinf(clock.completion(3, 4001)));
}

TEST_CASE("ample throughput never skips")
{
    const auto trace = constant_trace(1'000'000'000'000, 300);
    const auto mf = ladder_manifest();
    for (const auto& policy : all_policies()) {
        const auto r = run_session(trace, mf, *policy, {});
        CHECK(r.metrics.skipped_fraction == 0);
        CHECK(r.metrics.segments_played == r.metrics.segments_due);
        for (const auto& e : r.events)
            if (e.type == EventType::SegmentComplete) {
                const auto req = std::find_if(r.events.begin(), r.events.end(), [&](const SessionEvent& q) {
                    return q.type == EventType::RequestIssued && q.segment == e.segment;
                });
                CHECK(e.t == doctest::Approx(req->t).epsilon(1e-6));
            }
    }
}

TEST_CASE("zero throughput skips everything")
{
    const auto trace = constant_trace(0, 300);
    const auto mf = ladder_manifest();
    for (const auto& policy : all_policies()) {
        const auto r = run_session(trace, mf, *policy, {});
        CHECK(r.metrics.skipped_fraction == 1);
        CHECK(r.metrics.unplayable_fraction == 1);
        CHECK(r.metrics.adjusted_skipped == 0);
        CHECK(r.metrics.segments_played == 0);
        CHECK(audit_event_log(r.events, trace, mf, {}).empty());
    }
}

TEST_CASE("constant trace with one representation at half the rate")
{
    const auto trace = constant_trace(125'000, 600);
    StreamManifest mf;
    mf.representations = {{5e5, 35}};
    mf.segment_sizes = Eigen::MatrixXd::Constant(10, 1, 1e6);
    UtilityPolicy policy;
    const auto r = run_session(trace, mf, policy, {});
    CHECK(r.metrics.skipped_fraction == 0);
    // Segments due: deadlines 2i + 5 within 600 s.
    CHECK(r.metrics.segments_due == 298);
    CHECK(r.metrics.utilization == doctest::Approx(298.0 * 1e6 / (600.0 * 1e6)));
    CHECK(std::abs(r.metrics.utilization - 0.5) < 0.01);
    double start = 0;
    for (const auto& e : r.events) {
        if (e.type == EventType::RequestIssued) start = e.t;
        if (e.type == EventType::SegmentComplete) CHECK(e.t - start == doctest::Approx(1.0));
    }
}

TEST_CASE("an outage skips the segments whose whole window falls inside it")
{
    auto trace = constant_trace(100'000'000, 300);
    trace.bytes.segment(100, 10).setZero();
    const auto mf = ladder_manifest();
    SimulationConfig cfg;
    // Segment i may download in [2i + 2, 2i + 5]; only i = 49..52 start and end inside [100, 110).
    const double unplayable = unplayable_baseline(trace, mf, cfg);
    LowestPolicy lowest;
    const auto r = run_session(trace, mf, lowest, cfg);
    CHECK(r.metrics.segments_due - r.metrics.segments_played == 4);
    CHECK(unplayable == doctest::Approx(4.0 / static_cast<double>(r.metrics.segments_due)));
    CHECK(unplayable_baseline(trace, mf, cfg) == unplayable);
    CHECK(r.metrics.rebuffer_events == 4);
    for (const auto& e : r.events)
        if (e.type == EventType::DeadlineMiss) {
            CHECK(e.segment >= 49);
            CHECK(e.segment <= 52);
        }
}

TEST_CASE("sessions are deterministic and pass the audit")
{
    SyntheticTraceSpec spec;
    spec.duration_s = 400;
    spec.cv_target = 0.7;
    spec.seed = 5;
    const auto trace = generate_trace(spec);
    const auto mf = generate_manifest(2.0, geometric_ladder(1e5, 4.2e6, 10), 900, 0.2, 3);
    for (const auto& policy : all_policies()) {
        auto a = policy->clone();
        auto b = policy->clone();
        const auto ra = run_session(trace, mf, *a, {}, 7);
        const auto rb = run_session(trace, mf, *b, {}, 7);
        CHECK(log_text(ra.events) == log_text(rb.events));
        const auto violations = audit_event_log(ra.events, trace, mf, {});
        CHECK_MESSAGE(violations.empty(), policy->name() << ": " << (violations.empty() ? "" : violations.front()));
        const auto& m = ra.metrics;
        for (double f : {m.skipped_fraction, m.unplayable_fraction, m.adjusted_skipped, m.mean_u_q, m.mean_u_qf,
                         m.utilization}) {
            CHECK(f >= 0);
            CHECK(f <= 1);
        }
        CHECK(m.adjusted_skipped == doctest::Approx(std::max(0.0, m.skipped_fraction - m.unplayable_fraction)));
    }
}

TEST_CASE("timeline sanity")
{
    SyntheticTraceSpec spec;
    spec.duration_s = 300;
    spec.cv_target = 0.8;
    const auto trace = generate_trace(spec);
    const auto mf = ladder_manifest();
    FixedMarginPolicy policy(0.9);
    const auto r = run_session(trace, mf, policy, {});
    double prev = -1;
    int in_flight = 0;
    for (const auto& e : r.events) {
        CHECK(e.t >= prev);
        prev = e.t;
        switch (e.type) {
        case EventType::RequestIssued:
            CHECK(e.t >= (e.segment + 1) * 2.0 - 1e-9);
            CHECK(++in_flight == 1);
            break;
        case EventType::SegmentComplete:
            CHECK(e.t <= e.segment * 2.0 + 5.0 + 1e-9);
            --in_flight;
            break;
        case EventType::DeadlineMiss: --in_flight; break;
        case EventType::PlaybackStart: CHECK(e.t == doctest::Approx(e.segment * 2.0 + 5.0)); break;
        default: break;
        }
    }
    CHECK(in_flight == 0);
}

TEST_CASE("audit catches a tampered log")
{
    const auto trace = constant_trace(125'000, 200);
    const auto mf = ladder_manifest();
    LowestPolicy policy;
    auto r = run_session(trace, mf, policy, {});
    REQUIRE(audit_event_log(r.events, trace, mf, {}).empty());
    for (auto& e : r.events)
        if (e.type == EventType::BytesDelivered) {
            e.bits *= 2;
            break;
        }
    CHECK_FALSE(audit_event_log(r.events, trace, mf, {}).empty());
}

TEST_CASE("confidence intervals")
{
    const auto row = confidence_interval({1, 2, 3, 4});
    // t(0.95, 3) = 2.353363 from tables; sd = sqrt(5/3).
    const double half = 2.353363 * std::sqrt(5.0 / 3.0) / 2.0;
    CHECK(row.mean == doctest::Approx(2.5));
    CHECK(row.ci_lo == doctest::Approx(2.5 - half).epsilon(1e-6));
    CHECK(row.ci_hi == doctest::Approx(2.5 + half).epsilon(1e-6));
    const auto flat = confidence_interval({0.3, 0.3, 0.3});
    CHECK(flat.ci_lo == flat.ci_hi);
}

TEST_CASE("experiment over duplicated traces has zero-width intervals")
{
    SyntheticTraceSpec spec;
    spec.duration_s = 300;
    const auto trace = generate_trace(spec);
    const std::vector<ThroughputTrace> traces{trace, trace, trace};
    std::vector<std::unique_ptr<Policy>> policies;
    policies.push_back(std::make_unique<FixedMarginPolicy>(0.8));
    const auto result = run_experiment(traces, ladder_manifest(), policies, {});
    REQUIRE(result.policies.size() == 1);
    CHECK(result.per_trace[0].size() == 3);
    for (const auto& row : result.summary) {
        CHECK(row.ci_lo == doctest::Approx(row.mean));
        CHECK(row.ci_hi == doctest::Approx(row.mean));
    }
}

TEST_CASE("oracle and fixed margins on high variance traces")
{
    std::vector<ThroughputTrace> traces;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
        SyntheticTraceSpec spec;
        spec.seed = seed;
        spec.duration_s = 600;
        spec.cv_target = 0.8;
        spec.mean_bps = 1.5e6;
        traces.push_back(generate_trace(spec));
    }
    std::vector<std::unique_ptr<Policy>> policies;
    policies.push_back(std::make_unique<FixedMarginPolicy>(0.7));
    policies.push_back(std::make_unique<FixedMarginPolicy>(0.9));
    policies.push_back(std::make_unique<OraclePolicy>());
    const auto result = run_experiment(traces, ladder_manifest(), policies, {});
    const auto mean = [&](std::size_t p, double SessionMetrics::*field) {
        double s = 0;
        for (const auto& m : result.per_trace[p]) s += m.*field;
        return s / static_cast<double>(traces.size());
    };
    for (const auto& m : result.per_trace[2]) CHECK(m.adjusted_skipped == 0);
    for (std::size_t k = 0; k < traces.size(); ++k)
        for (std::size_t p : {0, 1}) CHECK(result.per_trace[p][k].mean_u_q <= result.per_trace[2][k].mean_u_q);
    // A margin multiplies the measured rate, so 0.9 requests more and risks more.
    CHECK(mean(1, &SessionMetrics::mean_u_q) > mean(0, &SessionMetrics::mean_u_q));
    CHECK(mean(1, &SessionMetrics::adjusted_skipped) > mean(0, &SessionMetrics::adjusted_skipped));
}

TEST_CASE("event log and decision log formats")
{
    SessionEventLog log{{2.0, EventType::TuneIn, 0}, {2.0, EventType::RequestIssued, 0, 0, 2e5}};
    const auto text = log_text(log);
    CHECK(text.find("\"event\":\"TuneIn\"") != std::string::npos);
    CHECK(text.find("\"representation\":1") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);

    std::ostringstream out;
    write_decision_log_csv(out, {DecisionLogEntry{4.0, 1, 2, {0.1, 0.9, 0.5, 1.0, 0.7}}});
    CHECK(out.str().rfind("t,segment,chosen_j,p_rb,u_rb,u_q,u_qf,u\n", 0) == 0);
    CHECK(out.str().find("4,1,3,") != std::string::npos);

    std::ostringstream summary;
    write_summary_csv(summary, {SummaryRow{"oracle", "mean_u_q", 0.5, 0.4, 0.6}});
    CHECK(summary.str() == "policy,metric,mean,ci_lo,ci_hi\noracle,mean_u_q,0.5,0.4,0.6\n");
}
