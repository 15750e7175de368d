#include "hals/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "hals/errors.hpp"

namespace hals {

namespace {

constexpr double kEps = 1e-9;

}  // namespace

std::string to_string(EventType type)
{
    switch (type) {
    case EventType::RequestIssued: return "RequestIssued";
    case EventType::BytesDelivered: return "BytesDelivered";
    case EventType::SegmentComplete: return "SegmentComplete";
    case EventType::DeadlineMiss: return "DeadlineMiss";
    case EventType::TuneIn: return "TuneIn";
    case EventType::PlaybackStart: return "PlaybackStart";
    }
    return "Unknown";
}

void write_event_log(std::ostream& out, const SessionEventLog& log)
{
    for (const auto& e : log) {
        nlohmann::ordered_json j;
        j["t"] = e.t;
        j["event"] = to_string(e.type);
        j["segment"] = e.segment;
        switch (e.type) {
        case EventType::RequestIssued:
            j["representation"] = e.representation + 1;
            j["bits"] = e.bits;
            break;
        case EventType::BytesDelivered:
            j["t_start"] = e.t_start;
            j["bits"] = e.bits;
            break;
        case EventType::SegmentComplete:
        case EventType::DeadlineMiss:
            j["representation"] = e.representation + 1;
            break;
        case EventType::TuneIn:
        case EventType::PlaybackStart: break;
        }
        out << j.dump() << '\n';
    }
}

TraceClock::TraceClock(const ThroughputTrace& trace)
{
    const auto n = static_cast<std::size_t>(trace.duration());
    rate_.resize(n);
    prefix_.assign(n + 1, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        rate_[s] = 8.0 * static_cast<double>(trace.bytes[static_cast<Eigen::Index>(s)]);
        prefix_[s + 1] = prefix_[s] + rate_[s];
    }
}

double TraceClock::capacity_until(double t) const
{
    if (t <= 0.0) return 0.0;
    if (t >= duration()) return prefix_.back();
    const auto s = static_cast<std::size_t>(std::floor(t));
    return prefix_[s] + rate_[s] * (t - static_cast<double>(s));
}

double TraceClock::completion(double start, double bits) const
{
    if (bits <= 0.0) return start;
    if (start >= duration()) return std::numeric_limits<double>::infinity();
    const double target = capacity_until(start) + bits;
    if (target > prefix_.back()) return std::numeric_limits<double>::infinity();
    const auto first = static_cast<std::size_t>(std::floor(start));
    // First second s >= floor(start) whose end capacity reaches the target.
    const auto it = std::lower_bound(prefix_.begin() + static_cast<std::ptrdiff_t>(first) + 1, prefix_.end(), target);
    const auto s = static_cast<std::size_t>(it - prefix_.begin()) - 1;
    const double within = (target - prefix_[s]) / rate_[s];
    return std::max(start, static_cast<double>(s) + std::min(1.0, within));
}

namespace {

class SessionRunner {
public:
    SessionRunner(const ThroughputTrace& trace, const StreamManifest& manifest, const SimulationConfig& config)
        : trace_(trace), manifest_(manifest), config_(config), clock_(trace)
    {
    }

    SessionResult run(Policy& policy)
    {
        const double tau = manifest_.tau_s;
        const double dp_max = config_.adaptation.delta_p_max_s;
        const double end = clock_.duration();
        const DownloadClock download = [this](double start, double bits) { return clock_.completion(start, bits); };

        ClientState state;
        const TuneIn start = tune_in(tau, tau, dp_max);
        state.next_segment = start.first_segment;
        state.delta_p = start.delta_p;
        state.awaiting_tune_in_segment = true;
        emit({tau, EventType::TuneIn, start.first_segment});

        double t_free = tau;
        double media_bits = 0.0;
        double quality_sum = 0.0;
        double fluctuation_sum = 0.0;
        std::optional<double> last_quality;
        SessionMetrics metrics;

        while (true) {
            const std::int64_t i = state.next_segment;
            const double deadline = playback_deadline(i, tau, state.delta_p);
            if (deadline > end) break;
            const double t_request = std::max(t_free, static_cast<double>(i + 1) * tau);

            std::size_t rep = 0;
            if (!state.awaiting_tune_in_segment && t_request < deadline) {
                PolicyContext ctx;
                ctx.segment = i;
                ctx.t_request = t_request;
                ctx.delta_p = state.delta_p;
                ctx.previous_representation = state.last_representation;
                ctx.trace = &trace_;
                ctx.manifest = &manifest_;
                ctx.clock = &download;
                rep = policy.choose(ctx);
                if (rep >= manifest_.m()) throw ConfigError("policy chose a representation outside the manifest");
            }
            const double bits = manifest_.size_bits(i, rep);
            emit({t_request, EventType::RequestIssued, i, rep, bits});

            const double done = t_request < deadline ? clock_.completion(t_request, bits)
                                                      : std::numeric_limits<double>::infinity();
            if (done <= deadline) {
                deliver(i, t_request, done);
                emit({done, EventType::SegmentComplete, i, rep});
                if (state.awaiting_tune_in_segment) emit({deadline, EventType::PlaybackStart, i});
                state.awaiting_tune_in_segment = false;
                state.last_representation = rep;
                state.last_played_deadline = deadline;
                state.next_segment = i + 1;
                t_free = done;

                ++metrics.segments_played;
                media_bits += bits;
                const double q = u_q(rep, manifest_);
                quality_sum += q;
                fluctuation_sum += 1.0 - std::abs(q - last_quality.value_or(q));
                last_quality = q;
            } else {
                const double t_miss = std::max(deadline, t_request);
                deliver(i, t_request, t_miss);
                emit({t_miss, EventType::DeadlineMiss, i, rep});
                ++metrics.rebuffer_events;
                state = on_deadline_miss(state, t_miss, tau, dp_max);
                emit({t_miss, EventType::TuneIn, state.next_segment});
                t_free = t_miss;
            }
        }

        metrics.segments_due = end >= dp_max ? static_cast<std::int64_t>(std::floor((end - dp_max) / tau + kEps)) + 1 : 0;
        const auto due = static_cast<double>(metrics.segments_due);
        const auto played = static_cast<double>(metrics.segments_played);
        metrics.skipped_fraction = due > 0 ? std::clamp(1.0 - played / due, 0.0, 1.0) : 0.0;
        metrics.adjusted_skipped = metrics.skipped_fraction;
        metrics.mean_u_q = played > 0 ? quality_sum / played : 0.0;
        metrics.mean_u_qf = played > 0 ? fluctuation_sum / played : 0.0;
        const double capacity = clock_.capacity_until(end);
        metrics.utilization = capacity > 0.0 ? std::min(1.0, media_bits / capacity) : 0.0;

        std::stable_sort(events_.begin(), events_.end(),
                         [](const SessionEvent& a, const SessionEvent& b) { return a.t < b.t; });
        return {metrics, std::move(events_)};
    }

private:
    void emit(SessionEvent e)
    {
        if (config_.record_events) events_.push_back(e);
    }

    void deliver(std::int64_t segment, double from, double to)
    {
        if (!config_.record_events) return;
        while (from < to) {
            const double next = std::min(to, std::floor(from) + 1.0);
            SessionEvent e{next, EventType::BytesDelivered, segment};
            e.t_start = from;
            e.bits = clock_.capacity_until(next) - clock_.capacity_until(from);
            events_.push_back(e);
            from = next;
        }
    }

    const ThroughputTrace& trace_;
    const StreamManifest& manifest_;
    const SimulationConfig& config_;
    TraceClock clock_;
    SessionEventLog events_;
};

void check_session_inputs(const ThroughputTrace& trace, const StreamManifest& manifest, const SimulationConfig& config)
{
    manifest.validate();
    config.adaptation.validate(manifest.tau_s);
    if (static_cast<double>(trace.duration()) < config.adaptation.delta_p_max_s + manifest.tau_s)
        throw ConfigError("trace " + trace.id + " is shorter than one playback delay plus one segment");
}

}  // namespace

double unplayable_baseline(const ThroughputTrace& trace, const StreamManifest& manifest,
                           const SimulationConfig& config)
{
    check_session_inputs(trace, manifest, config);
    SimulationConfig quiet = config;
    quiet.record_events = false;
    quiet.correct_unplayable = false;
    LowestPolicy lowest;
    return SessionRunner(trace, manifest, quiet).run(lowest).metrics.skipped_fraction;
}

SessionResult run_session(const ThroughputTrace& trace, const StreamManifest& manifest, Policy& policy,
                          const SimulationConfig& config, std::uint64_t seed)
{
    // Sessions are deterministic; the seed is accepted for interface symmetry with experiments.
    (void)seed;
    check_session_inputs(trace, manifest, config);
    SessionResult result = SessionRunner(trace, manifest, config).run(policy);
    if (config.correct_unplayable) {
        auto& m = result.metrics;
        m.unplayable_fraction = unplayable_baseline(trace, manifest, config);
        m.adjusted_skipped = std::max(0.0, m.skipped_fraction - m.unplayable_fraction);
    }
    return result;
}

std::vector<std::string> audit_event_log(const SessionEventLog& log, const ThroughputTrace& trace,
                                         const StreamManifest& manifest, const SimulationConfig& config)
{
    std::vector<std::string> violations;
    const auto fail = [&](double t, const std::string& what) {
        violations.push_back("t=" + std::to_string(t) + ": " + what);
    };
    const TraceClock clock(trace);
    const double tau = manifest.tau_s;
    const double dp = config.adaptation.delta_p_max_s;

    std::map<std::int64_t, double> per_second;
    std::optional<SessionEvent> open;
    double open_bits = 0.0;
    double previous_t = -std::numeric_limits<double>::infinity();

    for (const auto& e : log) {
        if (e.t < previous_t) fail(e.t, "event times decrease");
        previous_t = e.t;
        switch (e.type) {
        case EventType::RequestIssued:
            if (open) fail(e.t, "request issued while segment " + std::to_string(open->segment) + " is in flight");
            if (e.t + kEps < static_cast<double>(e.segment + 1) * tau)
                fail(e.t, "segment " + std::to_string(e.segment) + " requested before it was published");
            open = e;
            open_bits = 0.0;
            break;
        case EventType::BytesDelivered: {
            if (!open || open->segment != e.segment) fail(e.t, "bytes delivered without a matching request");
            const double expected = clock.capacity_until(e.t) - clock.capacity_until(e.t_start);
            if (std::abs(e.bits - expected) > 1e-6 * std::max(1.0, expected))
                fail(e.t, "delivered bits differ from trace capacity of an active download");
            if (std::floor(e.t_start) != std::floor(e.t) && e.t != std::floor(e.t_start) + 1.0)
                fail(e.t, "delivery crosses a second boundary");
            per_second[static_cast<std::int64_t>(std::floor(e.t_start))] += e.bits;
            open_bits += e.bits;
            break;
        }
        case EventType::SegmentComplete: {
            if (!open || open->segment != e.segment) {
                fail(e.t, "completion without a matching request");
                break;
            }
            if (e.t + kEps < open->t) fail(e.t, "completion precedes request");
            const double deadline = playback_deadline(e.segment, tau, dp);
            if (e.t > deadline + kEps) fail(e.t, "completion after playback deadline");
            if (std::abs(open_bits - open->bits) > 1e-6 * std::max(1.0, open->bits))
                fail(e.t, "completed segment did not receive exactly its size");
            const double beta = deadline + tau - e.t;
            if (beta < -kEps || beta > dp + kEps) fail(e.t, "buffer level outside [0, playback delay]");
            open.reset();
            break;
        }
        case EventType::DeadlineMiss:
            if (!open || open->segment != e.segment) fail(e.t, "deadline miss without a matching request");
            if (std::abs(e.t - std::max(playback_deadline(e.segment, tau, dp), open ? open->t : e.t)) > kEps)
                fail(e.t, "deadline miss away from the playback deadline");
            open.reset();
            break;
        case EventType::TuneIn:
        case EventType::PlaybackStart: break;
        }
    }
    if (open) fail(open->t, "request for segment " + std::to_string(open->segment) + " never closed");
    for (const auto& [second, bits] : per_second)
        if (second < trace.duration() && bits > clock.rate(second) * (1.0 + 1e-9) + 1e-6)
            fail(static_cast<double>(second), "more bits delivered than the trace carried");
    return violations;
}

SummaryRow confidence_interval(const std::vector<double>& samples, double level)
{
    SummaryRow row;
    if (samples.empty()) return row;
    const auto n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= n;
    row.mean = row.ci_lo = row.ci_hi = mean;
    if (samples.size() < 2) return row;
    double ss = 0.0;
    for (double x : samples) ss += (x - mean) * (x - mean);
    const double se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    const boost::math::students_t dist(n - 1.0);
    const double t = boost::math::quantile(boost::math::complement(dist, (1.0 - level) / 2.0));
    row.ci_lo = mean - t * se;
    row.ci_hi = mean + t * se;
    return row;
}

ExperimentResult run_experiment(const std::vector<ThroughputTrace>& traces, const StreamManifest& manifest,
                                const std::vector<std::unique_ptr<Policy>>& policies, const SimulationConfig& config,
                                std::uint64_t seed)
{
    for (const auto& trace : traces) check_session_inputs(trace, manifest, config);
    ExperimentResult result;
    for (const auto& p : policies) result.policies.push_back(p->name());
    for (const auto& t : traces) result.trace_ids.push_back(t.id);

    SimulationConfig session_config = config;
    session_config.correct_unplayable = false;

    const std::size_t n_traces = traces.size();
    const std::size_t n_tasks = n_traces * (policies.size() + 1);
    std::vector<SessionMetrics> metrics(n_tasks);
    std::vector<SessionEventLog> events(config.record_events ? n_tasks : 0);
    std::vector<std::vector<DecisionLogEntry>> decisions(config.record_events ? n_tasks : 0);
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t task; (task = next.fetch_add(1)) < n_tasks;) {
            const std::size_t k = task % n_traces;
            const std::size_t p = task / n_traces;
            std::unique_ptr<Policy> policy = p < policies.size() ? policies[p]->clone() : std::make_unique<LowestPolicy>();
            SessionResult r = run_session(traces[k], manifest, *policy, session_config, seed);
            metrics[task] = r.metrics;
            if (config.record_events) {
                events[task] = std::move(r.events);
                if (const auto* log = policy->decision_log()) decisions[task] = *log;
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, n_tasks);
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n_threads; ++w) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();

    result.per_trace.assign(policies.size(), {});
    if (config.record_events) {
        result.events.assign(policies.size(), {});
        result.decisions.assign(policies.size(), {});
    }
    for (std::size_t p = 0; p < policies.size(); ++p) {
        for (std::size_t k = 0; k < n_traces; ++k) {
            SessionMetrics m = metrics[p * n_traces + k];
            m.unplayable_fraction = metrics[policies.size() * n_traces + k].skipped_fraction;
            m.adjusted_skipped = std::max(0.0, m.skipped_fraction - m.unplayable_fraction);
            result.per_trace[p].push_back(m);
            if (config.record_events) {
                result.events[p].push_back(std::move(events[p * n_traces + k]));
                result.decisions[p].push_back(std::move(decisions[p * n_traces + k]));
            }
        }
        const auto summarize = [&](const std::string& metric, auto field) {
            std::vector<double> xs;
            for (const auto& m : result.per_trace[p]) xs.push_back(static_cast<double>(m.*field));
            SummaryRow row = confidence_interval(xs);
            row.policy = result.policies[p];
            row.metric = metric;
            result.summary.push_back(row);
        };
        summarize("adjusted_skipped", &SessionMetrics::adjusted_skipped);
        summarize("mean_u_q", &SessionMetrics::mean_u_q);
        summarize("mean_u_qf", &SessionMetrics::mean_u_qf);
        summarize("skipped_fraction", &SessionMetrics::skipped_fraction);
        summarize("unplayable_fraction", &SessionMetrics::unplayable_fraction);
        summarize("utilization", &SessionMetrics::utilization);
        summarize("rebuffer_events", &SessionMetrics::rebuffer_events);
    }
    return result;
}

namespace {

std::string format_number(double x)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

}  // namespace

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows)
{
    out << "policy,metric,mean,ci_lo,ci_hi\n";
    for (const auto& r : rows)
        out << r.policy << ',' << r.metric << ',' << format_number(r.mean) << ',' << format_number(r.ci_lo) << ','
            << format_number(r.ci_hi) << '\n';
}

void write_decision_log_csv(std::ostream& out, const std::vector<DecisionLogEntry>& log)
{
    out << "t,segment,chosen_j,p_rb,u_rb,u_q,u_qf,u\n";
    for (const auto& e : log)
        out << format_number(e.t) << ',' << e.segment << ',' << e.representation + 1 << ','
            << format_number(e.score.p_rb) << ',' << format_number(e.score.u_rb) << ','
            << format_number(e.score.u_q) << ',' << format_number(e.score.u_qf) << ',' << format_number(e.score.u)
            << '\n';
}

}  // namespace hals
