#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "hals/adaptation.hpp"
#include "hals/traces.hpp"

namespace hals {

enum class EventType { RequestIssued, BytesDelivered, SegmentComplete, DeadlineMiss, TuneIn, PlaybackStart };

std::string to_string(EventType type);

struct SessionEvent {
    double t = 0.0;
    EventType type = EventType::RequestIssued;
    std::int64_t segment = 0;
    std::size_t representation = 0;
    /// BytesDelivered: bits moved in [t_start, t]. RequestIssued: segment size.
    double bits = 0.0;
    double t_start = 0.0;
};

using SessionEventLog = std::vector<SessionEvent>;

void write_event_log(std::ostream& out, const SessionEventLog& log);

struct SessionMetrics {
    double skipped_fraction = 0.0;
    double unplayable_fraction = 0.0;
    double adjusted_skipped = 0.0;
    double mean_u_q = 0.0;
    double mean_u_qf = 0.0;
    double utilization = 0.0;
    std::int64_t rebuffer_events = 0;
    std::int64_t segments_due = 0;
    std::int64_t segments_played = 0;
};

struct SimulationConfig {
    AdaptationConfig adaptation;
    bool record_events = true;
    /// Runs the always-lowest baseline to fill unplayable_fraction.
    bool correct_unplayable = true;
};

/// Fluid-model download timing over a trace: completion time of a download of
/// `bits` started at `start`, +inf when the trace ends first.
class TraceClock {
public:
    explicit TraceClock(const ThroughputTrace& trace);

    double capacity_until(double t) const;
    double completion(double start, double bits) const;
    double duration() const { return static_cast<double>(rate_.size()); }
    double rate(std::int64_t second) const { return rate_[static_cast<std::size_t>(second)]; }

private:
    std::vector<double> rate_;
    std::vector<double> prefix_;
};

struct SessionResult {
    SessionMetrics metrics;
    SessionEventLog events;
};

SessionResult run_session(const ThroughputTrace& trace, const StreamManifest& manifest, Policy& policy,
                          const SimulationConfig& config, std::uint64_t seed = 0);

/// Skipped fraction of the always-lowest policy on the same trace.
double unplayable_baseline(const ThroughputTrace& trace, const StreamManifest& manifest,
                           const SimulationConfig& config);

/// Checks byte conservation, timeline ordering and buffer bounds of a recorded
/// session. Returns one message per violation.
std::vector<std::string> audit_event_log(const SessionEventLog& log, const ThroughputTrace& trace,
                                         const StreamManifest& manifest, const SimulationConfig& config);

struct SummaryRow {
    std::string policy;
    std::string metric;
    double mean = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

struct ExperimentResult {
    std::vector<std::string> policies;
    std::vector<std::string> trace_ids;
    /// per_trace[p][k] is policy p on trace k.
    std::vector<std::vector<SessionMetrics>> per_trace;
    /// Filled only when the simulation config records events.
    std::vector<std::vector<SessionEventLog>> events;
    std::vector<std::vector<std::vector<DecisionLogEntry>>> decisions;
    std::vector<SummaryRow> summary;
};

/// Two-sided Student-t interval of the mean over the given samples.
SummaryRow confidence_interval(const std::vector<double>& samples, double level = 0.9);

ExperimentResult run_experiment(const std::vector<ThroughputTrace>& traces, const StreamManifest& manifest,
                                const std::vector<std::unique_ptr<Policy>>& policies, const SimulationConfig& config,
                                std::uint64_t seed = 0);

/// CSV "policy,metric,mean,ci_lo,ci_hi"; intervals are over traces.
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

/// CSV "t,segment,chosen_j,p_rb,u_rb,u_q,u_qf,u" with 1-based representations.
void write_decision_log_csv(std::ostream& out, const std::vector<DecisionLogEntry>& log);

}  // namespace hals
