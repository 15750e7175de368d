#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hals/error_model.hpp"
#include "hals/predictors.hpp"
#include "hals/traces.hpp"

namespace hals {

// Representation indices are 0-based here; files and logs print them 1-based.

struct Representation {
    double mmbr_bps = 0.0;
    double psnr_db = 0.0;
};

struct StreamManifest {
    double tau_s = 2.0;
    std::vector<Representation> representations;
    /// Bits of segment i (row) in representation j (column). Segments past the
    /// last row wrap around.
    Eigen::MatrixXd segment_sizes;

    std::size_t m() const { return representations.size(); }
    Eigen::Index n() const { return segment_sizes.rows(); }
    double size_bits(std::int64_t segment, std::size_t rep) const
    {
        return segment_sizes(static_cast<Eigen::Index>(segment % segment_sizes.rows()), static_cast<Eigen::Index>(rep));
    }
    void validate() const;
};

/// Segment sizes s_ij = mmbr_j * tau * v_i with lognormal VBR factors v_i
/// renormalized to mean 1.
StreamManifest generate_manifest(double tau_s, std::vector<Representation> representations, Eigen::Index n_segments,
                                 double vbr_cv, std::uint64_t seed);

/// Geometric MMBR ladder with PSNR growing with log rate.
std::vector<Representation> geometric_ladder(double min_bps, double max_bps, std::size_t count);

enum class PrbMode { Product, PaperSumClamped };

struct AdaptationConfig {
    double alpha_q = 0.6;
    double alpha_rb = -200.0;
    double alpha_cdf = 60.0;
    int t_max_s = 10;
    double rho_min_bps = 1e4;
    double delta_p_max_s = 5.0;
    PrbMode prb_mode = PrbMode::Product;
    PuMode pu_mode = PuMode::Conditional;
    double enumeration_cap = 1e6;
    std::size_t beam_width = 64;
    PredictorSpec predictor{PredictorKind::SMA, 1, MeanType::Arithmetic};

    void validate(double tau_s) const;
};

struct Trajectory {
    std::int64_t first_segment = 0;
    std::vector<std::size_t> choices;

    std::int64_t last_segment() const { return first_segment + static_cast<std::int64_t>(choices.size()) - 1; }
};

inline double playback_deadline(std::int64_t segment, double tau_s, double delta_p)
{
    return static_cast<double>(segment) * tau_s + delta_p;
}

/// Latest segment l >= i whose playback deadline lies within t_pi + t_max; i if none does.
std::int64_t reachable_horizon(std::int64_t segment, double t_pi, double tau_s, double delta_p, int t_max_s);

/// Smallest prediction horizon T (clamped to [1, t_max]) with t_pi + T >= deadline.
int covering_horizon(double t_pi, double deadline, int t_max_s);

/// Everything a rebuffering estimate needs at a decision point.
/// predictions[T-1] and models[T-1] belong to horizon T.
struct DecisionContext {
    std::int64_t segment = 0;
    double t_request = 0.0;
    double t_pi = 0.0;
    double delta_p = 5.0;
    std::optional<std::size_t> previous_representation;
    std::span<const double> predictions;
    std::span<const ComposedErrorModel> models;
};

/// Per-segment deadline-meet probabilities Phi(rho_hat * (t_p - t_r) / cumulative bits - 1).
std::vector<double> deadline_meet_probabilities(const Trajectory& trajectory, const DecisionContext& context,
                                                const StreamManifest& manifest, const AdaptationConfig& config);

double combine_rebuffer_probability(std::span<const double> meet_probabilities, PrbMode mode);

double rebuffer_probability(const Trajectory& trajectory, const DecisionContext& context,
                            const StreamManifest& manifest, const AdaptationConfig& config);

double u_rb(double p_rb, double alpha_rb);
/// A single representation counts as the lowest and maps to 0.
double u_q(std::size_t rep, const StreamManifest& manifest);
double u_q(const Trajectory& trajectory, const StreamManifest& manifest);
/// Predecessor of the first segment is `previous`, or the first choice itself when unset.
double u_qf(const Trajectory& trajectory, const StreamManifest& manifest, std::optional<std::size_t> previous);
double utility(double u_rb_value, double u_q_value, double u_qf_value, double alpha_q);

struct TrajectoryScore {
    double p_rb = 0.0;
    double u_rb = 0.0;
    double u_q = 0.0;
    double u_qf = 0.0;
    double u = 0.0;
};

TrajectoryScore score_trajectory(const Trajectory& trajectory, const DecisionContext& context,
                                 const StreamManifest& manifest, const AdaptationConfig& config);

/// Strict preference between two scored trajectories: higher utility, then
/// lower first representation, then fewer switches, then lexicographically lower.
bool preferred(const TrajectoryScore& a, const Trajectory& ta, const TrajectoryScore& b, const Trajectory& tb,
               std::optional<std::size_t> previous);

struct Decision {
    std::size_t representation = 0;
    Trajectory trajectory;
    TrajectoryScore score;
    bool exhaustive = true;
};

Decision choose_representation(const DecisionContext& context, const StreamManifest& manifest,
                               const AdaptationConfig& config);

struct TuneIn {
    std::int64_t first_segment = 0;
    double delta_p = 0.0;
    double playback_start = 0.0;
    std::size_t representation = 0;
};

/// Oldest segment whose playback deadline is at least tau after t. When that
/// segment is not yet published at t the client waits for it (less than tau).
TuneIn tune_in(double t, double tau_s, double delta_p_max_s);

/// Client-side playback bookkeeping.
struct ClientState {
    std::int64_t next_segment = 0;
    double delta_p = 5.0;
    std::optional<std::size_t> last_representation;
    std::optional<double> last_played_deadline;  // max t_i^p over completed segments
    std::int64_t skipped = 0;
    bool awaiting_tune_in_segment = true;
};

/// Buffer level max{t_i^p | t_i^c <= t} + tau - t; zero before anything completed.
double buffer_level(const ClientState& state, double t, double tau_s);

/// Cancels the pending segment and re-tunes at t. Segments from the missed one
/// up to the new first segment count as skipped.
ClientState on_deadline_miss(const ClientState& state, double t, double tau_s, double delta_p_max_s);

std::size_t fixed_margin_choice(double margin, double rho_hat_bps, const StreamManifest& manifest);

/// Completion time of a download of `bits` started at `start`; +inf if the trace ends first.
using DownloadClock = std::function<double(double start, double bits)>;

std::size_t oracle_choice(std::int64_t segment, double t_request, double delta_p, double horizon_s,
                          const StreamManifest& manifest, const DownloadClock& clock);

// ---------------------------------------------------------------------------
// Session policies

/// What a policy sees when a segment is about to be requested. The trace is
/// ground truth; only the oracle may look at samples at or after t_request.
struct PolicyContext {
    std::int64_t segment = 0;
    double t_request = 0.0;
    double delta_p = 5.0;
    std::optional<std::size_t> previous_representation;
    const ThroughputTrace* trace = nullptr;
    const StreamManifest* manifest = nullptr;
    const DownloadClock* clock = nullptr;
};

struct DecisionLogEntry {
    double t = 0.0;
    std::int64_t segment = 0;
    std::size_t representation = 0;
    TrajectoryScore score;
};

class Policy {
public:
    virtual ~Policy() = default;
    virtual std::string name() const = 0;
    virtual std::size_t choose(const PolicyContext& context) = 0;
    /// Fresh copy with no session state.
    virtual std::unique_ptr<Policy> clone() const = 0;
    virtual const std::vector<DecisionLogEntry>* decision_log() const { return nullptr; }
};

class LowestPolicy final : public Policy {
public:
    std::string name() const override { return "lowest"; }
    std::size_t choose(const PolicyContext&) override { return 0; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<LowestPolicy>(); }
};

class FixedMarginPolicy final : public Policy {
public:
    explicit FixedMarginPolicy(double margin, int measurement_window_s = 2);
    std::string name() const override;
    std::size_t choose(const PolicyContext& context) override;
    std::unique_ptr<Policy> clone() const override;

private:
    double margin_;
    int window_s_;
};

class OraclePolicy final : public Policy {
public:
    explicit OraclePolicy(double horizon_s = 10.0) : horizon_s_(horizon_s) {}
    std::string name() const override { return "oracle"; }
    std::size_t choose(const PolicyContext& context) override;
    std::unique_ptr<Policy> clone() const override { return std::make_unique<OraclePolicy>(horizon_s_); }

private:
    double horizon_s_;
};

/// Per-horizon throughput predictions recomputed every whole second from the
/// trace history, with one online error model per horizon.
class PredictionTracker {
public:
    explicit PredictionTracker(const AdaptationConfig& config);

    /// Processes every whole second up to and including `second`: realizes
    /// predictions whose interval has ended, updates the error models and
    /// issues new predictions.
    void advance(const ThroughputTrace& trace, std::int64_t second);

    std::int64_t clock() const { return clock_; }
    const std::vector<double>& predictions() const { return current_; }
    const ErrorModelState& model(int horizon_s) const { return models_.at(static_cast<std::size_t>(horizon_s - 1)); }
    std::vector<ComposedErrorModel> snapshots() const;

private:
    double predict_at(const ThroughputTrace& trace, std::int64_t second, int horizon_s) const;

    AdaptationConfig config_;
    std::vector<ErrorModelState> models_;
    // issued_[T-1][s] is the prediction for [s, s + T).
    std::vector<std::vector<double>> issued_;
    std::vector<double> current_;
    std::vector<double> prefix_bits_;
    std::int64_t clock_ = -1;
};

class UtilityPolicy final : public Policy {
public:
    explicit UtilityPolicy(AdaptationConfig config = {});
    std::string name() const override { return "utility"; }
    std::size_t choose(const PolicyContext& context) override;
    std::unique_ptr<Policy> clone() const override { return std::make_unique<UtilityPolicy>(config_); }
    const std::vector<DecisionLogEntry>* decision_log() const override { return &log_; }

private:
    AdaptationConfig config_;
    PredictionTracker tracker_;
    std::vector<DecisionLogEntry> log_;
};

}  // namespace hals
