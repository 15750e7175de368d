#include "hals/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "hals/errors.hpp"

namespace hals {

namespace {

constexpr double kTimeEps = 1e-9;

std::size_t count_switches(const Trajectory& t, std::optional<std::size_t> previous)
{
    std::size_t switches = 0;
    if (previous && !t.choices.empty() && t.choices.front() != *previous) ++switches;
    for (std::size_t k = 1; k < t.choices.size(); ++k) switches += t.choices[k] != t.choices[k - 1] ? 1 : 0;
    return switches;
}

}  // namespace

void StreamManifest::validate() const
{
    if (!(tau_s > 0.0)) throw ConfigError("manifest: tau_s must be positive");
    if (representations.empty()) throw ConfigError("manifest: no representations");
    for (std::size_t j = 1; j < representations.size(); ++j) {
        if (!(representations[j].mmbr_bps > representations[j - 1].mmbr_bps))
            throw ConfigError("manifest: representations must be sorted by ascending MMBR");
        if (!(representations[j].psnr_db > representations[j - 1].psnr_db))
            throw ConfigError("manifest: PSNR must increase strictly with the representation index");
    }
    if (segment_sizes.rows() < 1 || segment_sizes.cols() != static_cast<Eigen::Index>(m()))
        throw ConfigError("manifest: segment size matrix must be n x m");
    if (!(segment_sizes.array() > 0.0).all()) throw ConfigError("manifest: segment sizes must be positive");
    const Eigen::RowVectorXd mean_rate = segment_sizes.colwise().mean() / tau_s;
    for (std::size_t j = 0; j < m(); ++j) {
        const double nominal = representations[j].mmbr_bps;
        if (std::abs(mean_rate[static_cast<Eigen::Index>(j)] - nominal) > 0.01 * nominal)
            throw ConfigError("manifest: mean segment rate of representation " + std::to_string(j + 1)
                              + " deviates more than 1% from its MMBR");
    }
}

StreamManifest generate_manifest(double tau_s, std::vector<Representation> representations, Eigen::Index n_segments,
                                 double vbr_cv, std::uint64_t seed)
{
    if (n_segments < 1) throw ConfigError("manifest: need at least one segment");
    if (!(vbr_cv >= 0.0)) throw ConfigError("manifest: vbr_cv must be non-negative");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sigma = std::sqrt(std::log1p(vbr_cv * vbr_cv));
    Eigen::VectorXd factor(n_segments);
    for (Eigen::Index i = 0; i < n_segments; ++i) factor[i] = std::exp(sigma * normal(rng));
    factor /= factor.mean();

    StreamManifest manifest;
    manifest.tau_s = tau_s;
    manifest.representations = std::move(representations);
    Eigen::RowVectorXd rate(static_cast<Eigen::Index>(manifest.m()));
    for (std::size_t j = 0; j < manifest.m(); ++j) rate[static_cast<Eigen::Index>(j)] = manifest.representations[j].mmbr_bps;
    manifest.segment_sizes = tau_s * factor * rate;
    manifest.validate();
    return manifest;
}

std::vector<Representation> geometric_ladder(double min_bps, double max_bps, std::size_t count)
{
    if (count < 1 || !(min_bps > 0.0) || !(max_bps >= min_bps)) throw ConfigError("bad representation ladder");
    std::vector<Representation> ladder(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double frac = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
        ladder[k].mmbr_bps = min_bps * std::pow(max_bps / min_bps, frac);
        ladder[k].psnr_db = 30.0 + 10.0 * std::log10(ladder[k].mmbr_bps / min_bps);
    }
    return ladder;
}

void AdaptationConfig::validate(double tau_s) const
{
    if (!(alpha_q >= 0.0 && alpha_q <= 1.0)) throw ConfigError("alpha_q must lie in [0, 1]");
    if (!(alpha_rb < 0.0)) throw ConfigError("alpha_rb must be negative");
    if (!(alpha_cdf > 0.0)) throw ConfigError("alpha_cdf must be positive");
    if (t_max_s < 1) throw ConfigError("t_max_s must be at least 1");
    if (!(rho_min_bps > 0.0)) throw ConfigError("rho_min_bps must be positive");
    if (!(delta_p_max_s >= 2.0 * tau_s)) throw ConfigError("delta_p_max_s must be at least twice the segment duration");
    if (!(enumeration_cap >= 1.0)) throw ConfigError("enumeration_cap must be at least 1");
    if (beam_width < 1) throw ConfigError("beam_width must be at least 1");
    predictor.validate();
}

std::int64_t reachable_horizon(std::int64_t segment, double t_pi, double tau_s, double delta_p, int t_max_s)
{
    const double limit = t_pi + t_max_s;
    const double last = std::floor((limit - delta_p) / tau_s + kTimeEps);
    return std::max(segment, static_cast<std::int64_t>(last));
}

int covering_horizon(double t_pi, double deadline, int t_max_s)
{
    const double needed = std::ceil(deadline - t_pi - kTimeEps);
    return static_cast<int>(std::clamp(needed, 1.0, static_cast<double>(t_max_s)));
}

std::vector<double> deadline_meet_probabilities(const Trajectory& trajectory, const DecisionContext& context,
                                                const StreamManifest& manifest, const AdaptationConfig& config)
{
    std::vector<double> meets;
    meets.reserve(trajectory.choices.size());
    double cumulative = 0.0;
    for (std::size_t k = 0; k < trajectory.choices.size(); ++k) {
        const std::int64_t segment = trajectory.first_segment + static_cast<std::int64_t>(k);
        cumulative += manifest.size_bits(segment, trajectory.choices[k]);
        const double deadline = playback_deadline(segment, manifest.tau_s, context.delta_p);
        const int horizon = covering_horizon(context.t_pi, deadline, config.t_max_s);
        const auto index = static_cast<std::size_t>(horizon - 1);
        if (index >= context.predictions.size() || index >= context.models.size())
            throw MissingPrediction("no prediction for horizon " + std::to_string(horizon) + " s");
        const double available = deadline - context.t_request;
        if (available <= 0.0) {
            meets.push_back(0.0);
            continue;
        }
        const double rho_hat = std::max(context.predictions[index], config.rho_min_bps);
        meets.push_back(context.models[index].cdf(rho_hat * available / cumulative - 1.0));
    }
    return meets;
}

double combine_rebuffer_probability(std::span<const double> meet_probabilities, PrbMode mode)
{
    if (mode == PrbMode::Product) {
        double all_met = 1.0;
        for (double p : meet_probabilities) all_met *= p;
        return std::clamp(1.0 - all_met, 0.0, 1.0);
    }
    double sum = 0.0;
    for (double p : meet_probabilities) sum += p;
    return std::clamp(1.0 - sum, 0.0, 1.0);
}

double rebuffer_probability(const Trajectory& trajectory, const DecisionContext& context,
                            const StreamManifest& manifest, const AdaptationConfig& config)
{
    const auto meets = deadline_meet_probabilities(trajectory, context, manifest, config);
    return combine_rebuffer_probability(meets, config.prb_mode);
}

double u_rb(double p_rb, double alpha_rb)
{
    // (e^{a p} - e^{a}) / (1 - e^{a}) factored as e^{a p} (1 - e^{a (1 - p)}) / (1 - e^{a}), which keeps
    // relative precision both as a -> 0 and when both exponentials are tiny.
    const double value = std::exp(alpha_rb * p_rb) * std::expm1(alpha_rb * (1.0 - p_rb)) / std::expm1(alpha_rb);
    return std::clamp(value, 0.0, 1.0);
}

double u_q(std::size_t rep, const StreamManifest& manifest)
{
    if (manifest.m() == 1) return 0.0;
    const double lo = manifest.representations.front().psnr_db;
    const double hi = manifest.representations.back().psnr_db;
    if (!(hi > lo)) throw DegeneratePsnrRange("highest and lowest PSNR coincide");
    return (manifest.representations.at(rep).psnr_db - lo) / (hi - lo);
}

double u_q(const Trajectory& trajectory, const StreamManifest& manifest)
{
    double sum = 0.0;
    for (std::size_t rep : trajectory.choices) sum += u_q(rep, manifest);
    return sum / static_cast<double>(trajectory.choices.size());
}

double u_qf(const Trajectory& trajectory, const StreamManifest& manifest, std::optional<std::size_t> previous)
{
    std::size_t before = previous.value_or(trajectory.choices.front());
    double sum = 0.0;
    for (std::size_t rep : trajectory.choices) {
        sum += std::abs(u_q(rep, manifest) - u_q(before, manifest));
        before = rep;
    }
    return 1.0 - sum / static_cast<double>(trajectory.choices.size());
}

double utility(double u_rb_value, double u_q_value, double u_qf_value, double alpha_q)
{
    return u_rb_value * (alpha_q * u_q_value + (1.0 - alpha_q) * u_qf_value);
}

TrajectoryScore score_trajectory(const Trajectory& trajectory, const DecisionContext& context,
                                 const StreamManifest& manifest, const AdaptationConfig& config)
{
    TrajectoryScore s;
    s.p_rb = rebuffer_probability(trajectory, context, manifest, config);
    s.u_rb = u_rb(s.p_rb, config.alpha_rb);
    s.u_q = u_q(trajectory, manifest);
    s.u_qf = u_qf(trajectory, manifest, context.previous_representation);
    s.u = utility(s.u_rb, s.u_q, s.u_qf, config.alpha_q);
    return s;
}

bool preferred(const TrajectoryScore& a, const Trajectory& ta, const TrajectoryScore& b, const Trajectory& tb,
               std::optional<std::size_t> previous)
{
    if (a.u != b.u) return a.u > b.u;
    if (ta.choices.front() != tb.choices.front()) return ta.choices.front() < tb.choices.front();
    const auto sa = count_switches(ta, previous);
    const auto sb = count_switches(tb, previous);
    if (sa != sb) return sa < sb;
    return ta.choices < tb.choices;
}

namespace {

/// Shared state for the exact and the beam search over trajectories.
class TrajectorySearch {
public:
    TrajectorySearch(const DecisionContext& context, const StreamManifest& manifest, const AdaptationConfig& config,
                     std::size_t length)
        : context_(context), manifest_(manifest), config_(config), length_(length)
    {
        quality_.resize(manifest.m());
        for (std::size_t j = 0; j < manifest.m(); ++j) quality_[j] = u_q(j, manifest);
        available_.resize(length);
        rho_hat_.resize(length);
        model_.resize(length);
        lowest_.resize(length);
        for (std::size_t k = 0; k < length; ++k) {
            const std::int64_t segment = context.segment + static_cast<std::int64_t>(k);
            const double deadline = playback_deadline(segment, manifest.tau_s, context.delta_p);
            const int horizon = covering_horizon(context.t_pi, deadline, config.t_max_s);
            const auto index = static_cast<std::size_t>(horizon - 1);
            if (index >= context.predictions.size() || index >= context.models.size())
                throw MissingPrediction("no prediction for horizon " + std::to_string(horizon) + " s");
            available_[k] = deadline - context.t_request;
            rho_hat_[k] = std::max(context.predictions[index], config.rho_min_bps);
            model_[k] = &context.models[index];
            lowest_[k] = manifest.size_bits(segment, 0);
        }
    }

    struct Node {
        std::vector<std::size_t> choices;
        double bits = 0.0;
        double meet_product = 1.0;
        double meet_sum = 0.0;
        double quality_sum = 0.0;
        double change_sum = 0.0;
        std::size_t switches = 0;
        double bound = 1.0;
    };

    Node root() const { return {}; }

    Node extend(const Node& parent, std::size_t rep) const
    {
        const std::size_t k = parent.choices.size();
        Node node = parent;
        node.choices.push_back(rep);
        node.bits += manifest_.size_bits(context_.segment + static_cast<std::int64_t>(k), rep);
        const double meet = meet_probability(k, node.bits);
        node.meet_product *= meet;
        node.meet_sum += meet;
        node.quality_sum += quality_[rep];
        const auto before = k == 0 ? context_.previous_representation.value_or(rep) : parent.choices.back();
        node.change_sum += std::abs(quality_[rep] - quality_[before]);
        node.switches += (k == 0 ? (context_.previous_representation && rep != *context_.previous_representation)
                                 : rep != parent.choices.back())
                             ? 1
                             : 0;
        node.bound = upper_bound(node);
        return node;
    }

    Trajectory trajectory(const Node& node) const { return {context_.segment, node.choices}; }

    TrajectoryScore score(const Node& node) const
    {
        return score_trajectory(trajectory(node), context_, manifest_, config_);
    }

    std::size_t length() const { return length_; }

private:
    double meet_probability(std::size_t k, double bits) const
    {
        if (available_[k] <= 0.0) return 0.0;
        return model_[k]->cdf(rho_hat_[k] * available_[k] / bits - 1.0);
    }

    // Later segments at the lowest representation maximize every remaining
    // meet probability; remaining quality terms are at most 1 with no change.
    double upper_bound(const Node& node) const
    {
        double product = node.meet_product;
        double sum = node.meet_sum;
        double bits = node.bits;
        for (std::size_t k = node.choices.size(); k < length_; ++k) {
            bits += lowest_[k];
            const double meet = meet_probability(k, bits);
            product *= meet;
            sum += meet;
        }
        const double p_rb = config_.prb_mode == PrbMode::Product ? std::clamp(1.0 - product, 0.0, 1.0)
                                                                 : std::clamp(1.0 - sum, 0.0, 1.0);
        const double n = static_cast<double>(length_);
        const double remaining = static_cast<double>(length_ - node.choices.size());
        const double quality = config_.alpha_q * (node.quality_sum + remaining) / n
                               + (1.0 - config_.alpha_q) * (1.0 - node.change_sum / n);
        const double bound = u_rb(p_rb, config_.alpha_rb) * std::clamp(quality, 0.0, 1.0);
        return bound * (1.0 + 1e-9) + 1e-300;
    }

    const DecisionContext& context_;
    const StreamManifest& manifest_;
    const AdaptationConfig& config_;
    std::size_t length_;
    std::vector<double> quality_;
    std::vector<double> available_;
    std::vector<double> rho_hat_;
    std::vector<const ComposedErrorModel*> model_;
    std::vector<double> lowest_;
};

struct Incumbent {
    Trajectory trajectory;
    TrajectoryScore score;
    std::size_t switches = 0;
};

void consider(Incumbent& best, bool& has_best, const Trajectory& t, const TrajectoryScore& s,
              std::optional<std::size_t> previous)
{
    if (!has_best || preferred(s, t, best.score, best.trajectory, previous)) {
        best = {t, s, count_switches(t, previous)};
        has_best = true;
    }
}

Incumbent beam_search(const TrajectorySearch& search, std::size_t m, std::size_t width,
                      std::optional<std::size_t> previous)
{
    using Node = TrajectorySearch::Node;
    std::vector<Node> beam{search.root()};
    for (std::size_t depth = 0; depth < search.length(); ++depth) {
        std::vector<Node> next;
        next.reserve(beam.size() * m);
        for (const auto& node : beam)
            for (std::size_t j = 0; j < m; ++j) next.push_back(search.extend(node, j));
        std::stable_sort(next.begin(), next.end(), [](const Node& a, const Node& b) {
            if (a.bound != b.bound) return a.bound > b.bound;
            return a.choices < b.choices;
        });
        if (next.size() > width) next.resize(width);
        beam = std::move(next);
    }
    Incumbent best;
    bool has_best = false;
    for (const auto& node : beam) consider(best, has_best, search.trajectory(node), search.score(node), previous);
    return best;
}

/// Depth-first branch and bound. Returns the same trajectory as scoring every
/// candidate, including the tie-breaking order.
class BranchAndBound {
public:
    BranchAndBound(const TrajectorySearch& search, std::size_t m, std::optional<std::size_t> previous,
                   Incumbent seed)
        : search_(search), m_(m), previous_(previous), best_(std::move(seed))
    {
    }

    Incumbent run()
    {
        visit(search_.root());
        return best_;
    }

private:
    // Whether some completion of the prefix could win a utility tie against the incumbent.
    bool could_win_tie(const TrajectorySearch::Node& node) const
    {
        const auto& inc = best_.trajectory.choices;
        if (node.choices.front() != inc.front()) return node.choices.front() < inc.front();
        if (node.switches != best_.switches) return node.switches < best_.switches;
        // Equal switch count: only the completion repeating the last choice keeps it.
        std::vector<std::size_t> completion = node.choices;
        completion.resize(search_.length(), node.choices.back());
        return completion < inc;
    }

    void visit(const TrajectorySearch::Node& node)
    {
        if (node.choices.size() == search_.length()) {
            consider(best_, has_best_, search_.trajectory(node), search_.score(node), previous_);
            return;
        }
        for (std::size_t j = 0; j < m_; ++j) {
            const auto child = search_.extend(node, j);
            if (child.bound < best_.score.u) continue;
            if (child.bound <= best_.score.u && !could_win_tie(child)) continue;
            visit(child);
        }
    }

    const TrajectorySearch& search_;
    std::size_t m_;
    std::optional<std::size_t> previous_;
    Incumbent best_;
    bool has_best_ = true;
};

}  // namespace

Decision choose_representation(const DecisionContext& context, const StreamManifest& manifest,
                               const AdaptationConfig& config)
{
    const std::size_t m = manifest.m();
    if (m == 1) {
        Decision d;
        d.trajectory = {context.segment, {0}};
        return d;
    }
    const std::int64_t last =
        reachable_horizon(context.segment, context.t_pi, manifest.tau_s, context.delta_p, config.t_max_s);
    const auto length = static_cast<std::size_t>(last - context.segment + 1);
    const TrajectorySearch search(context, manifest, config, length);

    Incumbent best = beam_search(search, m, config.beam_width, context.previous_representation);
    const double candidates = std::pow(static_cast<double>(m), static_cast<double>(length));
    const bool exhaustive = candidates <= config.enumeration_cap;
    if (exhaustive) best = BranchAndBound(search, m, context.previous_representation, std::move(best)).run();

    Decision d;
    d.representation = best.trajectory.choices.front();
    d.trajectory = std::move(best.trajectory);
    d.score = best.score;
    d.exhaustive = exhaustive;
    return d;
}

TuneIn tune_in(double t, double tau_s, double delta_p_max_s)
{
    if (t + kTimeEps < tau_s) throw NoSegmentAvailable("no segment is published before t = tau");
    const double first = std::ceil((t + tau_s - delta_p_max_s) / tau_s - kTimeEps);
    const auto i0 = static_cast<std::int64_t>(std::max(0.0, first));
    TuneIn out;
    out.first_segment = i0;
    out.delta_p = delta_p_max_s;
    out.playback_start = playback_deadline(i0, tau_s, delta_p_max_s);
    out.representation = 0;
    return out;
}

double buffer_level(const ClientState& state, double t, double tau_s)
{
    if (!state.last_played_deadline) return 0.0;
    return std::max(0.0, *state.last_played_deadline + tau_s - t);
}

ClientState on_deadline_miss(const ClientState& state, double t, double tau_s, double delta_p_max_s)
{
    const TuneIn ti = tune_in(t, tau_s, delta_p_max_s);
    ClientState next = state;
    next.next_segment = std::max(ti.first_segment, state.next_segment + 1);
    next.skipped += next.next_segment - state.next_segment;
    next.delta_p = ti.delta_p;
    next.awaiting_tune_in_segment = true;
    return next;
}

std::size_t fixed_margin_choice(double margin, double rho_hat_bps, const StreamManifest& manifest)
{
    if (!(margin > 0.0 && margin < 1.0)) throw ConfigError("margin must lie in (0, 1)");
    std::size_t chosen = 0;
    for (std::size_t j = 0; j < manifest.m(); ++j)
        if (manifest.representations[j].mmbr_bps <= margin * rho_hat_bps) chosen = j;
    return chosen;
}

std::size_t oracle_choice(std::int64_t segment, double t_request, double delta_p, double horizon_s,
                          const StreamManifest& manifest, const DownloadClock& clock)
{
    const double tau = manifest.tau_s;
    const auto feasible = [&](std::size_t rep) {
        double done = clock(t_request, manifest.size_bits(segment, rep));
        if (done > playback_deadline(segment, tau, delta_p)) return false;
        for (std::int64_t k = segment + 1; playback_deadline(k, tau, delta_p) <= t_request + horizon_s; ++k) {
            const double start = std::max(done, static_cast<double>(k + 1) * tau);
            done = clock(start, manifest.size_bits(k, 0));
            if (done > playback_deadline(k, tau, delta_p)) return false;
        }
        return true;
    };
    for (std::size_t j = manifest.m(); j-- > 0;)
        if (feasible(j)) return j;
    return 0;
}

FixedMarginPolicy::FixedMarginPolicy(double margin, int measurement_window_s)
    : margin_(margin), window_s_(measurement_window_s)
{
    if (!(margin > 0.0 && margin < 1.0)) throw ConfigError("margin must lie in (0, 1)");
    if (window_s_ < 1) throw ConfigError("measurement window must be at least 1 s");
}

std::string FixedMarginPolicy::name() const
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "fixed_margin_%.2f", margin_);
    return buf;
}

std::size_t FixedMarginPolicy::choose(const PolicyContext& context)
{
    const auto& bytes = context.trace->bytes;
    const auto now = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(context.t_request)), bytes.size());
    const auto from = std::max<std::int64_t>(0, now - window_s_);
    if (now <= from) return 0;
    const double rho_hat = 8.0 * static_cast<double>(bytes.segment(from, now - from).sum()) / static_cast<double>(now - from);
    return fixed_margin_choice(margin_, rho_hat, *context.manifest);
}

std::unique_ptr<Policy> FixedMarginPolicy::clone() const
{
    return std::make_unique<FixedMarginPolicy>(margin_, window_s_);
}

std::size_t OraclePolicy::choose(const PolicyContext& context)
{
    return oracle_choice(context.segment, context.t_request, context.delta_p, horizon_s_, *context.manifest,
                         *context.clock);
}

PredictionTracker::PredictionTracker(const AdaptationConfig& config) : config_(config)
{
    for (int horizon = 1; horizon <= config.t_max_s; ++horizon) {
        ErrorModelConfig mc;
        mc.horizon_s = horizon;
        mc.alpha_cdf = config.alpha_cdf;
        // Underestimation: logistic fits best at 1 s, truncated normal above.
        mc.under_family = horizon == 1 ? Family::Logistic : Family::Normal;
        mc.over_family = Family::Lomax;
        mc.pu_mode = config.pu_mode;
        models_.emplace_back(mc);
    }
    issued_.resize(static_cast<std::size_t>(config.t_max_s));
    current_.assign(static_cast<std::size_t>(config.t_max_s), config.rho_min_bps);
}

double PredictionTracker::predict_at(const ThroughputTrace& trace, std::int64_t second, int horizon_s) const
{
    (void)trace;
    if (second <= 0) return config_.rho_min_bps;
    const auto mean_bits = [&](std::int64_t from, std::int64_t to) {
        return (prefix_bits_[static_cast<std::size_t>(to)] - prefix_bits_[static_cast<std::size_t>(from)])
               / static_cast<double>(to - from);
    };
    const auto windows = std::min<std::int64_t>(config_.predictor.n_past, second / horizon_s);
    if (windows == 0) return mean_bits(0, second);
    Eigen::VectorXd past(windows);
    for (std::int64_t q = 0; q < windows; ++q) {
        const std::int64_t end = second - (windows - 1 - q) * horizon_s;
        past[q] = mean_bits(end - horizon_s, end);
    }
    PredictorSpec spec = config_.predictor;
    spec.n_past = static_cast<int>(windows);
    try {
        spec.validate();
    } catch (const ConfigError&) {
        spec = PredictorSpec{PredictorKind::SMA, static_cast<int>(windows), MeanType::Arithmetic};
    }
    return predict(spec, past).value;
}

void PredictionTracker::advance(const ThroughputTrace& trace, std::int64_t second)
{
    if (prefix_bits_.empty()) {
        prefix_bits_.resize(static_cast<std::size_t>(trace.duration()) + 1, 0.0);
        for (std::int64_t t = 0; t < trace.duration(); ++t)
            prefix_bits_[static_cast<std::size_t>(t + 1)] =
                prefix_bits_[static_cast<std::size_t>(t)] + 8.0 * static_cast<double>(trace.bytes[t]);
    }
    second = std::min(second, trace.duration());
    for (std::int64_t s = clock_ + 1; s <= second; ++s) {
        for (int horizon = 1; horizon <= config_.t_max_s; ++horizon) {
            auto& issued = issued_[static_cast<std::size_t>(horizon - 1)];
            const std::int64_t t_issued = s - horizon;
            if (t_issued >= 0) {
                PredictionRecord rec;
                rec.t_issued = t_issued;
                rec.horizon_s = horizon;
                rec.rho_hat = issued[static_cast<std::size_t>(t_issued)];
                rec.rho_actual = (prefix_bits_[static_cast<std::size_t>(s)]
                                  - prefix_bits_[static_cast<std::size_t>(t_issued)])
                                 / horizon;
                rec.signed_error = signed_relative_error(rec.rho_hat, rec.rho_actual, config_.rho_min_bps);
                models_[static_cast<std::size_t>(horizon - 1)].update(rec, static_cast<double>(s));
            }
            issued.push_back(predict_at(trace, s, horizon));
            current_[static_cast<std::size_t>(horizon - 1)] = issued.back();
        }
        clock_ = s;
    }
}

std::vector<ComposedErrorModel> PredictionTracker::snapshots() const
{
    std::vector<ComposedErrorModel> out;
    out.reserve(models_.size());
    for (const auto& m : models_) out.push_back(m.snapshot());
    return out;
}

UtilityPolicy::UtilityPolicy(AdaptationConfig config) : config_(std::move(config)), tracker_(config_) {}

std::size_t UtilityPolicy::choose(const PolicyContext& context)
{
    const auto t_pi = static_cast<std::int64_t>(std::floor(context.t_request));
    tracker_.advance(*context.trace, t_pi);
    const auto models = tracker_.snapshots();
    DecisionContext dc;
    dc.segment = context.segment;
    dc.t_request = context.t_request;
    dc.t_pi = static_cast<double>(tracker_.clock());
    dc.delta_p = context.delta_p;
    dc.previous_representation = context.previous_representation;
    dc.predictions = tracker_.predictions();
    dc.models = models;
    const Decision d = choose_representation(dc, *context.manifest, config_);
    log_.push_back({context.t_request, context.segment, d.representation, d.score});
    return d.representation;
}

}  // namespace hals
