#pragma once
// Better/worse verdicts. The simulated oracle rewards a strict Dice
// increase against ground truth (ties are "worse"); the human oracle relays
// a reviewer's verdict through a FeedbackBroker.
#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "prefseg/core_types.hpp"
#include "prefseg/feedback_session.hpp"
#include "prefseg/metrics.hpp"

namespace prefseg {

enum class VerdictSource { simulated, human };

inline const char* to_string(VerdictSource s) { return s == VerdictSource::simulated ? "simulated" : "human"; }

struct PreferenceVerdict {
    int reward = -1;  // +1 better, -1 worse
    VerdictSource source = VerdictSource::simulated;
    std::optional<double> dice_before;
    std::optional<double> dice_after;
    std::optional<double> latency_ms;
};

inline PreferenceVerdict judge_simulated(const Mask& m_new, const Mask& m_current, const Mask& gt) {
    require_same_grid(m_new, m_current, "judge_simulated");
    require_same_grid(m_new, gt, "judge_simulated");
    PreferenceVerdict v;
    v.source = VerdictSource::simulated;
    v.dice_before = metrics::dice(m_current, gt);
    v.dice_after = metrics::dice(m_new, gt);
    v.reward = *v.dice_after > *v.dice_before ? +1 : -1;
    return v;
}

struct ComparisonContext {
    const ImageRecord* record = nullptr;
    int round = 0;
    int step = 0;
    int image_index = 0;
};

// Thrown when an oracle cannot continue and the run must stop.
struct RunAborted : Error {
    using Error::Error;
};

class PreferenceOracle {
public:
    virtual ~PreferenceOracle() = default;
    // nullopt means the step is skipped: no reward, no mask change.
    virtual std::optional<PreferenceVerdict> judge(const Mask& m_new, const Mask& m_current,
                                                   const ComparisonContext& ctx) = 0;
    virtual VerdictSource source() const = 0;
};

class SimulatedOracle final : public PreferenceOracle {
public:
    // flip_probability inverts the verdict at random (noisy-reviewer experiments).
    // Flip decisions are seeded per (round, image, step), so judging is
    // stateless and safe to call from several episodes at once.
    explicit SimulatedOracle(double flip_probability = 0.0, std::uint64_t seed = 0)
        : flip_(flip_probability), seed_(seed) {}

    std::optional<PreferenceVerdict> judge(const Mask& m_new, const Mask& m_current,
                                           const ComparisonContext& ctx) override {
        if (!ctx.record || !ctx.record->gt_mask)
            throw ValidationError("simulated oracle: record has no ground-truth mask");
        auto v = judge_simulated(m_new, m_current, *ctx.record->gt_mask);
        if (flip_ > 0) {
            std::mt19937_64 rng(mix_seed(seed_, std::uint64_t(ctx.round), std::uint64_t(ctx.image_index),
                                         std::uint64_t(ctx.step)));
            if (std::bernoulli_distribution(flip_)(rng)) v.reward = -v.reward;
        }
        return v;
    }

    VerdictSource source() const override { return VerdictSource::simulated; }

private:
    double flip_;
    std::uint64_t seed_;
};

enum class TimeoutPolicy { skip_step, abort_run };

inline std::optional<PreferenceVerdict> judge_human(FeedbackBroker& session, const Mask& m_new, const Mask& m_current,
                                                    const ImageRecord& context, const ComparisonContext& ctx,
                                                    std::chrono::milliseconds timeout, TimeoutPolicy policy) {
    Comparison c;
    c.comparison_id = "r" + std::to_string(ctx.round) + "-i" + std::to_string(ctx.image_index) + "-s" +
                      std::to_string(ctx.step);
    c.image_id = context.id;
    c.image = &context.image;
    c.before = m_current;
    c.after = m_new;
    c.round = ctx.round;
    c.step = ctx.step;
    c.image_index = ctx.image_index;
    const auto t0 = std::chrono::steady_clock::now();
    const auto verdict = session.request(std::move(c), timeout);
    if (!verdict) {
        if (policy == TimeoutPolicy::abort_run) throw RunAborted("human verdict timed out");
        return std::nullopt;
    }
    PreferenceVerdict v;
    v.source = VerdictSource::human;
    v.reward = *verdict == HumanVerdict::better ? +1 : -1;
    v.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return v;
}

class HumanOracle final : public PreferenceOracle {
public:
    HumanOracle(FeedbackBroker& session, std::chrono::milliseconds timeout, TimeoutPolicy policy)
        : session_(session), timeout_(timeout), policy_(policy) {}

    std::optional<PreferenceVerdict> judge(const Mask& m_new, const Mask& m_current,
                                           const ComparisonContext& ctx) override {
        return judge_human(session_, m_new, m_current, *ctx.record, ctx, timeout_, policy_);
    }

    VerdictSource source() const override { return VerdictSource::human; }

private:
    FeedbackBroker& session_;
    std::chrono::milliseconds timeout_;
    TimeoutPolicy policy_;
};

}  // namespace prefseg
