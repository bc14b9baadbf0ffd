#pragma once
// Rendezvous between the annotation engine and a single human reviewer.
//
// The engine posts one comparison at a time and blocks until a verdict
// arrives or the timeout expires. Clients long-poll for the pending
// comparison and submit verdicts keyed by comparison id; a repeated
// submission returns the first result and has no further effect.
#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include <json.hpp>

#include "prefseg/core_types.hpp"

namespace prefseg {

enum class HumanVerdict { better, worse };

inline const char* to_string(HumanVerdict v) { return v == HumanVerdict::better ? "better" : "worse"; }

inline std::optional<HumanVerdict> parse_verdict(const std::string& s) {
    if (s == "better") return HumanVerdict::better;
    if (s == "worse") return HumanVerdict::worse;
    return std::nullopt;
}

struct Comparison {
    std::string comparison_id;
    std::string image_id;
    const Tensor* image = nullptr;  // owned by the dataset, outlives the comparison
    Mask before;
    Mask after;
    int round = 0;
    int step = 0;
    int image_index = 0;
};

struct SessionClosed : Error {
    using Error::Error;
};

class FeedbackBroker {
public:
    enum class Status { idle, awaiting_verdict, finished };

    struct SubmitResult {
        enum class Kind { recorded, duplicate, unknown } kind;
        HumanVerdict verdict = HumanVerdict::worse;
    };

    explicit FeedbackBroker(std::string session_id) : session_id_(std::move(session_id)) {}

    const std::string& session_id() const noexcept { return session_id_; }

    // Engine side. Returns nullopt on timeout; the comparison is withdrawn.
    std::optional<HumanVerdict> request(Comparison c, std::chrono::milliseconds timeout) {
        std::unique_lock lock(mu_);
        if (status_ == Status::finished) throw SessionClosed("feedback session is closed");
        const std::string id = c.comparison_id;
        pending_ = std::move(c);
        status_ = Status::awaiting_verdict;
        cv_.notify_all();
        const bool got = cv_.wait_for(lock, timeout, [&] { return decided_.count(id) || status_ == Status::finished; });
        pending_.reset();
        if (status_ == Status::finished && !decided_.count(id)) throw SessionClosed("feedback session closed mid-comparison");
        status_ = Status::idle;
        if (!got) return std::nullopt;
        return decided_.at(id);
    }

    // Client side: waits up to `wait` for a pending comparison. The same
    // comparison is served again until a verdict for it is recorded.
    std::optional<Comparison> next(std::chrono::milliseconds wait) {
        std::unique_lock lock(mu_);
        cv_.wait_for(lock, wait, [&] { return pending_.has_value() || status_ == Status::finished; });
        return pending_;
    }

    SubmitResult submit(const std::string& comparison_id, HumanVerdict v) {
        std::lock_guard lock(mu_);
        if (auto it = decided_.find(comparison_id); it != decided_.end())
            return {SubmitResult::Kind::duplicate, it->second};
        if (!pending_ || pending_->comparison_id != comparison_id) return {SubmitResult::Kind::unknown, v};
        decided_[comparison_id] = v;
        pending_.reset();  // not served again while the engine wakes up
        ++verdicts_recorded_;
        cv_.notify_all();
        return {SubmitResult::Kind::recorded, v};
    }

    void close() {
        std::lock_guard lock(mu_);
        status_ = Status::finished;
        cv_.notify_all();
    }

    Status status() const {
        std::lock_guard lock(mu_);
        return status_;
    }

    std::size_t verdicts_recorded() const {
        std::lock_guard lock(mu_);
        return verdicts_recorded_;
    }

    // Progress published by the engine for monitoring.
    void set_progress(nlohmann::json progress) {
        std::lock_guard lock(mu_);
        progress_ = std::move(progress);
    }

    nlohmann::json progress() const {
        std::lock_guard lock(mu_);
        return progress_;
    }

private:
    std::string session_id_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::optional<Comparison> pending_;
    std::map<std::string, HumanVerdict> decided_;
    Status status_ = Status::idle;
    std::size_t verdicts_recorded_ = 0;
    nlohmann::json progress_ = nlohmann::json::object();
};

inline const char* to_string(FeedbackBroker::Status s) {
    switch (s) {
        case FeedbackBroker::Status::idle: return "idle";
        case FeedbackBroker::Status::awaiting_verdict: return "awaiting_verdict";
        case FeedbackBroker::Status::finished: return "finished";
    }
    return "idle";
}

}  // namespace prefseg
