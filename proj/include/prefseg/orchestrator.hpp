#pragma once
// Multi-round annotation loop: per-image click episodes judged better/worse,
// top-K pseudo-label filtering, learner fine-tuning and adapter training,
// with every round persisted under <output_dir>/round_NN/.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "prefseg/checkpoint.hpp"
#include "prefseg/clicking_agent.hpp"
#include "prefseg/core_types.hpp"
#include "prefseg/feature_provider.hpp"
#include "prefseg/feedback_session.hpp"
#include "prefseg/label_propagation.hpp"
#include "prefseg/manifest.hpp"
#include "prefseg/metrics.hpp"
#include "prefseg/oracle.hpp"
#include "prefseg/pnm.hpp"
#include "prefseg/seg_model.hpp"

namespace prefseg {

enum class QualityProxy { mean_accepted_reward, model_agreement };
enum class OracleMode { simulated, human };

NLOHMANN_JSON_SERIALIZE_ENUM(QualityProxy, {{QualityProxy::mean_accepted_reward, "mean_accepted_reward"},
                                            {QualityProxy::model_agreement, "model_agreement"}})
NLOHMANN_JSON_SERIALIZE_ENUM(OracleMode, {{OracleMode::simulated, "simulated"}, {OracleMode::human, "human"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ConflictRule, {{ConflictRule::latest_wins, "latest_wins"},
                                            {ConflictRule::max_similarity_wins, "max_similarity_wins"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TimeoutPolicy, {{TimeoutPolicy::skip_step, "skip_step"},
                                             {TimeoutPolicy::abort_run, "abort_run"}})

struct RunConfig {
    int rounds = 5;
    int steps_per_image = 5;
    double tau = 0.8;
    ConflictRule conflict_rule = ConflictRule::max_similarity_wins;
    double top_k_percent = 1.0;
    QualityProxy quality_proxy = QualityProxy::mean_accepted_reward;
    OracleMode oracle_mode = OracleMode::simulated;
    std::uint64_t seed = 0;
    std::string output_dir = "run";
    bool cumulative = false;         // train on every round's pseudo-labels, not only the current one
    bool parallel_episodes = false;  // simulated mode only; agent updates applied at round end

    struct Agent {
        double temperature = 1.0;
        double learning_rate = 1e-3;
        bool baseline = false;
    } agent;
    struct Seg {
        double learning_rate = 0.1;
        int epochs = 5;
        int batch_size = 64;
    } seg;
    struct Adapter {
        double learning_rate = 1e-2;
        double margin = 0.2;
        int steps = 200;
        int batch_size = 32;
    } adapter;
    struct Oracle {
        double flip_probability = 0.0;
        double human_timeout_s = 600.0;
        TimeoutPolicy timeout_policy = TimeoutPolicy::skip_step;
    } oracle;

    void validate() const {
        if (rounds < 1) throw ValidationError("config: rounds must be >= 1");
        if (steps_per_image < 1) throw ValidationError("config: steps_per_image must be >= 1");
        PropagationConfig{tau, conflict_rule}.validate();
        if (!(top_k_percent > 0.0 && top_k_percent <= 1.0)) throw ValidationError("config: top_k_percent in (0,1]");
        if (!(agent.temperature > 0)) throw ValidationError("config: agent.temperature must be > 0");
        if (!(agent.learning_rate > 0) || !(seg.learning_rate > 0) || !(adapter.learning_rate > 0))
            throw ValidationError("config: learning rates must be > 0");
        if (seg.epochs < 0 || adapter.steps < 0) throw ValidationError("config: epochs/steps must be >= 0");
        if (!(oracle.flip_probability >= 0 && oracle.flip_probability <= 1))
            throw ValidationError("config: oracle.flip_probability in [0,1]");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"rounds", c.rounds},
         {"steps_per_image", c.steps_per_image},
         {"tau", c.tau},
         {"conflict_rule", c.conflict_rule},
         {"top_k_percent", c.top_k_percent},
         {"quality_proxy", c.quality_proxy},
         {"oracle_mode", c.oracle_mode},
         {"seed", c.seed},
         {"output_dir", c.output_dir},
         {"cumulative", c.cumulative},
         {"parallel_episodes", c.parallel_episodes},
         {"agent", {{"temperature", c.agent.temperature}, {"learning_rate", c.agent.learning_rate},
                    {"baseline", c.agent.baseline}}},
         {"seg_model", {{"learning_rate", c.seg.learning_rate}, {"epochs", c.seg.epochs},
                        {"batch_size", c.seg.batch_size}}},
         {"adapter", {{"learning_rate", c.adapter.learning_rate}, {"margin", c.adapter.margin},
                      {"steps", c.adapter.steps}, {"batch_size", c.adapter.batch_size}}},
         {"oracle", {{"flip_probability", c.oracle.flip_probability},
                     {"human_timeout_s", c.oracle.human_timeout_s},
                     {"timeout_policy", c.oracle.timeout_policy}}}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    c.rounds = j.value("rounds", c.rounds);
    c.steps_per_image = j.value("steps_per_image", c.steps_per_image);
    c.tau = j.value("tau", c.tau);
    c.conflict_rule = j.value("conflict_rule", c.conflict_rule);
    c.top_k_percent = j.value("top_k_percent", c.top_k_percent);
    c.quality_proxy = j.value("quality_proxy", c.quality_proxy);
    c.oracle_mode = j.value("oracle_mode", c.oracle_mode);
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.cumulative = j.value("cumulative", c.cumulative);
    c.parallel_episodes = j.value("parallel_episodes", c.parallel_episodes);
    if (j.contains("agent")) {
        const auto& a = j["agent"];
        c.agent.temperature = a.value("temperature", c.agent.temperature);
        c.agent.learning_rate = a.value("learning_rate", c.agent.learning_rate);
        c.agent.baseline = a.value("baseline", c.agent.baseline);
    }
    if (j.contains("seg_model")) {
        const auto& s = j["seg_model"];
        c.seg.learning_rate = s.value("learning_rate", c.seg.learning_rate);
        c.seg.epochs = s.value("epochs", c.seg.epochs);
        c.seg.batch_size = s.value("batch_size", c.seg.batch_size);
    }
    if (j.contains("adapter")) {
        const auto& a = j["adapter"];
        c.adapter.learning_rate = a.value("learning_rate", c.adapter.learning_rate);
        c.adapter.margin = a.value("margin", c.adapter.margin);
        c.adapter.steps = a.value("steps", c.adapter.steps);
        c.adapter.batch_size = a.value("batch_size", c.adapter.batch_size);
    }
    if (j.contains("oracle")) {
        const auto& o = j["oracle"];
        c.oracle.flip_probability = o.value("flip_probability", c.oracle.flip_probability);
        c.oracle.human_timeout_s = o.value("human_timeout_s", c.oracle.human_timeout_s);
        c.oracle.timeout_policy = o.value("timeout_policy", c.oracle.timeout_policy);
    }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("missing config: " + path.string());
    RunConfig c;
    try {
        c = nlohmann::json::parse(is).get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
    c.validate();
    return c;
}

// --- episodes -------------------------------------------------------------

struct StepLog {
    int step = 0;
    int row = 0;  // click pixel
    int col = 0;
    int action_index = 0;
    Label label = Label::foreground;
    double log_prob = 0;
    bool skipped = false;
    int reward = 0;
    bool accepted = false;
    std::optional<double> dice_before;
    std::optional<double> dice_after;
    std::optional<double> latency_ms;
};

struct EpisodeLog {
    std::string image_id;
    std::vector<StepLog> steps;
    std::vector<double> dice_trajectory;  // M_current vs GT after each step (index 0 = initial); empty without GT
    bool agent_updated = false;
    double grad_norm = 0;

    int judged_steps() const {
        return int(std::count_if(steps.begin(), steps.end(), [](const StepLog& s) { return !s.skipped; }));
    }
    int accepted_steps() const {
        return int(std::count_if(steps.begin(), steps.end(), [](const StepLog& s) { return s.accepted; }));
    }
    double accepted_fraction() const {
        const int n = judged_steps();
        return n == 0 ? 0.0 : double(accepted_steps()) / n;
    }
    double mean_reward() const {
        const int n = judged_steps();
        if (n == 0) return 0.0;
        double s = 0;
        for (const auto& st : steps)
            if (!st.skipped) s += st.reward;
        return s / n;
    }
};

struct EpisodeResult {
    Mask initial;
    Mask final_mask;
    EpisodeLog log;
    std::vector<TrajectoryStep> trajectory;
};

enum class ClickPolicy { agent, uniform_random };

struct EpisodeOptions {
    ClickPolicy policy = ClickPolicy::agent;
    bool update_agent = true;       // apply reinforce_update at episode end
    bool assert_monotone = false;   // runtime check that Dice vs GT never drops
    int round = 1;
    int image_index = 0;
    std::uint64_t rng_seed = 0;
};

inline EpisodeResult run_episode(const ImageRecord& image, PolicyParams& agent, const FeatureMap& features,
                                 const SegModelParams& seg_params, const RunConfig& config, int patch_size,
                                 PreferenceOracle& oracle, const EpisodeOptions& opt) {
    EpisodeResult res;
    res.log.image_id = image.id;
    res.initial = predict(seg_params, features, patch_size);
    Mask current = res.initial;
    const PropagationConfig prop{config.tau, config.conflict_rule};
    const Mask* gt = image.gt_mask ? &*image.gt_mask : nullptr;
    if (gt) res.log.dice_trajectory.push_back(metrics::dice(current, *gt));

    std::mt19937_64 rng(opt.rng_seed);
    std::vector<LabeledClick> accepted;
    for (int t = 0; t < config.steps_per_image; ++t) {
        AgentState state = make_agent_state(image.image, current, patch_size);
        ClickAction action;
        if (opt.policy == ClickPolicy::agent) {
            action = sample_action(agent, state, rng);
        } else {
            const std::size_t n = 2 * std::size_t(state.height()) * state.width();
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            action = action_from_index(pick(rng), state.height(), state.width(), -std::log(double(n)));
        }
        const auto [py, px] = action_pixel(action, patch_size);
        std::vector<LabeledClick> candidate = accepted;
        candidate.push_back({py, px, action.label, t});
        Mask m_new = propagate(candidate, features, res.initial, prop, patch_size);

        StepLog log;
        log.step = t;
        log.row = py;
        log.col = px;
        log.action_index = int(action.index);
        log.label = action.label;
        log.log_prob = action.log_prob;
        const auto verdict = oracle.judge(m_new, current, {&image, opt.round, t, opt.image_index});
        if (!verdict) {
            log.skipped = true;
            res.log.steps.push_back(log);
            if (gt) res.log.dice_trajectory.push_back(res.log.dice_trajectory.back());
            continue;
        }
        log.reward = verdict->reward;
        log.dice_before = verdict->dice_before;
        log.dice_after = verdict->dice_after;
        log.latency_ms = verdict->latency_ms;
        res.trajectory.push_back({std::move(state), action, verdict->reward});
        if (verdict->reward == +1) {
            current = std::move(m_new);
            accepted.push_back(candidate.back());
            log.accepted = true;
        }
        res.log.steps.push_back(log);
        if (gt) {
            const double d = metrics::dice(current, *gt);
            if (opt.assert_monotone && d < res.log.dice_trajectory.back())
                throw Error("invariant violated: interactive Dice decreased on " + image.id);
            res.log.dice_trajectory.push_back(d);
        }
    }
    if (opt.update_agent && opt.policy == ClickPolicy::agent && !res.trajectory.empty()) {
        const auto rep = reinforce_update(agent, res.trajectory);
        res.log.agent_updated = !rep.skipped;
        res.log.grad_norm = rep.grad_norm;
    }
    res.final_mask = std::move(current);
    return res;
}

// --- top-K ------------------------------------------------------------------

struct Candidate {
    std::string image_id;
    const Mask* pseudo = nullptr;
    const Mask* initial = nullptr;  // learner prediction the episode started from
    const EpisodeLog* log = nullptr;
};

inline double quality_score(const Candidate& c, QualityProxy proxy) {
    if (proxy == QualityProxy::mean_accepted_reward) return c.log->accepted_fraction();
    return metrics::dice(*c.pseudo, *c.initial);
}

// Indices of the kept candidates, in input order. Ranking never reads GT.
inline std::vector<std::size_t> filter_top_k(std::span<const Candidate> candidates, double top_k_percent,
                                             QualityProxy proxy) {
    if (candidates.empty()) throw ValidationError("filter_top_k: empty pseudo-label set");
    std::vector<std::size_t> idx(candidates.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (top_k_percent >= 1.0) return idx;
    std::vector<double> score(candidates.size());
    for (std::size_t i = 0; i < score.size(); ++i) score[i] = quality_score(candidates[i], proxy);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return candidates[a].image_id < candidates[b].image_id;
    });
    const auto keep = std::max<std::size_t>(
        1, std::size_t(std::ceil(top_k_percent * double(candidates.size()) - 1e-9)));
    idx.resize(std::min(keep, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// --- round state and reports ----------------------------------------------------

struct RoundState {
    int round_index = 0;
    std::filesystem::path manifest_path;
    std::map<std::string, Mask> pseudo_labels;  // P_r before filtering, one per image
    std::vector<std::string> kept_ids;
    std::vector<EpisodeLog> episodes;
    std::vector<double> seg_loss;
    std::vector<double> adapter_loss;
    std::vector<std::string> warnings;
    std::size_t agent_updates = 0;
    PolicyParams agent;
    SegModelParams seg;
    AdapterParams adapter;
};

inline nlohmann::json to_json(const StepLog& s) {
    nlohmann::json j{{"step", s.step},       {"row", s.row},           {"col", s.col},
                     {"action", s.action_index}, {"label", to_string(s.label)}, {"log_prob", s.log_prob},
                     {"skipped", s.skipped}, {"reward", s.reward},     {"accepted", s.accepted}};
    if (s.dice_before) j["dice_before"] = *s.dice_before;
    if (s.dice_after) j["dice_after"] = *s.dice_after;
    if (s.latency_ms) j["latency_ms"] = *s.latency_ms;
    return j;
}

inline StepLog step_from_json(const nlohmann::json& j) {
    StepLog s;
    s.step = j.at("step");
    s.row = j.at("row");
    s.col = j.at("col");
    s.action_index = j.at("action");
    s.label = j.at("label").get<std::string>() == "fg" ? Label::foreground : Label::background;
    s.log_prob = j.at("log_prob");
    s.skipped = j.at("skipped");
    s.reward = j.at("reward");
    s.accepted = j.at("accepted");
    if (j.contains("dice_before")) s.dice_before = j["dice_before"].get<double>();
    if (j.contains("dice_after")) s.dice_after = j["dice_after"].get<double>();
    if (j.contains("latency_ms")) s.latency_ms = j["latency_ms"].get<double>();
    return s;
}

inline nlohmann::json to_json(const EpisodeLog& e) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : e.steps) steps.push_back(to_json(s));
    return {{"image_id", e.image_id},
            {"steps", steps},
            {"dice_trajectory", e.dice_trajectory},
            {"agent_updated", e.agent_updated},
            {"grad_norm", e.grad_norm}};
}

inline EpisodeLog episode_from_json(const nlohmann::json& j) {
    EpisodeLog e;
    e.image_id = j.at("image_id");
    for (const auto& s : j.at("steps")) e.steps.push_back(step_from_json(s));
    e.dice_trajectory = j.at("dice_trajectory").get<std::vector<double>>();
    e.agent_updated = j.at("agent_updated");
    e.grad_norm = j.at("grad_norm");
    return e;
}

inline std::filesystem::path round_dir(const std::filesystem::path& out, int round) {
    std::ostringstream name;
    name << "round_" << std::setw(2) << std::setfill('0') << round;
    return out / name.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << text;
    if (!os) throw IoError("write failed: " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path.string());
    return nlohmann::json::parse(is);
}

inline void save_round_state(const std::filesystem::path& dir, const RoundState& s) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "pseudo");
    nlohmann::json episodes = nlohmann::json::array();
    for (const auto& e : s.episodes) episodes.push_back(to_json(e));
    nlohmann::json pseudo = nlohmann::json::object();
    for (const auto& [id, m] : s.pseudo_labels) {
        pnm::save_mask(dir / "pseudo" / (id + ".pgm"), m);
        pseudo[id] = "pseudo/" + id + ".pgm";
    }
    const nlohmann::json j{{"round", s.round_index},
                           {"manifest", s.manifest_path.string()},
                           {"pseudo_labels", pseudo},
                           {"kept_ids", s.kept_ids},
                           {"episodes", episodes},
                           {"seg_loss", s.seg_loss},
                           {"adapter_loss", s.adapter_loss},
                           {"warnings", s.warnings},
                           {"agent_updates", s.agent_updates},
                           {"checkpoints", {{"agent", "agent.ckpt"}, {"seg_model", "seg.ckpt"}, {"adapter", "adapter.ckpt"}}}};
    save_checkpoint(dir / "agent.ckpt", to_checkpoint(s.agent));
    save_checkpoint(dir / "seg.ckpt", to_checkpoint(s.seg));
    save_checkpoint(dir / "adapter.ckpt", to_checkpoint(s.adapter));
    write_text(dir / "state.json", j.dump(1) + "\n");
}

inline RoundState load_round_state(const std::filesystem::path& dir) {
    const auto j = read_json(dir / "state.json");
    RoundState s;
    s.round_index = j.at("round");
    s.manifest_path = j.at("manifest").get<std::string>();
    for (const auto& [id, rel] : j.at("pseudo_labels").items()) s.pseudo_labels[id] = pnm::load_mask(dir / rel.get<std::string>());
    s.kept_ids = j.at("kept_ids").get<std::vector<std::string>>();
    for (const auto& e : j.at("episodes")) s.episodes.push_back(episode_from_json(e));
    s.seg_loss = j.at("seg_loss").get<std::vector<double>>();
    s.adapter_loss = j.at("adapter_loss").get<std::vector<double>>();
    s.warnings = j.at("warnings").get<std::vector<std::string>>();
    s.agent_updates = j.at("agent_updates");
    s.agent = policy_from_checkpoint(load_checkpoint(dir / "agent.ckpt"));
    s.seg = seg_from_checkpoint(load_checkpoint(dir / "seg.ckpt"));
    s.adapter = adapter_from_checkpoint(load_checkpoint(dir / "adapter.ckpt"));
    return s;
}

inline nlohmann::json summary_json(const metrics::Summary& s) {
    return {{"mean", s.mean}, {"median", s.median}, {"std", s.std}, {"count", s.count}};
}

// Everything here is recomputed from the persisted RoundState plus the
// dataset, so `eval` can regenerate it bit for bit. Wall-clock time lives in
// a separate timing file.
inline nlohmann::json build_report(const RoundState& s, const DatasetManifest& data) {
    nlohmann::json r;
    r["round"] = s.round_index;
    r["n_images"] = data.records.size();
    r["kept_pseudo_labels"] = s.kept_ids.size();
    r["agent_updates"] = s.agent_updates;

    std::vector<double> seg_dice, seg_hd, seg_iou, inter_dice, init_dice;
    std::size_t hd_undefined = 0;
    const bool have_gt = data.has_ground_truth();
    if (have_gt) {
        for (const auto& rec : data.records) {
            const auto feats = get_features(rec, s.adapter);
            const auto m = metrics::evaluate(predict(s.seg, feats, data.patch_size), *rec.gt_mask);
            seg_dice.push_back(m.dice);
            seg_iou.push_back(m.iou);
            if (m.hd95) {
                seg_hd.push_back(*m.hd95);
            } else {
                ++hd_undefined;
            }
            inter_dice.push_back(metrics::dice(s.pseudo_labels.at(rec.id), *rec.gt_mask));
        }
        for (const auto& e : s.episodes)
            if (!e.dice_trajectory.empty()) init_dice.push_back(e.dice_trajectory.front());
        std::vector<int> hist(10, 0);
        for (double d : inter_dice) hist[std::min(9, int(d * 10.0))]++;
        r["segmentation"] = {{"dice", summary_json(metrics::summarize(seg_dice))},
                             {"hd95", summary_json(metrics::summarize(seg_hd))},
                             {"hd95_undefined_count", hd_undefined},
                             {"iou", summary_json(metrics::summarize(seg_iou))}};
        r["interactive"] = {{"final_dice", summary_json(metrics::summarize(inter_dice))},
                            {"initial_dice", summary_json(metrics::summarize(init_dice))},
                            {"final_dice_histogram", {{"bin_width", 0.1}, {"counts", hist}}}};
    } else {
        r["segmentation"] = nullptr;
        r["interactive"] = nullptr;
    }

    std::size_t pos = 0, neg = 0, skipped = 0;
    std::vector<double> episode_reward;
    for (const auto& e : s.episodes) {
        for (const auto& st : e.steps) {
            if (st.skipped) {
                ++skipped;
            } else if (st.reward > 0) {
                ++pos;
            } else {
                ++neg;
            }
        }
        if (e.judged_steps() > 0) episode_reward.push_back(e.mean_reward());
    }
    const double judged = double(pos + neg);
    r["rewards"] = {{"better", pos},
                    {"worse", neg},
                    {"skipped", skipped},
                    {"mean_reward", judged > 0 ? (double(pos) - double(neg)) / judged : 0.0},
                    {"episode_mean_reward", summary_json(metrics::summarize(episode_reward))}};
    auto first_last = [](const std::vector<double>& v) -> nlohmann::json {
        if (v.empty()) return nullptr;
        return {{"first", v.front()}, {"last", v.back()}, {"points", v.size()}};
    };
    r["training"] = {{"seg_loss", first_last(s.seg_loss)}, {"adapter_loss", first_last(s.adapter_loss)}};
    return r;
}

inline const char* kCsvHeader =
    "round,mean_dice,std_dice,mean_hd95,hd95_undefined_count,mean_reward,median_dice,mean_iou,"
    "mean_interactive_dice,std_interactive_dice";

inline std::string csv_row(const nlohmann::json& r) {
    std::ostringstream os;
    os << std::setprecision(10);
    os << r.at("round").get<int>() << ',';
    if (r.at("segmentation").is_null()) {
        os << ",,,,";
    } else {
        const auto& s = r["segmentation"];
        os << s["dice"]["mean"].get<double>() << ',' << s["dice"]["std"].get<double>() << ',';
        if (s["hd95"]["count"].get<std::size_t>() > 0) os << s["hd95"]["mean"].get<double>();
        os << ',' << s["hd95_undefined_count"].get<std::size_t>() << ',';
    }
    os << r["rewards"]["mean_reward"].get<double>() << ',';
    if (r.at("segmentation").is_null()) {
        os << ",,,";
    } else {
        os << r["segmentation"]["dice"]["median"].get<double>() << ',' << r["segmentation"]["iou"]["mean"].get<double>()
           << ',' << r["interactive"]["final_dice"]["mean"].get<double>() << ','
           << r["interactive"]["final_dice"]["std"].get<double>();
    }
    return os.str();
}

inline std::string reports_csv(const std::vector<nlohmann::json>& reports) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : reports) out += csv_row(r) + "\n";
    return out;
}

// Round directories under a run that carry a finished report, in order.
inline std::vector<int> completed_rounds(const std::filesystem::path& out) {
    std::vector<int> done;
    for (int r = 1; std::filesystem::exists(round_dir(out, r) / "report.json"); ++r) done.push_back(r);
    return done;
}

inline std::vector<nlohmann::json> load_reports(const std::filesystem::path& out) {
    std::vector<nlohmann::json> reps;
    for (int r : completed_rounds(out)) reps.push_back(read_json(round_dir(out, r) / "report.json"));
    return reps;
}

// --- the loop ---------------------------------------------------------------

struct RunResult {
    std::vector<nlohmann::json> reports;
    PolicyParams agent;
    SegModelParams seg;
    AdapterParams adapter;
    int resumed_from = 1;
};

class Orchestrator {
public:
    Orchestrator(const DatasetManifest& data, RunConfig config, PreferenceOracle& oracle,
                 FeedbackBroker* monitor = nullptr)
        : data_(data), config_(std::move(config)), oracle_(oracle), monitor_(monitor) {
        config_.validate();
        if (data_.records.empty()) throw ValidationError("run: dataset is empty");
        if (oracle_.source() == VerdictSource::simulated && !data_.has_ground_truth())
            throw ValidationError("run: simulated mode requires ground-truth masks for every record");
        if (config_.parallel_episodes && oracle_.source() != VerdictSource::simulated)
            throw ValidationError("run: parallel episodes are only available in simulated mode");
        const int channels = data_.records.front().channels();
        const int dim = data_.records.front().features.dim();
        agent_ = PolicyParams::create(channels, mix_seed(config_.seed, 0xA6E17));
        agent_.temperature = config_.agent.temperature;
        agent_.learning_rate = config_.agent.learning_rate;
        agent_.use_baseline = config_.agent.baseline;
        seg_ = SegModelParams::zeros(dim);
        seg_.learning_rate = config_.seg.learning_rate;
        seg_.epochs = config_.seg.epochs;
        seg_.batch_size = config_.seg.batch_size;
        adapter_ = AdapterParams::identity(dim);
        adapter_.learning_rate = config_.adapter.learning_rate;
        adapter_.margin = config_.adapter.margin;
        adapter_.batch_size = config_.adapter.batch_size;
    }

    const std::filesystem::path output_dir() const { return config_.output_dir; }

    // Runs all rounds. With resume, rounds already persisted under the
    // output directory are loaded instead of recomputed. On failure a
    // resume.json naming the next round to run is written before rethrowing.
    RunResult run(bool resume = false) {
        namespace fs = std::filesystem;
        const fs::path out = config_.output_dir;
        fs::create_directories(out);
        write_text(out / "run_config.json", nlohmann::json(config_).dump(2) + "\n");

        RunResult result;
        std::vector<std::map<std::string, Mask>> history;
        int start = 1;
        if (resume) {
            for (int r : completed_rounds(out)) {
                if (r > config_.rounds) break;
                auto st = load_round_state(round_dir(out, r));
                agent_ = st.agent;
                seg_ = st.seg;
                adapter_ = st.adapter;
                history.push_back(keep_only(st.pseudo_labels, st.kept_ids));
                result.reports.push_back(read_json(round_dir(out, r) / "report.json"));
                start = r + 1;
            }
        }
        result.resumed_from = start;
        nlohmann::json timing = nlohmann::json::object();
        if (fs::exists(out / "timing.json")) timing = read_json(out / "timing.json");
        for (int r = start; r <= config_.rounds; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            try {
                auto st = run_round(r, history);
                const auto dir = round_dir(out, r);
                save_round_state(dir, st);
                const auto report = build_report(load_round_state(dir), data_);
                write_text(dir / "report.json", report.dump(2) + "\n");
                result.reports.push_back(report);
                publish({{"state", "round_complete"}, {"round", r}, {"report", report}});
            } catch (const std::exception& e) {
                write_text(out / "resume.json",
                           nlohmann::json{{"resume_from_round", r}, {"error", e.what()}}.dump(2) + "\n");
                throw;
            }
            timing[std::to_string(r)] =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            write_text(out / "timing.json", timing.dump(2) + "\n");
        }
        if (fs::exists(out / "resume.json")) fs::remove(out / "resume.json");
        write_text(out / "reports.json", nlohmann::json(result.reports).dump(2) + "\n");
        write_text(out / "reports.csv", reports_csv(result.reports));
        publish({{"state", "finished"}, {"round", config_.rounds}});
        result.agent = agent_;
        result.seg = seg_;
        result.adapter = adapter_;
        return result;
    }

private:
    static std::map<std::string, Mask> keep_only(const std::map<std::string, Mask>& all,
                                                 const std::vector<std::string>& ids) {
        std::map<std::string, Mask> out;
        for (const auto& id : ids) out.emplace(id, all.at(id));
        return out;
    }

    void publish(nlohmann::json progress) {
        if (!monitor_) return;
        progress["rounds"] = config_.rounds;
        progress["images"] = data_.records.size();
        monitor_->set_progress(std::move(progress));
    }

    EpisodeOptions episode_options(int round, int i) const {
        EpisodeOptions opt;
        opt.round = round;
        opt.image_index = i;
        opt.rng_seed = mix_seed(config_.seed, 0xE915, std::uint64_t(round), std::uint64_t(i));
        opt.assert_monotone = oracle_.source() == VerdictSource::simulated && config_.oracle.flip_probability == 0.0;
        return opt;
    }

    RoundState run_round(int round, std::vector<std::map<std::string, Mask>>& history) {
        const int n = int(data_.records.size());
        const int ps = data_.patch_size;
        std::vector<FeatureMap> feats(n);
        for (int i = 0; i < n; ++i) feats[i] = get_features(data_.records[i], adapter_);

        std::vector<EpisodeResult> episodes(n);
        RoundState st;
        st.round_index = round;
        st.manifest_path = data_.source;
        if (config_.parallel_episodes) {
            // Every episode samples from the round-start policy; updates are applied afterwards in manifest order.
            const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
            for (int begin = 0; begin < n; begin += int(workers)) {
                std::vector<std::future<EpisodeResult>> jobs;
                for (int i = begin; i < std::min(n, begin + int(workers)); ++i)
                    jobs.push_back(std::async(std::launch::async, [&, i] {
                        PolicyParams snapshot = agent_;
                        auto opt = episode_options(round, i);
                        opt.update_agent = false;
                        return run_episode(data_.records[i], snapshot, feats[i], seg_, config_, ps, oracle_, opt);
                    }));
                for (int i = begin; i < std::min(n, begin + int(workers)); ++i) episodes[i] = jobs[i - begin].get();
            }
            for (auto& e : episodes)
                if (!e.trajectory.empty()) {
                    const auto rep = reinforce_update(agent_, e.trajectory);
                    e.log.agent_updated = !rep.skipped;
                    e.log.grad_norm = rep.grad_norm;
                }
        } else {
            for (int i = 0; i < n; ++i) {
                publish({{"state", "interactive"}, {"round", round}, {"image_index", i},
                         {"image_id", data_.records[i].id}});
                episodes[i] = run_episode(data_.records[i], agent_, feats[i], seg_, config_, ps, oracle_,
                                          episode_options(round, i));
            }
        }

        std::vector<Candidate> candidates;
        for (int i = 0; i < n; ++i) {
            st.pseudo_labels.emplace(data_.records[i].id, episodes[i].final_mask);
            st.agent_updates += episodes[i].log.agent_updated ? 1 : 0;
            st.episodes.push_back(episodes[i].log);
        }
        for (int i = 0; i < n; ++i)
            candidates.push_back({data_.records[i].id, &st.pseudo_labels.at(data_.records[i].id),
                                  &episodes[i].initial, &st.episodes[i]});
        const auto kept = filter_top_k(candidates, config_.top_k_percent, config_.quality_proxy);
        for (auto k : kept) st.kept_ids.push_back(candidates[k].image_id);
        history.push_back(keep_only(st.pseudo_labels, st.kept_ids));

        // Training pairs: the current round's kept labels, or every round's with cumulative.
        std::vector<std::pair<const FeatureMap*, const Mask*>> seg_pairs;
        std::vector<PseudoLabeled> adapt_pairs;
        const std::size_t first_round = config_.cumulative ? 0 : history.size() - 1;
        for (std::size_t h = first_round; h < history.size(); ++h)
            for (int i = 0; i < n; ++i) {
                auto it = history[h].find(data_.records[i].id);
                if (it == history[h].end()) continue;
                seg_pairs.emplace_back(&feats[i], &it->second);
                adapt_pairs.push_back({&data_.records[i].features, &it->second});
            }

        publish({{"state", "training"}, {"round", round}});
        auto seg_res = train(seg_, seg_pairs, mix_seed(config_.seed, 0x5E6, std::uint64_t(round)), ps);
        seg_ = seg_res.params;
        st.seg_loss = seg_res.loss_trajectory;
        if (seg_res.warning) st.warnings.push_back(*seg_res.warning);

        auto ad = adapt_features(adapter_, adapt_pairs, config_.adapter.steps,
                                 mix_seed(config_.seed, 0xADA, std::uint64_t(round)), ps);
        adapter_ = ad.adapter;
        st.adapter_loss = ad.loss_trajectory;
        if (ad.warning) st.warnings.push_back(*ad.warning);

        st.agent = agent_;
        st.seg = seg_;
        st.adapter = adapter_;
        return st;
    }

    const DatasetManifest& data_;
    RunConfig config_;
    PreferenceOracle& oracle_;
    FeedbackBroker* monitor_;
    PolicyParams agent_;
    SegModelParams seg_;
    AdapterParams adapter_;
};

// Replays a persisted round: recomputes its report from state.json and the
// checkpoints. Returns {recomputed, stored}.
inline std::pair<nlohmann::json, nlohmann::json> replay_round(const std::filesystem::path& dir) {
    const auto st = load_round_state(dir);
    const auto data = load_manifest(st.manifest_path);
    return {build_report(st, data), read_json(dir / "report.json")};
}

// Mean per-step reward of a frozen uniform-random click policy started from
// the given learner and adapter, with the same per-image seeds the agent
// would use in `round`.
inline double uniform_policy_mean_reward(const DatasetManifest& data, const RunConfig& config,
                                         const SegModelParams& seg, const AdapterParams& adapter, int round) {
    SimulatedOracle oracle;
    PolicyParams unused = PolicyParams::create(data.records.front().channels(), 0);
    double sum = 0;
    int count = 0;
    for (int i = 0; i < int(data.records.size()); ++i) {
        const auto feats = get_features(data.records[i], adapter);
        EpisodeOptions opt;
        opt.policy = ClickPolicy::uniform_random;
        opt.update_agent = false;
        opt.round = round;
        opt.image_index = i;
        opt.rng_seed = mix_seed(config.seed, 0xE915, std::uint64_t(round), std::uint64_t(i));
        const auto res = run_episode(data.records[i], unused, feats, seg, config, data.patch_size, oracle, opt);
        for (const auto& s : res.log.steps)
            if (!s.skipped) {
                sum += s.reward;
                ++count;
            }
    }
    return count ? sum / count : 0.0;
}

}  // namespace prefseg
