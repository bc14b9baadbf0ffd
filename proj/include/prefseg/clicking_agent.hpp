#pragma once
// Clicking agent: a fixed three-layer convolutional policy over the patch
// grid, sampled with temperature and trained with REINFORCE.
//
// Architecture (3x3 kernels, zero padding 1):
//   conv1  (C+1 -> 16, stride 2) + ReLU
//   conv2  (16 -> 16, stride 1)  + ReLU
//   nearest-neighbour upsample x2, cropped to the working grid
//   conv3  (16 -> 2,  stride 1)  -> logits [2 x H' x W']
//
// Actions index the flattened logits: index = label * H'W' + row * W' + col.
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prefseg/checkpoint.hpp"
#include "prefseg/core_types.hpp"
#include "prefseg/tensor.hpp"

namespace prefseg {

inline constexpr int kPolicyHidden = 16;
inline constexpr int kPolicyKernel = 3;

namespace conv {

inline int out_size(int n, int stride) { return (n - 1) / stride + 1; }

// 3x3 convolution, padding 1. in: [cin x h x w], weight: [cout x cin x 3 x 3].
template <class S>
void forward(std::span<const S> in, int cin, int h, int w, std::span<const S> weight, std::span<const S> bias,
             int cout, int stride, std::vector<S>& out) {
    const int ho = out_size(h, stride), wo = out_size(w, stride);
    out.assign(std::size_t(cout) * ho * wo, S(0));
    for (int o = 0; o < cout; ++o)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                S acc = bias[o];
                for (int c = 0; c < cin; ++c)
                    for (int ky = 0; ky < 3; ++ky) {
                        const int y = i * stride + ky - 1;
                        if (y < 0 || y >= h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int x = j * stride + kx - 1;
                            if (x < 0 || x >= w) continue;
                            acc += weight[((std::size_t(o) * cin + c) * 3 + ky) * 3 + kx] *
                                   in[(std::size_t(c) * h + y) * w + x];
                        }
                    }
                out[(std::size_t(o) * ho + i) * wo + j] = acc;
            }
}

// Accumulates dweight/dbias and (if din non-empty) the input gradient.
template <class S>
void backward(std::span<const S> in, int cin, int h, int w, std::span<const S> weight, int cout, int stride,
              std::span<const S> dout, std::span<S> dweight, std::span<S> dbias, std::span<S> din) {
    const int ho = out_size(h, stride), wo = out_size(w, stride);
    for (int o = 0; o < cout; ++o)
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const S g = dout[(std::size_t(o) * ho + i) * wo + j];
                if (g == S(0)) continue;
                dbias[o] += g;
                for (int c = 0; c < cin; ++c)
                    for (int ky = 0; ky < 3; ++ky) {
                        const int y = i * stride + ky - 1;
                        if (y < 0 || y >= h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int x = j * stride + kx - 1;
                            if (x < 0 || x >= w) continue;
                            const std::size_t wi = ((std::size_t(o) * cin + c) * 3 + ky) * 3 + kx;
                            const std::size_t xi = (std::size_t(c) * h + y) * w + x;
                            dweight[wi] += g * in[xi];
                            if (!din.empty()) din[xi] += g * weight[wi];
                        }
                    }
            }
}

}  // namespace conv

template <class S>
struct PolicyWeights {
    std::vector<S> w1, b1, w2, b2, w3, b3;

    static constexpr const char* names[6] = {"conv1.weight", "conv1.bias", "conv2.weight",
                                              "conv2.bias",   "conv3.weight", "conv3.bias"};

    std::array<std::vector<S>*, 6> blocks() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    std::array<const std::vector<S>*, 6> blocks() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }

    static PolicyWeights zeros(int in_channels) {
        PolicyWeights p;
        p.w1.assign(std::size_t(kPolicyHidden) * in_channels * 9, S(0));
        p.b1.assign(kPolicyHidden, S(0));
        p.w2.assign(std::size_t(kPolicyHidden) * kPolicyHidden * 9, S(0));
        p.b2.assign(kPolicyHidden, S(0));
        p.w3.assign(std::size_t(2) * kPolicyHidden * 9, S(0));
        p.b3.assign(2, S(0));
        return p;
    }

    int in_channels() const { return static_cast<int>(w1.size() / (kPolicyHidden * 9)); }

    double norm() const {
        double s = 0;
        for (const auto* b : blocks())
            for (S v : *b) s += double(v) * double(v);
        return std::sqrt(s);
    }

    bool all_finite() const {
        for (const auto* b : blocks())
            for (S v : *b)
                if (!std::isfinite(double(v))) return false;
        return true;
    }

    template <class T>
    PolicyWeights<T> cast() const {
        PolicyWeights<T> out;
        auto dst = out.blocks();
        auto src = blocks();
        for (std::size_t k = 0; k < 6; ++k) dst[k]->assign(src[k]->begin(), src[k]->end());
        return out;
    }
};

// He-normal hidden layers, zero output layer (uniform initial policy).
inline PolicyWeights<float> init_policy_weights(int in_channels, std::uint64_t seed) {
    auto p = PolicyWeights<float>::zeros(in_channels);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g1(0.0, std::sqrt(2.0 / (in_channels * 9)));
    for (auto& v : p.w1) v = float(g1(rng));
    std::normal_distribution<double> g2(0.0, std::sqrt(2.0 / (kPolicyHidden * 9)));
    for (auto& v : p.w2) v = float(g2(rng));
    return p;
}

template <class S>
struct PolicyForward {
    int h = 0, w = 0, h1 = 0, w1 = 0;
    std::vector<S> input, a1, h1act, a2, h2act, up, logits;
};

// state: [(C+1) x h x w]
template <class S>
PolicyForward<S> policy_forward_pass(const PolicyWeights<S>& p, std::span<const S> state, int h, int w) {
    const int cin = p.in_channels();
    if (state.size() != std::size_t(cin) * h * w) throw ShapeError("policy: state shape does not match parameters");
    PolicyForward<S> f;
    f.h = h;
    f.w = w;
    f.h1 = conv::out_size(h, 2);
    f.w1 = conv::out_size(w, 2);
    f.input.assign(state.begin(), state.end());
    conv::forward<S>(f.input, cin, h, w, p.w1, p.b1, kPolicyHidden, 2, f.a1);
    f.h1act = f.a1;
    for (auto& v : f.h1act) v = std::max(v, S(0));
    conv::forward<S>(f.h1act, kPolicyHidden, f.h1, f.w1, p.w2, p.b2, kPolicyHidden, 1, f.a2);
    f.h2act = f.a2;
    for (auto& v : f.h2act) v = std::max(v, S(0));
    f.up.assign(std::size_t(kPolicyHidden) * h * w, S(0));
    for (int c = 0; c < kPolicyHidden; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                f.up[(std::size_t(c) * h + y) * w + x] = f.h2act[(std::size_t(c) * f.h1 + y / 2) * f.w1 + x / 2];
    conv::forward<S>(f.up, kPolicyHidden, h, w, p.w3, p.b3, 2, 1, f.logits);
    return f;
}

template <class S>
PolicyWeights<S> policy_backward(const PolicyWeights<S>& p, const PolicyForward<S>& f, std::span<const S> dlogits) {
    auto g = PolicyWeights<S>::zeros(p.in_channels());
    const int h = f.h, w = f.w;
    std::vector<S> dup(f.up.size(), S(0));
    conv::backward<S>(f.up, kPolicyHidden, h, w, p.w3, 2, 1, dlogits, g.w3, g.b3, dup);
    std::vector<S> da2(f.a2.size(), S(0));
    for (int c = 0; c < kPolicyHidden; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                da2[(std::size_t(c) * f.h1 + y / 2) * f.w1 + x / 2] += dup[(std::size_t(c) * h + y) * w + x];
    for (std::size_t i = 0; i < da2.size(); ++i)
        if (!(f.a2[i] > S(0))) da2[i] = S(0);
    std::vector<S> da1(f.a1.size(), S(0));
    conv::backward<S>(f.h1act, kPolicyHidden, f.h1, f.w1, p.w2, kPolicyHidden, 1, da2, g.w2, g.b2, da1);
    for (std::size_t i = 0; i < da1.size(); ++i)
        if (!(f.a1[i] > S(0))) da1[i] = S(0);
    conv::backward<S>(f.input, p.in_channels(), h, w, p.w1, kPolicyHidden, 2, da1, g.w1, g.b1, std::span<S>{});
    return g;
}

// Softmax of logits / temperature, computed in double.
template <class S>
std::vector<double> action_probabilities(std::span<const S> logits, double temperature) {
    double mx = -std::numeric_limits<double>::infinity();
    for (S z : logits) mx = std::max(mx, double(z) / temperature);
    std::vector<double> p(logits.size());
    double sum = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(double(logits[i]) / temperature - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

template <class S>
double log_prob_of(std::span<const S> logits, std::size_t action, double temperature) {
    double mx = -std::numeric_limits<double>::infinity();
    for (S z : logits) mx = std::max(mx, double(z) / temperature);
    double sum = 0;
    for (S z : logits) sum += std::exp(double(z) / temperature - mx);
    return double(logits[action]) / temperature - mx - std::log(sum);
}

// Gradient of log pi(action | state) with respect to every parameter.
template <class S>
PolicyWeights<S> grad_log_prob(const PolicyWeights<S>& p, std::span<const S> state, int h, int w, std::size_t action,
                               double temperature) {
    const auto f = policy_forward_pass(p, state, h, w);
    const auto probs = action_probabilities<S>(f.logits, temperature);
    std::vector<S> dz(probs.size());
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = S(((i == action ? 1.0 : 0.0) - probs[i]) / temperature);
    return policy_backward<S>(p, f, dz);
}

// (C+1) x H' x W' : image block means over each patch, then the majority mask.
struct AgentState {
    Tensor tensor;

    int channels() const { return static_cast<int>(tensor.dim(0)); }
    int height() const { return static_cast<int>(tensor.dim(1)); }
    int width() const { return static_cast<int>(tensor.dim(2)); }
};

inline AgentState make_agent_state(const Tensor& image, const Mask& current, int patch_size) {
    const int c = static_cast<int>(image.dim(0)), h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    if (current.height() != h || current.width() != w) throw ShapeError("agent state: mask/image grid mismatch");
    const int gh = h / patch_size, gw = w / patch_size;
    Tensor t({std::size_t(c + 1), std::size_t(gh), std::size_t(gw)});
    const double inv = 1.0 / (patch_size * patch_size);
    for (int ch = 0; ch < c; ++ch)
        for (int gr = 0; gr < gh; ++gr)
            for (int gc = 0; gc < gw; ++gc) {
                double acc = 0;
                for (int y = gr * patch_size; y < (gr + 1) * patch_size; ++y)
                    for (int x = gc * patch_size; x < (gc + 1) * patch_size; ++x) acc += image.at(ch, y, x);
                t.at(ch, gr, gc) = float(acc * inv);
            }
    const auto maj = patch_majority(current, patch_size);
    for (int gr = 0; gr < gh; ++gr)
        for (int gc = 0; gc < gw; ++gc) t.at(c, gr, gc) = float(maj[std::size_t(gr) * gw + gc]);
    return {std::move(t)};
}

struct ClickAction {
    int row = 0;  // working-resolution (patch grid) coordinates
    int col = 0;
    Label label = Label::foreground;
    double log_prob = 0;
    std::size_t index = 0;
};

// Pixel at the centre of the action's patch.
inline std::pair<int, int> action_pixel(const ClickAction& a, int patch_size) {
    return {a.row * patch_size + patch_size / 2, a.col * patch_size + patch_size / 2};
}

inline ClickAction action_from_index(std::size_t index, int h, int w, double log_prob) {
    const std::size_t plane = std::size_t(h) * w;
    ClickAction a;
    a.index = index;
    a.label = index >= plane ? Label::foreground : Label::background;
    const std::size_t cell = index % plane;
    a.row = static_cast<int>(cell / w);
    a.col = static_cast<int>(cell % w);
    a.log_prob = log_prob;
    return a;
}

struct PolicyParams {
    PolicyWeights<float> weights;
    double temperature = 1.0;
    double learning_rate = 1e-3;
    double clip_norm = 5.0;
    std::uint64_t rng_seed = 0;
    bool use_baseline = false;  // moving-average reward baseline
    double baseline = 0.0;
    std::uint64_t updates = 0;

    static PolicyParams create(int image_channels, std::uint64_t seed) {
        PolicyParams p;
        p.rng_seed = seed;
        p.weights = init_policy_weights(image_channels + 1, seed);
        return p;
    }
};

inline Tensor policy_forward(const PolicyParams& params, const AgentState& state) {
    if (state.channels() != params.weights.in_channels()) throw ShapeError("policy_forward: channel mismatch");
    auto f = policy_forward_pass<float>(params.weights, state.tensor.data(), state.height(), state.width());
    Tensor logits({2, std::size_t(state.height()), std::size_t(state.width())}, std::move(f.logits));
    if (!logits.all_finite()) throw Error("policy_forward: non-finite logits");
    return logits;
}

// greedy selects the arg-max action (the temperature -> 0 limit).
template <class Rng>
ClickAction sample_action(const PolicyParams& params, const AgentState& state, Rng& rng, bool greedy = false) {
    const Tensor logits = policy_forward(params, state);
    const auto probs = action_probabilities<float>(logits.data(), params.temperature);
    std::size_t chosen = 0;
    if (greedy) {
        chosen = static_cast<std::size_t>(std::max_element(logits.data().begin(), logits.data().end()) -
                                          logits.data().begin());
    } else {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double u = unit(rng);
        double acc = 0;
        chosen = probs.size() - 1;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) {
                chosen = i;
                break;
            }
        }
    }
    return action_from_index(chosen, state.height(), state.width(),
                             log_prob_of<float>(logits.data(), chosen, params.temperature));
}

struct TrajectoryStep {
    AgentState state;
    ClickAction action;
    int reward = 0;  // +1 / -1
};

struct UpdateReport {
    double grad_norm = 0;  // before clipping
    bool clipped = false;
    bool skipped = false;  // non-finite gradient, parameters untouched
    double mean_reward = 0;
};

// params += lr * sum_t (r_t - b) grad log pi(a_t | s_t), clipped to clip_norm.
inline UpdateReport reinforce_update(PolicyParams& params, std::span<const TrajectoryStep> trajectory) {
    if (trajectory.empty()) throw ValidationError("reinforce_update: empty trajectory");
    UpdateReport rep;
    double rsum = 0;
    for (const auto& s : trajectory) rsum += s.reward;
    rep.mean_reward = rsum / double(trajectory.size());

    const auto pd = params.weights.cast<double>();
    auto total = PolicyWeights<double>::zeros(pd.in_channels());
    for (const auto& s : trajectory) {
        const double adv = s.reward - (params.use_baseline ? params.baseline : 0.0);
        std::vector<double> st(s.state.tensor.data().begin(), s.state.tensor.data().end());
        const auto g = grad_log_prob<double>(pd, st, s.state.height(), s.state.width(), s.action.index,
                                             params.temperature);
        auto dst = total.blocks();
        auto src = g.blocks();
        for (std::size_t k = 0; k < 6; ++k)
            for (std::size_t i = 0; i < src[k]->size(); ++i) (*dst[k])[i] += adv * (*src[k])[i];
    }
    rep.grad_norm = total.norm();
    if (!std::isfinite(rep.grad_norm)) {
        rep.skipped = true;
        return rep;
    }
    double scale = params.learning_rate;
    if (rep.grad_norm > params.clip_norm) {
        rep.clipped = true;
        scale *= params.clip_norm / rep.grad_norm;
    }
    auto dst = params.weights.blocks();
    auto src = total.blocks();
    for (std::size_t k = 0; k < 6; ++k)
        for (std::size_t i = 0; i < src[k]->size(); ++i) (*dst[k])[i] += float(scale * (*src[k])[i]);
    if (params.use_baseline) params.baseline = 0.9 * params.baseline + 0.1 * rep.mean_reward;
    ++params.updates;
    return rep;
}

inline Checkpoint to_checkpoint(const PolicyParams& p) {
    Checkpoint ck;
    ck.kind = "clicking_agent";
    ck.step = p.updates;
    ck.meta = {{"temperature", p.temperature}, {"learning_rate", p.learning_rate}, {"clip_norm", p.clip_norm},
               {"rng_seed", p.rng_seed},       {"use_baseline", p.use_baseline},   {"baseline", p.baseline},
               {"in_channels", p.weights.in_channels()}};
    const auto blocks = p.weights.blocks();
    for (std::size_t k = 0; k < 6; ++k)
        ck.tensors.emplace_back(PolicyWeights<float>::names[k], Tensor({blocks[k]->size()}, *blocks[k]));
    return ck;
}

inline PolicyParams policy_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "clicking_agent") throw ValidationError("checkpoint is not a clicking_agent");
    PolicyParams p;
    p.updates = ck.step;
    p.temperature = ck.meta.at("temperature").get<double>();
    p.learning_rate = ck.meta.at("learning_rate").get<double>();
    p.clip_norm = ck.meta.at("clip_norm").get<double>();
    p.rng_seed = ck.meta.at("rng_seed").get<std::uint64_t>();
    p.use_baseline = ck.meta.at("use_baseline").get<bool>();
    p.baseline = ck.meta.at("baseline").get<double>();
    p.weights = PolicyWeights<float>::zeros(ck.meta.at("in_channels").get<int>());
    auto blocks = p.weights.blocks();
    for (std::size_t k = 0; k < 6; ++k) {
        const auto& t = ck.tensor(PolicyWeights<float>::names[k]);
        if (t.size() != blocks[k]->size()) throw ValidationError("checkpoint: bad size for " + std::string(PolicyWeights<float>::names[k]));
        blocks[k]->assign(t.data().begin(), t.data().end());
    }
    return p;
}

}  // namespace prefseg
