#pragma once
// Segmentation learner: a logistic classifier over adapted patch features.
// Patches with sigmoid(w.f + b) >= 0.5 are foreground (0.5 counts as
// foreground), expanded blockwise to pixels.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prefseg/checkpoint.hpp"
#include "prefseg/core_types.hpp"

namespace prefseg {

struct SegModelParams {
    std::vector<float> weight;
    float bias = 0.0f;
    double learning_rate = 0.1;
    int epochs = 5;
    int batch_size = 64;
    std::uint64_t step = 0;

    static SegModelParams zeros(int dim) {
        SegModelParams p;
        p.weight.assign(std::size_t(dim), 0.0f);
        return p;
    }

    int dim() const { return static_cast<int>(weight.size()); }

    bool all_finite() const {
        if (!std::isfinite(bias)) return false;
        return std::all_of(weight.begin(), weight.end(), [](float v) { return std::isfinite(v); });
    }
};

inline double logit_of(const SegModelParams& p, std::span<const float> f) {
    double z = p.bias;
    for (std::size_t i = 0; i < f.size(); ++i) z += double(p.weight[i]) * f[i];
    return z;
}

inline std::vector<std::uint8_t> predict_patches(const SegModelParams& params, const FeatureMap& features) {
    if (features.dim() != params.dim()) throw ShapeError("seg_model: feature dim mismatch");
    std::vector<std::uint8_t> out(std::size_t(features.patch_count()));
    // sigmoid(z) >= 0.5  <=>  z >= 0
    for (int p = 0; p < features.patch_count(); ++p) out[p] = logit_of(params, features.vec(p)) >= 0.0 ? 1 : 0;
    return out;
}

inline Mask predict(const SegModelParams& params, const FeatureMap& features, int patch_size) {
    return expand_patches(predict_patches(params, features), features.grid_h(), features.grid_w(), patch_size);
}

struct PatchSample {
    std::span<const float> feature;
    std::uint8_t label = 0;
};

template <class S>
struct BceLossGrad {
    S loss = 0;
    std::vector<S> grad_w;
    S grad_b = 0;
};

// Mean binary cross-entropy of sigmoid(w.f + b) against the labels.
template <class S>
BceLossGrad<S> bce_loss_grad(std::span<const S> w, S b, std::span<const PatchSample> samples) {
    BceLossGrad<S> out;
    out.grad_w.assign(w.size(), S(0));
    if (samples.empty()) return out;
    const S inv = S(1) / S(samples.size());
    for (const auto& s : samples) {
        S z = b;
        for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * S(s.feature[i]);
        // log(1 + e^z) - y z, evaluated stably
        const S softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        out.loss += (softplus - S(s.label) * z) * inv;
        const S sig = S(1) / (S(1) + std::exp(-z));
        const S g = (sig - S(s.label)) * inv;
        for (std::size_t i = 0; i < w.size(); ++i) out.grad_w[i] += g * S(s.feature[i]);
        out.grad_b += g;
    }
    return out;
}

struct SegTrainSet {
    std::vector<PatchSample> samples;
    std::size_t positives = 0;
};

// Patch labels are the majority pixel label of each block.
inline SegTrainSet make_seg_train_set(std::span<const std::pair<const FeatureMap*, const Mask*>> pseudo,
                                      int patch_size) {
    SegTrainSet set;
    for (const auto& [f, m] : pseudo) {
        const auto labels = patch_majority(*m, patch_size);
        if (int(labels.size()) != f->patch_count()) throw ShapeError("seg_model: mask does not match feature grid");
        for (int p = 0; p < f->patch_count(); ++p) {
            set.samples.push_back({f->vec(p), labels[p]});
            set.positives += labels[p];
        }
    }
    return set;
}

struct SegTrainResult {
    SegModelParams params;
    std::vector<double> loss_trajectory;  // full-set loss before training, then after each epoch
    std::optional<std::string> warning;
    int rollbacks = 0;
};

inline double full_loss(const SegModelParams& p, std::span<const PatchSample> samples) {
    std::vector<double> w(p.weight.begin(), p.weight.end());
    return bce_loss_grad<double>(w, double(p.bias), samples).loss;
}

// Minibatch SGD warm-started from params. An epoch whose loss is non-finite
// or more than 10x the starting loss is rolled back and the rate halved.
inline SegTrainResult train(const SegModelParams& params, std::span<const std::pair<const FeatureMap*, const Mask*>> pseudo,
                            std::uint64_t seed, int patch_size) {
    if (pseudo.empty()) throw ValidationError("seg_model train: empty pseudo-label set");
    const auto set = make_seg_train_set(pseudo, patch_size);
    for (const auto& s : set.samples)
        if (int(s.feature.size()) != params.dim()) throw ShapeError("seg_model train: feature dim mismatch");

    SegTrainResult res{params, {}, std::nullopt, 0};
    if (set.positives == 0 || set.positives == set.samples.size())
        res.warning = "seg_model train: pseudo-labels contain a single class; fitting bias only in effect";

    const std::span<const PatchSample> all(set.samples);
    const double start_loss = full_loss(params, all);
    res.loss_trajectory.push_back(start_loss);

    std::vector<double> w(params.weight.begin(), params.weight.end());
    double b = params.bias;
    double lr = params.learning_rate;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(set.samples.size());
    std::vector<PatchSample> batch;
    const std::size_t bs = std::size_t(std::max(1, params.batch_size));
    for (int e = 0; e < params.epochs; ++e) {
        const auto w_prev = w;
        const double b_prev = b;
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            batch.clear();
            for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k)
                batch.push_back(set.samples[order[k]]);
            const auto g = bce_loss_grad<double>(w, b, batch);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g.grad_w[i];
            b -= lr * g.grad_b;
            ++res.params.step;
        }
        const double loss = bce_loss_grad<double>(w, b, all).loss;
        if (!std::isfinite(loss) || loss > 10.0 * std::max(start_loss, 1e-3)) {
            w = w_prev;
            b = b_prev;
            lr *= 0.5;
            ++res.rollbacks;
            res.loss_trajectory.push_back(bce_loss_grad<double>(w, b, all).loss);
            continue;
        }
        res.loss_trajectory.push_back(loss);
    }
    std::transform(w.begin(), w.end(), res.params.weight.begin(), [](double x) { return float(x); });
    res.params.bias = float(b);
    return res;
}

inline Checkpoint to_checkpoint(const SegModelParams& p) {
    Checkpoint ck;
    ck.kind = "seg_model";
    ck.step = p.step;
    ck.meta = {{"learning_rate", p.learning_rate}, {"epochs", p.epochs}, {"batch_size", p.batch_size}};
    ck.tensors.emplace_back("weight", Tensor({p.weight.size()}, p.weight));
    ck.tensors.emplace_back("bias", Tensor({1}, std::vector<float>{p.bias}));
    return ck;
}

inline SegModelParams seg_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "seg_model") throw ValidationError("checkpoint is not a seg_model");
    SegModelParams p;
    p.step = ck.step;
    p.learning_rate = ck.meta.at("learning_rate").get<double>();
    p.epochs = ck.meta.at("epochs").get<int>();
    p.batch_size = ck.meta.at("batch_size").get<int>();
    const auto& w = ck.tensor("weight");
    p.weight.assign(w.data().begin(), w.data().end());
    p.bias = ck.tensor("bias")[0];
    return p;
}

}  // namespace prefseg
