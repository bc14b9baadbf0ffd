#pragma once
// Densifies labeled clicks into a mask: every patch whose feature is within
// cosine threshold tau of a clicked patch takes that click's label. Patches
// no click claims keep the value from the base mask.
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefseg/core_types.hpp"

namespace prefseg {

enum class ConflictRule { latest_wins, max_similarity_wins };

struct PropagationConfig {
    double tau = 0.8;
    ConflictRule conflict_rule = ConflictRule::max_similarity_wins;

    void validate() const {
        if (!(tau > -1.0 && tau <= 1.0)) throw ValidationError("propagation: tau must lie in (-1, 1]");
    }
};

struct LabeledClick {
    int row = 0;  // pixels
    int col = 0;
    Label label = Label::foreground;
    int sequence = 0;

    friend bool operator==(const LabeledClick&, const LabeledClick&) = default;
};

inline double cosine(std::span<const float> a, std::span<const float> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    return dot / std::sqrt(na * nb);
}

namespace detail {

inline PatchIndex click_patch(const LabeledClick& click, const FeatureMap& f, int patch_size) {
    return pixel_to_patch(click.row, click.col, patch_size, f.grid_h() * patch_size, f.grid_w() * patch_size);
}

inline void require_nondegenerate(std::span<const float> v) {
    double n = 0;
    for (float x : v) n += double(x) * x;
    if (!(n > 0.25) || !std::isfinite(n)) throw ValidationError("propagation: degenerate click feature");
}

}  // namespace detail

// Per-patch cosine similarity to the clicked patch, [grid_h x grid_w].
inline Tensor similarity_map(const LabeledClick& click, const FeatureMap& features, int patch_size) {
    const auto at = detail::click_patch(click, features, patch_size);
    const auto ref = features.vec(at.row, at.col);
    detail::require_nondegenerate(ref);
    Tensor out({std::size_t(features.grid_h()), std::size_t(features.grid_w())});
    for (int gr = 0; gr < features.grid_h(); ++gr)
        for (int gc = 0; gc < features.grid_w(); ++gc)
            out.at(gr, gc) = float(cosine(features.vec(gr, gc), ref));
    out.at(at.row, at.col) = 1.0f;
    return out;
}

// Patch-level claim map: the label assigned to each patch, or nullopt if unclaimed.
inline std::vector<std::optional<Label>> claim_patches(std::span<const LabeledClick> clicks,
                                                       const FeatureMap& features, const PropagationConfig& config,
                                                       int patch_size) {
    config.validate();
    const int n = features.patch_count();
    std::vector<std::optional<Label>> claim(n);
    std::vector<double> best(n, -2.0);
    for (const auto& click : clicks) {
        const auto at = detail::click_patch(click, features, patch_size);
        const int clicked = at.row * features.grid_w() + at.col;
        const auto ref = features.vec(clicked);
        detail::require_nondegenerate(ref);
        for (int p = 0; p < n; ++p) {
            const double s = p == clicked ? 1.0 : cosine(features.vec(p), ref);
            if (p != clicked && s < config.tau) continue;
            if (config.conflict_rule == ConflictRule::latest_wins || !claim[p] || s > best[p]) {
                claim[p] = click.label;
                best[p] = s;
            } else if (s == best[p] && *claim[p] != click.label) {
                claim[p] = Label::background;
            }
        }
    }
    return claim;
}

inline Mask propagate(std::span<const LabeledClick> clicks, const FeatureMap& features, const Mask& base,
                      const PropagationConfig& config, int patch_size) {
    if (clicks.empty()) throw ValidationError("propagate: no clicks");
    if (base.height() != features.grid_h() * patch_size || base.width() != features.grid_w() * patch_size)
        throw ShapeError("propagate: base mask does not match feature grid x patch_size");
    const auto claim = claim_patches(clicks, features, config, patch_size);
    Mask out = base;
    for (int gr = 0; gr < features.grid_h(); ++gr)
        for (int gc = 0; gc < features.grid_w(); ++gc) {
            const auto& c = claim[gr * features.grid_w() + gc];
            if (!c) continue;
            const bool fg = *c == Label::foreground;
            for (int y = gr * patch_size; y < (gr + 1) * patch_size; ++y)
                for (int x = gc * patch_size; x < (gc + 1) * patch_size; ++x) out.set(y, x, fg);
        }
    return out;
}

}  // namespace prefseg
