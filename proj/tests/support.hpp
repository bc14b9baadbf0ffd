#pragma once
// Helpers shared by the unit tests and the acceptance binary. Nothing in
// here calls into the library's metric or propagation code, so it can serve
// as an independent reference.
#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "prefseg/core_types.hpp"
#include "prefseg/label_propagation.hpp"

namespace testsupport {

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("prefseg_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline prefseg::Mask random_mask(std::mt19937_64& rng, int h, int w, double density) {
    std::bernoulli_distribution fg(density);
    prefseg::Mask m(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) m.set(r, c, fg(rng));
    return m;
}

// Union of random axis-aligned rectangles; gives blob-like masks with long boundaries.
inline prefseg::Mask random_rect_mask(std::mt19937_64& rng, int h, int w, int rects) {
    prefseg::Mask m(h, w);
    for (int k = 0; k < rects; ++k) {
        std::uniform_int_distribution<int> ry(0, h - 1), rx(0, w - 1);
        int r0 = ry(rng), r1 = ry(rng), c0 = rx(rng), c1 = rx(rng);
        if (r0 > r1) std::swap(r0, r1);
        if (c0 > c1) std::swap(c0, c1);
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) m.set(r, c, true);
    }
    return m;
}

inline prefseg::Mask square(int h, int w, int r0, int c0, int rh, int cw) {
    prefseg::Mask m(h, w);
    for (int r = r0; r < r0 + rh; ++r)
        for (int c = c0; c < c0 + cw; ++c) m.set(r, c, true);
    return m;
}

// Brute-force HD95: all-pairs boundary distances, pooled, inclusive percentile.
inline std::vector<std::pair<int, int>> naive_boundary(const prefseg::Mask& m) {
    std::vector<std::pair<int, int>> out;
    auto inside = [&](int r, int c) {
        return r >= 0 && c >= 0 && r < m.height() && c < m.width() && m.at(r, c);
    };
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c) {
            if (!m.at(r, c)) continue;
            if (!inside(r - 1, c) || !inside(r + 1, c) || !inside(r, c - 1) || !inside(r, c + 1))
                out.emplace_back(r, c);
        }
    return out;
}

inline double naive_hd95(const prefseg::Mask& a, const prefseg::Mask& b) {
    const auto ba = naive_boundary(a), bb = naive_boundary(b);
    std::vector<double> d;
    auto directed = [&](const auto& from, const auto& to) {
        for (auto [r, c] : from) {
            double best = std::numeric_limits<double>::infinity();
            for (auto [r2, c2] : to) best = std::min(best, std::hypot(double(r - r2), double(c - c2)));
            d.push_back(best);
        }
    };
    directed(ba, bb);
    directed(bb, ba);
    std::sort(d.begin(), d.end());
    const double pos = 0.95 * double(d.size() - 1);
    const std::size_t lo = std::size_t(pos);
    if (lo + 1 >= d.size()) return d.back();
    return d[lo] + (pos - double(lo)) * (d[lo + 1] - d[lo]);
}

inline std::vector<float> random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<float> n(0.f, 1.f);
    std::vector<float> v(dim);
    double s = 0;
    for (auto& x : v) {
        x = n(rng);
        s += double(x) * x;
    }
    for (auto& x : v) x = float(x / std::sqrt(s));
    return v;
}

// Random unit feature map whose vectors are drawn around a few shared centers,
// so that cosine thresholds near 0.8 select non-trivial subsets.
inline prefseg::FeatureMap clustered_features(std::mt19937_64& rng, int gh, int gw, int dim, int centers,
                                              double noise) {
    std::vector<std::vector<float>> cs;
    for (int k = 0; k < centers; ++k) cs.push_back(random_unit(rng, dim));
    std::uniform_int_distribution<int> pick(0, centers - 1);
    std::normal_distribution<double> n(0.0, noise);
    prefseg::Tensor t({std::size_t(gh), std::size_t(gw), std::size_t(dim)});
    for (int p = 0; p < gh * gw; ++p) {
        const auto& c = cs[pick(rng)];
        std::vector<double> v(dim);
        double s = 0;
        for (int i = 0; i < dim; ++i) {
            v[i] = c[i] + n(rng);
            s += v[i] * v[i];
        }
        for (int i = 0; i < dim; ++i) t[std::size_t(p) * dim + i] = float(v[i] / std::sqrt(s));
    }
    return prefseg::FeatureMap(std::move(t));
}

// Per-patch reference for propagate: for each patch, scan every click,
// collect the qualifying ones, and resolve with the conflict rule.
inline prefseg::Mask naive_propagate(const std::vector<prefseg::LabeledClick>& clicks,
                                     const prefseg::FeatureMap& f, const prefseg::Mask& base, double tau,
                                     prefseg::ConflictRule rule, int ps) {
    prefseg::Mask out = base;
    for (int gr = 0; gr < f.grid_h(); ++gr)
        for (int gc = 0; gc < f.grid_w(); ++gc) {
            bool claimed = false;
            int label = 0;
            double best = -10;
            bool tie_mixed = false;
            for (const auto& k : clicks) {
                const int kr = k.row / ps, kc = k.col / ps;
                double s;
                if (kr == gr && kc == gc) {
                    s = 1.0;
                } else {
                    const auto a = f.vec(gr, gc), b = f.vec(kr, kc);
                    double dot = 0, na = 0, nb = 0;
                    for (std::size_t i = 0; i < a.size(); ++i) {
                        dot += double(a[i]) * b[i];
                        na += double(a[i]) * a[i];
                        nb += double(b[i]) * b[i];
                    }
                    s = dot / std::sqrt(na * nb);
                    if (s < tau) continue;
                }
                const int l = k.label == prefseg::Label::foreground ? 1 : 0;
                if (rule == prefseg::ConflictRule::latest_wins) {
                    label = l;
                } else if (!claimed || s > best) {
                    best = s;
                    label = l;
                    tie_mixed = false;
                } else if (s == best && l != label) {
                    tie_mixed = true;
                }
                claimed = true;
            }
            if (!claimed) continue;
            if (tie_mixed) label = 0;
            for (int y = gr * ps; y < (gr + 1) * ps; ++y)
                for (int x = gc * ps; x < (gc + 1) * ps; ++x) out.set(y, x, label == 1);
        }
    return out;
}

struct PropagationInstance {
    prefseg::FeatureMap features;
    prefseg::Mask base;
    std::vector<prefseg::LabeledClick> clicks;
    double tau = 0.8;
    prefseg::ConflictRule rule = prefseg::ConflictRule::max_similarity_wins;
    int patch_size = 1;
};

// Grids up to 16x16, 1-5 clicks, clustered features so thresholds bite.
inline PropagationInstance random_propagation_instance(std::mt19937_64& rng) {
    PropagationInstance in;
    const int gh = 1 + int(rng() % 16), gw = 1 + int(rng() % 16);
    in.patch_size = 1 + int(rng() % 4);
    const int dim = 2 + int(rng() % 14);
    in.features = clustered_features(rng, gh, gw, dim, 1 + int(rng() % 4), 0.05 + 0.4 * double(rng() % 100) / 100);
    in.base = random_mask(rng, gh * in.patch_size, gw * in.patch_size, 0.4);
    in.tau = 0.5 + 0.45 * double(rng() % 1000) / 1000.0;
    in.rule = rng() % 2 ? prefseg::ConflictRule::latest_wins : prefseg::ConflictRule::max_similarity_wins;
    const int nclicks = 1 + int(rng() % 5);
    for (int k = 0; k < nclicks; ++k) {
        prefseg::LabeledClick c;
        c.row = int(rng() % std::uint64_t(gh * in.patch_size));
        c.col = int(rng() % std::uint64_t(gw * in.patch_size));
        c.label = rng() % 2 ? prefseg::Label::foreground : prefseg::Label::background;
        c.sequence = k;
        in.clicks.push_back(c);
    }
    return in;
}

}  // namespace testsupport
