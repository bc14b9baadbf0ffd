#pragma once
// Overlap and boundary-distance metrics on binary masks.
//
// HD95 pools the directed surface distances A->B and B->A (boundary pixels
// only) and takes the 95th percentile with inclusive linear interpolation,
// i.e. position 0.95*(n-1) in the sorted sample. Distances are in pixels.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "prefseg/core_types.hpp"

namespace prefseg::metrics {

struct OverlapCounts {
    std::int64_t a = 0;
    std::int64_t b = 0;
    std::int64_t both = 0;
};

inline OverlapCounts overlap(const Mask& a, const Mask& b) {
    require_same_grid(a, b, "metrics");
    OverlapCounts c;
    auto pa = a.bits(), pb = b.bits();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        c.a += pa[i];
        c.b += pb[i];
        c.both += pa[i] & pb[i];
    }
    return c;
}

inline double dice(const Mask& a, const Mask& b) {
    const auto c = overlap(a, b);
    if (c.a + c.b == 0) return 1.0;
    return 2.0 * double(c.both) / double(c.a + c.b);
}

inline double iou(const Mask& a, const Mask& b) {
    const auto c = overlap(a, b);
    const std::int64_t uni = c.a + c.b - c.both;
    if (uni == 0) return 1.0;
    return double(c.both) / double(uni);
}

// Foreground pixels with a 4-neighbour outside the set or on the grid edge.
inline std::vector<std::pair<int, int>> boundary_pixels(const Mask& m) {
    std::vector<std::pair<int, int>> out;
    const int h = m.height(), w = m.width();
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!m.at(r, c)) continue;
            const bool edge = r == 0 || c == 0 || r == h - 1 || c == w - 1 || !m.at(r - 1, c) ||
                              !m.at(r + 1, c) || !m.at(r, c - 1) || !m.at(r, c + 1);
            if (edge) out.emplace_back(r, c);
        }
    return out;
}

namespace detail {

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
inline void edt_1d(std::span<const double> f, std::span<double> d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        while (k >= 0) {
            const int p = v[k];
            const double s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -inf : ((f[q] + double(q) * q) - (f[v[k - 1]] + double(v[k - 1]) * v[k - 1])) /
                                   (2.0 * (q - v[k - 1]));
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.end(), inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double dq = q - v[j];
        d[q] = dq * dq + f[v[j]];
    }
}

}  // namespace detail

// Exact squared Euclidean distance from every pixel to the nearest site.
inline std::vector<double> squared_distance_to(const std::vector<std::pair<int, int>>& sites, int h, int w) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> grid(std::size_t(h) * w, inf);
    for (auto [r, c] : sites) grid[std::size_t(r) * w + c] = 0.0;

    const int n = std::max(h, w);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) f[r] = grid[std::size_t(r) * w + c];
        detail::edt_1d(std::span(f).first(h), std::span(d).first(h), v, z);
        for (int r = 0; r < h; ++r) grid[std::size_t(r) * w + c] = d[r];
    }
    for (int r = 0; r < h; ++r) {
        std::copy_n(grid.begin() + std::size_t(r) * w, w, f.begin());
        detail::edt_1d(std::span(f).first(w), std::span(d).first(w), v, z);
        std::copy_n(d.begin(), w, grid.begin() + std::size_t(r) * w);
    }
    return grid;
}

// Inclusive linear-interpolation percentile; q in [0,1]. Sorts in place.
inline double percentile_inclusive(std::vector<double>& values, double q) {
    if (values.empty()) throw ValidationError("percentile of empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * double(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - double(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

// Pooled directed boundary distances A->B then B->A.
inline std::vector<double> surface_distances(const Mask& a, const Mask& b) {
    require_same_grid(a, b, "surface_distances");
    const auto ba = boundary_pixels(a);
    const auto bb = boundary_pixels(b);
    std::vector<double> out;
    if (ba.empty() || bb.empty()) return out;
    out.reserve(ba.size() + bb.size());
    const auto to_b = squared_distance_to(bb, a.height(), a.width());
    const auto to_a = squared_distance_to(ba, a.height(), a.width());
    for (auto [r, c] : ba) out.push_back(std::sqrt(to_b[std::size_t(r) * a.width() + c]));
    for (auto [r, c] : bb) out.push_back(std::sqrt(to_a[std::size_t(r) * a.width() + c]));
    return out;
}

// nullopt when either mask is empty.
inline std::optional<double> hd95(const Mask& a, const Mask& b) {
    require_same_grid(a, b, "hd95");
    if (a.count() == 0 || b.count() == 0) return std::nullopt;
    auto d = surface_distances(a, b);
    return percentile_inclusive(d, 0.95);
}

struct MetricReport {
    double dice = 0;
    std::optional<double> hd95;
    double iou = 0;
};

inline MetricReport evaluate(const Mask& prediction, const Mask& reference) {
    return {dice(prediction, reference), hd95(prediction, reference), iou(prediction, reference)};
}

struct Summary {
    double mean = 0;
    double median = 0;
    double std = 0;  // population standard deviation
    std::size_t count = 0;
};

inline Summary summarize(std::vector<double> v) {
    Summary s;
    s.count = v.size();
    if (v.empty()) return s;
    double sum = 0;
    for (double x : v) sum += x;
    s.mean = sum / double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / double(v.size()));
    s.median = percentile_inclusive(v, 0.5);
    return s;
}

}  // namespace prefseg::metrics
