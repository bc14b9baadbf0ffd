#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefseg/error.hpp"
#include "prefseg/tensor.hpp"

namespace prefseg {

inline constexpr double kUnitNormTolerance = 1e-5;

// Deterministic seed derivation (splitmix64 chain).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    auto splitmix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    std::uint64_t h = splitmix(seed);
    for (auto v : {a, b, c}) h = splitmix(h ^ splitmix(v));
    return h;
}

enum class Label : std::uint8_t { background = 0, foreground = 1 };

inline const char* to_string(Label l) { return l == Label::foreground ? "fg" : "bg"; }

// Binary H x W segmentation, row-major, 1 = foreground.
class Mask {
public:
    Mask() = default;
    Mask(int height, int width, std::uint8_t fill = 0)
        : height_(height), width_(width), bits_(checked_area(height, width), fill ? 1 : 0) {}
    Mask(int height, int width, std::vector<std::uint8_t> bits)
        : height_(height), width_(width), bits_(std::move(bits)) {
        if (bits_.size() != checked_area(height, width))
            throw ShapeError("mask: bits length != height*width");
        for (auto& b : bits_)
            if (b > 1) throw ValidationError("mask: values must be 0 or 1");
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t area() const noexcept { return bits_.size(); }

    std::uint8_t at(int r, int c) const { return bits_[static_cast<std::size_t>(r) * width_ + c]; }
    void set(int r, int c, bool v) { bits_[static_cast<std::size_t>(r) * width_ + c] = v ? 1 : 0; }

    std::span<const std::uint8_t> bits() const noexcept { return bits_; }

    std::int64_t count() const noexcept {
        std::int64_t n = 0;
        for (auto b : bits_) n += b;
        return n;
    }

    bool same_grid(const Mask& o) const noexcept { return height_ == o.height_ && width_ == o.width_; }

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    static std::size_t checked_area(int h, int w) {
        if (h <= 0 || w <= 0) throw ShapeError("mask: dimensions must be positive");
        return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> bits_;
};

inline void require_same_grid(const Mask& a, const Mask& b, const char* what) {
    if (!a.same_grid(b))
        throw ShapeError(std::string(what) + ": grid mismatch (" + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                         std::to_string(b.width()) + ")");
}

struct PatchIndex {
    int row = 0;
    int col = 0;
    friend bool operator==(const PatchIndex&, const PatchIndex&) = default;
};

inline PatchIndex pixel_to_patch(int row, int col, int patch_size, int height, int width) {
    if (patch_size <= 0) throw ValidationError("pixel_to_patch: patch_size must be positive");
    if (row < 0 || col < 0 || row >= height || col >= width)
        throw ValidationError("pixel_to_patch: (" + std::to_string(row) + "," + std::to_string(col) +
                              ") outside " + std::to_string(height) + "x" + std::to_string(width));
    return {row / patch_size, col / patch_size};
}

// Per-patch majority labels: a patch is foreground iff more than half of
// its pixels are foreground (ties are background). Row-major over the grid.
inline std::vector<std::uint8_t> patch_majority(const Mask& m, int patch_size) {
    if (patch_size <= 0 || m.height() % patch_size || m.width() % patch_size)
        throw ShapeError("patch_majority: mask not divisible by patch_size");
    const int gh = m.height() / patch_size, gw = m.width() / patch_size;
    std::vector<std::uint8_t> out(std::size_t(gh) * gw);
    for (int gr = 0; gr < gh; ++gr)
        for (int gc = 0; gc < gw; ++gc) {
            int n = 0;
            for (int y = gr * patch_size; y < (gr + 1) * patch_size; ++y)
                for (int x = gc * patch_size; x < (gc + 1) * patch_size; ++x) n += m.at(y, x);
            out[std::size_t(gr) * gw + gc] = 2 * n > patch_size * patch_size ? 1 : 0;
        }
    return out;
}

// Blockwise-constant expansion of a patch grid to pixels.
inline Mask expand_patches(std::span<const std::uint8_t> labels, int grid_h, int grid_w, int patch_size) {
    if (labels.size() != std::size_t(grid_h) * grid_w) throw ShapeError("expand_patches: label count");
    Mask m(grid_h * patch_size, grid_w * patch_size);
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            m.set(y, x, labels[std::size_t(y / patch_size) * grid_w + x / patch_size] != 0);
    return m;
}

// Grid of unit-norm patch vectors, stored as a [grid_h x grid_w x dim] tensor.
class FeatureMap {
public:
    FeatureMap() = default;
    explicit FeatureMap(Tensor vectors) : vectors_(std::move(vectors)) {
        if (vectors_.rank() != 3) throw ShapeError("feature map: tensor must be [grid_h x grid_w x dim]");
    }

    int grid_h() const { return static_cast<int>(vectors_.dim(0)); }
    int grid_w() const { return static_cast<int>(vectors_.dim(1)); }
    int dim() const { return static_cast<int>(vectors_.dim(2)); }
    int patch_count() const { return grid_h() * grid_w(); }

    std::span<const float> vec(int gr, int gc) const {
        return vectors_.data().subspan((static_cast<std::size_t>(gr) * grid_w() + gc) * dim(), dim());
    }
    std::span<const float> vec(int patch) const {
        return vectors_.data().subspan(static_cast<std::size_t>(patch) * dim(), dim());
    }

    const Tensor& tensor() const noexcept { return vectors_; }

    // Index of the first patch whose norm deviates from 1 by more than tol, if any.
    std::optional<int> first_non_unit(double tol = kUnitNormTolerance) const {
        for (int p = 0; p < patch_count(); ++p) {
            double s = 0;
            for (float v : vec(p)) s += double(v) * v;
            if (!std::isfinite(s) || std::abs(std::sqrt(s) - 1.0) > tol) return p;
        }
        return std::nullopt;
    }

    friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

private:
    Tensor vectors_;
};

// A loaded and validated dataset entry. gt_mask is present only when the
// dataset ships ground truth; it is consulted by the simulated oracle and by
// reporting, never as a training target.
struct ImageRecord {
    std::string id;
    Tensor image;  // [C x H x W], C in {1,3}, values in [0,1]
    std::optional<Mask> gt_mask;
    std::filesystem::path feature_ref;
    FeatureMap features;

    int channels() const { return static_cast<int>(image.dim(0)); }
    int height() const { return static_cast<int>(image.dim(1)); }
    int width() const { return static_cast<int>(image.dim(2)); }
};

struct DatasetManifest {
    std::string name;
    int patch_size = 0;
    std::filesystem::path source;  // manifest file the dataset was loaded from
    std::vector<ImageRecord> records;

    bool has_ground_truth() const {
        for (const auto& r : records)
            if (!r.gt_mask) return false;
        return !records.empty();
    }
};

}  // namespace prefseg
