#pragma once
// Patch features: loading, the trainable linear adapter, triplet-loss
// adaptation, and the synthetic world generator.
//
// The adapter maps a raw patch vector v to normalize(W v). It replaces
// low-rank fine-tuning of a transformer backbone: features arrive
// pre-extracted, and W is trained with the same triplet objective.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prefseg/checkpoint.hpp"
#include "prefseg/core_types.hpp"
#include "prefseg/manifest.hpp"
#include "prefseg/pnm.hpp"
#include "prefseg/tensor.hpp"

namespace prefseg {

struct AdapterParams {
    Tensor weight;  // [dim x dim], row-major; identity at start
    double learning_rate = 1e-2;
    double margin = 0.2;
    int batch_size = 32;
    std::uint64_t step = 0;

    static AdapterParams identity(int dim) {
        AdapterParams a;
        a.weight = Tensor({std::size_t(dim), std::size_t(dim)});
        for (int i = 0; i < dim; ++i) a.weight.at(i, i) = 1.0f;
        return a;
    }

    int dim() const { return static_cast<int>(weight.dim(0)); }
};

// out = normalize(W v); returns false when W v is zero or non-finite.
template <class S>
bool adapt_vector(std::span<const S> weight, std::span<const float> v, std::span<S> out) {
    const std::size_t d = v.size();
    double norm2 = 0;
    for (std::size_t i = 0; i < d; ++i) {
        S acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += weight[i * d + j] * S(v[j]);
        out[i] = acc;
        norm2 += double(acc) * double(acc);
    }
    if (!(norm2 > 0) || !std::isfinite(norm2)) return false;
    const S inv = S(1.0 / std::sqrt(norm2));
    for (auto& x : out) x *= inv;
    return true;
}

inline FeatureMap get_features(const FeatureMap& raw, const AdapterParams& adapter) {
    if (raw.dim() != adapter.dim())
        throw ShapeError("get_features: feature dim " + std::to_string(raw.dim()) + " vs adapter dim " +
                         std::to_string(adapter.dim()));
    Tensor out(raw.tensor().dims());
    const auto d = std::size_t(raw.dim());
    for (int p = 0; p < raw.patch_count(); ++p) {
        auto dst = out.data().subspan(std::size_t(p) * d, d);
        if (!adapt_vector<float>(adapter.weight.data(), raw.vec(p), dst))
            throw Error("get_features: adapter produced a degenerate vector (diverged adapter?)");
    }
    if (!out.all_finite()) throw Error("get_features: non-finite adapted features");
    return FeatureMap(std::move(out));
}

inline FeatureMap get_features(const ImageRecord& record, const AdapterParams& adapter) {
    return get_features(record.features, adapter);
}

struct Triplet {
    std::span<const float> anchor;
    std::span<const float> positive;
    std::span<const float> negative;
};

template <class S>
struct TripletLossGrad {
    S loss = 0;                 // mean hinge loss over the batch
    std::vector<S> grad;        // dL/dW, row-major dim x dim
    std::vector<bool> active;   // hinge active per triplet
};

// Mean over the batch of max(0, margin - cos(a,p) + cos(a,n)) with every
// vector passed through normalize(W x), and its gradient with respect to W.
template <class S>
TripletLossGrad<S> triplet_loss_grad(std::span<const S> weight, int dim, S margin, std::span<const Triplet> batch) {
    const auto d = std::size_t(dim);
    TripletLossGrad<S> out;
    out.grad.assign(d * d, S(0));
    out.active.assign(batch.size(), false);
    if (batch.empty()) return out;
    const S inv_b = S(1) / S(batch.size());

    std::vector<S> ya(d), yp(d), yn(d), ga(d), gp(d), gn(d);
    auto project = [&](std::span<const float> x, std::vector<S>& y) {
        S n2 = 0;
        for (std::size_t i = 0; i < d; ++i) {
            S acc = 0;
            for (std::size_t j = 0; j < d; ++j) acc += weight[i * d + j] * S(x[j]);
            y[i] = acc;
            n2 += acc * acc;
        }
        return std::sqrt(n2);
    };
    // dL/dy for y = W x, u = y / |y|: (g - u (u.g)) / |y|, accumulated as outer product with x.
    auto backprop = [&](std::span<const float> x, const std::vector<S>& u, S norm, std::vector<S>& g) {
        S ug = 0;
        for (std::size_t i = 0; i < d; ++i) ug += u[i] * g[i];
        for (std::size_t i = 0; i < d; ++i) {
            const S dy = (g[i] - u[i] * ug) / norm;
            for (std::size_t j = 0; j < d; ++j) out.grad[i * d + j] += dy * S(x[j]);
        }
    };

    for (std::size_t t = 0; t < batch.size(); ++t) {
        const auto& tr = batch[t];
        const S na = project(tr.anchor, ya), np = project(tr.positive, yp), nn = project(tr.negative, yn);
        for (std::size_t i = 0; i < d; ++i) {
            ya[i] /= na;
            yp[i] /= np;
            yn[i] /= nn;
        }
        S cap = 0, can = 0;
        for (std::size_t i = 0; i < d; ++i) {
            cap += ya[i] * yp[i];
            can += ya[i] * yn[i];
        }
        const S l = margin - cap + can;
        if (l <= 0) continue;
        out.active[t] = true;
        out.loss += l * inv_b;
        for (std::size_t i = 0; i < d; ++i) {
            ga[i] = (yn[i] - yp[i]) * inv_b;
            gp[i] = -ya[i] * inv_b;
            gn[i] = ya[i] * inv_b;
        }
        backprop(tr.anchor, ya, na, ga);
        backprop(tr.positive, yp, np, gp);
        backprop(tr.negative, yn, nn, gn);
    }
    return out;
}

struct PseudoLabeled {
    const FeatureMap* features = nullptr;  // raw (unadapted) features
    const Mask* mask = nullptr;
};

struct AdaptResult {
    AdapterParams adapter;
    std::vector<double> loss_trajectory;  // batch loss before each step
    std::optional<std::string> warning;
    std::size_t skipped_steps = 0;
};

inline AdaptResult adapt_features(const AdapterParams& adapter, std::span<const PseudoLabeled> pseudo_labels,
                                  int steps, std::uint64_t seed, int patch_size) {
    AdaptResult res{adapter, {}, std::nullopt, 0};
    std::vector<std::span<const float>> pools[2];
    for (const auto& pl : pseudo_labels) {
        if (pl.features->dim() != adapter.dim()) throw ShapeError("adapt_features: feature dim mismatch");
        const auto labels = patch_majority(*pl.mask, patch_size);
        if (int(labels.size()) != pl.features->patch_count())
            throw ShapeError("adapt_features: mask does not match feature grid");
        for (int p = 0; p < pl.features->patch_count(); ++p) pools[labels[p]].push_back(pl.features->vec(p));
    }
    if (steps <= 0) return res;
    if (pools[0].empty() || pools[1].empty()) {
        res.warning = "adapt_features: pseudo-labels contain a single class; adapter left unchanged";
        return res;
    }

    const int dim = adapter.dim();
    std::vector<double> w(adapter.weight.data().begin(), adapter.weight.data().end());
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<Triplet> batch(std::size_t(std::max(1, adapter.batch_size)));
    std::vector<double> probe(dim);
    for (int s = 0; s < steps; ++s) {
        for (auto& t : batch) {
            const int cls = coin(rng) ? 1 : 0;
            const auto& same = pools[cls];
            const auto& other = pools[1 - cls];
            std::uniform_int_distribution<std::size_t> pick_same(0, same.size() - 1);
            std::uniform_int_distribution<std::size_t> pick_other(0, other.size() - 1);
            const std::size_t a = pick_same(rng);
            std::size_t p = pick_same(rng);
            if (same.size() > 1)
                while (p == a) p = pick_same(rng);
            t = {same[a], same[p], other[pick_other(rng)]};
        }
        auto lg = triplet_loss_grad<double>(w, dim, adapter.margin, batch);
        res.loss_trajectory.push_back(lg.loss);
        bool finite = std::isfinite(lg.loss);
        for (double g : lg.grad) finite = finite && std::isfinite(g);
        if (!finite) {
            ++res.skipped_steps;
            continue;
        }
        std::vector<double> next(w);
        for (std::size_t i = 0; i < w.size(); ++i) next[i] -= adapter.learning_rate * lg.grad[i];
        bool ok = true;
        for (const auto& t : batch)
            for (auto v : {t.anchor, t.positive, t.negative}) ok = ok && adapt_vector<double>(next, v, probe);
        if (!ok) {
            ++res.skipped_steps;
            continue;
        }
        w.swap(next);
        ++res.adapter.step;
    }
    std::transform(w.begin(), w.end(), res.adapter.weight.data().begin(), [](double x) { return float(x); });
    return res;
}

inline Checkpoint to_checkpoint(const AdapterParams& a) {
    Checkpoint ck;
    ck.kind = "feature_adapter";
    ck.step = a.step;
    ck.meta = {{"learning_rate", a.learning_rate}, {"margin", a.margin}, {"batch_size", a.batch_size}};
    ck.tensors.emplace_back("weight", a.weight);
    return ck;
}

inline AdapterParams adapter_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "feature_adapter") throw ValidationError("checkpoint is not a feature_adapter");
    AdapterParams a;
    a.step = ck.step;
    a.learning_rate = ck.meta.at("learning_rate").get<double>();
    a.margin = ck.meta.at("margin").get<double>();
    a.batch_size = ck.meta.at("batch_size").get<int>();
    a.weight = ck.tensor("weight");
    if (a.weight.rank() != 2 || a.weight.dim(0) != a.weight.dim(1)) throw ValidationError("adapter weight not square");
    return a;
}

struct SyntheticWorldConfig {
    std::string name = "synthetic";
    int image_size = 64;
    int patch_size = 8;
    int channels = 1;
    int blob_count_min = 1;
    int blob_count_max = 2;
    double blob_radius_min = 0.16;  // fraction of image_size
    double blob_radius_max = 0.30;
    int feature_dim = 16;
    double fg_bg_separation = 1.2;  // 1 - cos(fg_center, bg_center)
    double noise_sigma = 0.15;
    double image_noise = 0.05;
    // Off: every patch is its majority class centre plus noise. On: a patch
    // straddling the boundary uses the fg-fraction-weighted blend of both
    // centres, as real backbone features do.
    bool boundary_mixing = false;
    std::uint64_t seed = 0;

    void validate() const {
        if (image_size <= 0 || patch_size <= 0 || image_size % patch_size)
            throw ValidationError("world: image_size must be a positive multiple of patch_size");
        if (channels != 1 && channels != 3) throw ValidationError("world: channels must be 1 or 3");
        if (blob_count_min < 1 || blob_count_max < blob_count_min) throw ValidationError("world: bad blob range");
        if (!(blob_radius_min > 0 && blob_radius_max >= blob_radius_min && blob_radius_max < 0.5))
            throw ValidationError("world: bad blob radius range");
        if (feature_dim < 2) throw ValidationError("world: feature_dim must be >= 2");
        if (!(fg_bg_separation >= 0 && fg_bg_separation <= 2)) throw ValidationError("world: separation in [0,2]");
        if (!(noise_sigma >= 0) || !(image_noise >= 0)) throw ValidationError("world: noise must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const SyntheticWorldConfig& c) {
    j = {{"name", c.name},
         {"image_size", c.image_size},
         {"patch_size", c.patch_size},
         {"channels", c.channels},
         {"blob_count_range", {c.blob_count_min, c.blob_count_max}},
         {"blob_radius_range", {c.blob_radius_min, c.blob_radius_max}},
         {"feature_dim", c.feature_dim},
         {"fg_bg_separation", c.fg_bg_separation},
         {"noise_sigma", c.noise_sigma},
         {"image_noise", c.image_noise},
         {"boundary_mixing", c.boundary_mixing},
         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticWorldConfig& c) {
    c.name = j.value("name", c.name);
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.channels = j.value("channels", c.channels);
    if (j.contains("blob_count_range")) {
        c.blob_count_min = j["blob_count_range"].at(0).get<int>();
        c.blob_count_max = j["blob_count_range"].at(1).get<int>();
    }
    if (j.contains("blob_radius_range")) {
        c.blob_radius_min = j["blob_radius_range"].at(0).get<double>();
        c.blob_radius_max = j["blob_radius_range"].at(1).get<double>();
    }
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.fg_bg_separation = j.value("fg_bg_separation", c.fg_bg_separation);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.image_noise = j.value("image_noise", c.image_noise);
    c.boundary_mixing = j.value("boundary_mixing", c.boundary_mixing);
    c.seed = j.value("seed", c.seed);
}

namespace detail {

// Two orthonormal directions in R^dim.
inline std::pair<std::vector<double>, std::vector<double>> random_frame(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> e0(dim), e1(dim);
    auto normalize = [](std::vector<double>& v) {
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
    };
    for (double& x : e0) x = g(rng);
    normalize(e0);
    for (double& x : e1) x = g(rng);
    double dot = 0;
    for (int i = 0; i < dim; ++i) dot += e0[i] * e1[i];
    for (int i = 0; i < dim; ++i) e1[i] -= dot * e0[i];
    normalize(e1);
    return {e0, e1};
}

inline Mask draw_blobs(const SyntheticWorldConfig& c, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> count(c.blob_count_min, c.blob_count_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double size = c.image_size;
    Mask m(c.image_size, c.image_size);
    const int k = count(rng);
    for (int b = 0; b < k; ++b) {
        const double cy = size * (0.3 + 0.4 * unit(rng));
        const double cx = size * (0.3 + 0.4 * unit(rng));
        const double r = size * (c.blob_radius_min + (c.blob_radius_max - c.blob_radius_min) * unit(rng));
        const double aspect = 0.8 + 0.4 * unit(rng);
        const double rot = std::numbers::pi * unit(rng);
        const double phase = 2 * std::numbers::pi * unit(rng);
        const double wobble = 0.1 * unit(rng);
        const double cr = std::cos(rot), sr = std::sin(rot);
        for (int y = 0; y < c.image_size; ++y)
            for (int x = 0; x < c.image_size; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double ex = (cr * dx + sr * dy) / aspect;
                const double ey = (-sr * dx + cr * dy) * aspect;
                const double rho = std::hypot(ex, ey);
                const double phi = std::atan2(ey, ex);
                if (rho <= r * (1.0 + wobble * std::sin(3.0 * phi + phase))) m.set(y, x, true);
            }
    }
    return m;
}

}  // namespace detail

// Writes manifest.json plus images/, masks/ and features/ under out_dir and
// returns the loaded manifest. Output is a pure function of (config, n).
inline DatasetManifest generate_world(const SyntheticWorldConfig& config, int n, const std::filesystem::path& out_dir) {
    config.validate();
    if (n < 1) throw ValidationError("world: n must be >= 1");
    namespace fs = std::filesystem;
    std::error_code ec;
    for (const char* sub : {"images", "masks", "features"}) {
        fs::create_directories(out_dir / sub, ec);
        if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
    }

    std::mt19937_64 rng(config.seed);
    const auto [e0, e1] = detail::random_frame(config.feature_dim, rng);
    const double cos_gap = 1.0 - config.fg_bg_separation;
    const double sin_gap = std::sqrt(std::max(0.0, 1.0 - cos_gap * cos_gap));
    std::vector<double> centers[2] = {std::vector<double>(config.feature_dim), e0};
    for (int i = 0; i < config.feature_dim; ++i) centers[0][i] = cos_gap * e0[i] + sin_gap * e1[i];

    const int size = config.image_size, ps = config.patch_size, grid = size / ps;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "img_%03d", i);
        const Mask gt = detail::draw_blobs(config, rng);

        Tensor image({std::size_t(config.channels), std::size_t(size), std::size_t(size)});
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double acc = 0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || xx < 0 || yy >= size || xx >= size) continue;
                        acc += gt.at(yy, xx);
                        ++cnt;
                    }
                const double base = 0.3 + 0.4 * acc / cnt + config.image_noise * gauss(rng);
                for (int ch = 0; ch < config.channels; ++ch)
                    image.at(ch, y, x) = float(std::clamp(base * (1.0 - 0.1 * ch), 0.0, 1.0));
            }

        const auto labels = patch_majority(gt, ps);
        Tensor feats({std::size_t(grid), std::size_t(grid), std::size_t(config.feature_dim)});
        std::vector<double> mean(config.feature_dim), v(config.feature_dim);
        for (int p = 0; p < grid * grid; ++p) {
            double frac = labels[p];
            if (config.boundary_mixing) {
                int fg = 0;
                for (int y = (p / grid) * ps; y < (p / grid + 1) * ps; ++y)
                    for (int x = (p % grid) * ps; x < (p % grid + 1) * ps; ++x) fg += gt.at(y, x);
                frac = double(fg) / (ps * ps);
            }
            double mean2 = 0;
            for (int k = 0; k < config.feature_dim; ++k) {
                mean[k] = frac * centers[1][k] + (1.0 - frac) * centers[0][k];
                mean2 += mean[k] * mean[k];
            }
            if (mean2 < 1e-12) mean = centers[labels[p]];  // antipodal centres blended at exactly 1/2
            double n2 = 0;
            for (int k = 0; k < config.feature_dim; ++k) {
                v[k] = mean[k] + config.noise_sigma * gauss(rng);
                n2 += v[k] * v[k];
            }
            const double inv = 1.0 / std::sqrt(n2);
            for (int k = 0; k < config.feature_dim; ++k)
                feats[std::size_t(p) * config.feature_dim + k] = float(v[k] * inv);
        }

        ManifestEntry e{id, std::string("images/") + id + (config.channels == 1 ? ".pgm" : ".ppm"),
                        std::string("masks/") + id + ".pgm", std::string("features/") + id + ".pft"};
        pnm::save_image(out_dir / e.image, image);
        pnm::save_mask(out_dir / *e.gt_mask, gt);
        pft1::save(out_dir / e.features, feats);
        entries.push_back(std::move(e));
    }
    write_manifest(out_dir / "manifest.json", config.name, ps, entries);
    return load_manifest(out_dir / "manifest.json");
}

}  // namespace prefseg
