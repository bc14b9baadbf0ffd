#pragma once
// Dataset manifest: a UTF-8 JSON document
//
//   { "name": "...", "patch_size": 8,
//     "records": [ { "id": "img_000", "image": "images/img_000.pgm",
//                    "gt_mask": "masks/img_000.pgm",     (optional)
//                    "features": "features/img_000.pft" } ] }
//
// Paths are relative to the manifest's directory.
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefseg/core_types.hpp"
#include "prefseg/pnm.hpp"
#include "prefseg/tensor.hpp"

namespace prefseg {

struct ManifestEntry {
    std::string id;
    std::string image;
    std::optional<std::string> gt_mask;
    std::string features;
};

inline nlohmann::json manifest_json(const std::string& name, int patch_size,
                                    const std::vector<ManifestEntry>& entries) {
    nlohmann::json j;
    j["name"] = name;
    j["patch_size"] = patch_size;
    j["records"] = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json r{{"id", e.id}, {"image", e.image}, {"features", e.features}};
        if (e.gt_mask) r["gt_mask"] = *e.gt_mask;
        j["records"].push_back(std::move(r));
    }
    return j;
}

inline void write_manifest(const std::filesystem::path& path, const std::string& name, int patch_size,
                           const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << manifest_json(name, patch_size, entries).dump(2) << '\n';
}

// Checks one record against the dataset-wide invariants; throws
// ValidationError naming the record on the first violation.
inline void validate_record(const ImageRecord& rec, int patch_size, std::optional<int> expected_dim) {
    auto fail = [&](const std::string& why) { throw ValidationError("record '" + rec.id + "': " + why); };
    if (rec.image.rank() != 3 || (rec.channels() != 1 && rec.channels() != 3))
        fail("image must have 1 or 3 channels");
    const int h = rec.height(), w = rec.width();
    if (rec.gt_mask && (rec.gt_mask->height() != h || rec.gt_mask->width() != w))
        fail("dimension mismatch: mask " + std::to_string(rec.gt_mask->height()) + "x" +
             std::to_string(rec.gt_mask->width()) + " vs image " + std::to_string(h) + "x" + std::to_string(w));
    if (h % patch_size != 0 || w % patch_size != 0)
        fail("image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch_size " +
             std::to_string(patch_size));
    const auto& f = rec.features;
    if (f.grid_h() != h / patch_size || f.grid_w() != w / patch_size)
        fail("dimension mismatch: feature grid " + std::to_string(f.grid_h()) + "x" + std::to_string(f.grid_w()) +
             " vs expected " + std::to_string(h / patch_size) + "x" + std::to_string(w / patch_size));
    if (expected_dim && f.dim() != *expected_dim)
        fail("feature dim " + std::to_string(f.dim()) + " differs from dataset dim " + std::to_string(*expected_dim));
    if (auto bad = f.first_non_unit())
        fail("feature vector at patch " + std::to_string(*bad) + " is not unit norm");
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("missing manifest: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + path.string() + ": " + e.what());
    }

    DatasetManifest m;
    m.source = std::filesystem::absolute(path);
    const auto base = m.source.parent_path();
    try {
        m.name = j.at("name").get<std::string>();
        m.patch_size = j.at("patch_size").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest: " + std::string(e.what()));
    }
    if (m.patch_size <= 0) throw ValidationError("manifest: patch_size must be positive");
    if (!j.contains("records") || !j["records"].is_array()) throw ValidationError("manifest: records[] missing");

    std::set<std::string> seen;
    std::optional<int> dim;
    for (const auto& r : j["records"]) {
        ImageRecord rec;
        try {
            rec.id = r.at("id").get<std::string>();
            rec.image = pnm::load_image(base / r.at("image").get<std::string>());
            if (r.contains("gt_mask") && !r["gt_mask"].is_null())
                rec.gt_mask = pnm::load_mask(base / r["gt_mask"].get<std::string>());
            rec.feature_ref = base / r.at("features").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError("manifest record: " + std::string(e.what()));
        }
        if (!seen.insert(rec.id).second) throw ValidationError("manifest: duplicate id '" + rec.id + "'");
        try {
            rec.features = FeatureMap(pft1::load(rec.feature_ref));
        } catch (const Error& e) {
            throw ValidationError("record '" + rec.id + "': " + e.what());
        }
        validate_record(rec, m.patch_size, dim);
        dim = rec.features.dim();
        m.records.push_back(std::move(rec));
    }
    return m;
}

}  // namespace prefseg
