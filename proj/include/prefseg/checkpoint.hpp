#pragma once
// Parameter checkpoints: a JSON header followed by PFT1 tensors.
//
//   "PCK1" | u32 LE header length | header JSON (UTF-8) | PFT1 record per tensor
//
// The header lists {"name", "shape"} for each tensor in payload order,
// together with "kind", "step" and free-form "meta".
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prefseg/tensor.hpp"

namespace prefseg {

struct Checkpoint {
    std::string kind;
    std::uint64_t step = 0;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw ValidationError("checkpoint '" + kind + "': no tensor named " + name);
    }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json header{{"kind", ck.kind}, {"step", ck.step}, {"meta", ck.meta}, {"tensors", nlohmann::json::array()}};
    for (const auto& [name, t] : ck.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.dims()}});
    const std::string text = header.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os.write("PCK1", 4);
    pft1::detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ck.tensors) pft1::write(os, t);
    if (!os) throw IoError("checkpoint write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || std::string(magic.data(), 4) != "PCK1")
        throw IoError(path.string() + ": not a checkpoint");
    const auto len = pft1::detail::get_u32(is);
    std::string text(len, '\0');
    if (!is.read(text.data(), len)) throw IoError(path.string() + ": truncated header");
    const auto header = nlohmann::json::parse(text);
    Checkpoint ck;
    ck.kind = header.at("kind").get<std::string>();
    ck.step = header.at("step").get<std::uint64_t>();
    ck.meta = header.value("meta", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        Tensor t = pft1::read(is);
        if (t.dims() != entry.at("shape").get<std::vector<std::size_t>>())
            throw IoError(path.string() + ": shape mismatch for " + entry.at("name").get<std::string>());
        ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

}  // namespace prefseg
