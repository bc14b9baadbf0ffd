#pragma once
// Dense float32 tensor and the PFT1 binary file format.
//
// PFT1 layout (all little-endian, no padding):
//   "PFT1" | u8 dtype (1 = float32) | u8 ndim | ndim x u32 dims | payload
//
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "prefseg/error.hpp"

namespace prefseg {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims, float fill = 0.0f)
        : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

    Tensor(std::vector<std::size_t> dims, std::vector<float> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (element_count(dims_) != data_.size())
            throw ShapeError("tensor: product(dims) != data length");
    }

    const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
    float at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
    float& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }
    float at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * dims_[1] + j) * dims_[2] + k];
    }

    bool all_finite() const noexcept {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

    static std::size_t element_count(const std::vector<std::size_t>& dims) {
        if (dims.empty()) return 0;
        std::size_t n = 1;
        for (auto d : dims) {
            if (d == 0) throw ShapeError("tensor: dims must be positive");
            n *= d;
        }
        return n;
    }

private:
    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

namespace pft1 {

inline constexpr std::array<char, 4> kMagic{'P', 'F', 'T', '1'};
inline constexpr std::uint8_t kDtypeFloat32 = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("pft1: truncated stream");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

inline void write(std::ostream& os, const Tensor& t) {
    if (t.rank() == 0 || t.rank() > 255) throw ShapeError("pft1: rank must be in [1,255]");
    os.write(kMagic.data(), 4);
    os.put(static_cast<char>(kDtypeFloat32));
    os.put(static_cast<char>(t.rank()));
    for (auto d : t.dims()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (float v : t.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
    if (!os) throw IoError("pft1: write failed");
}

inline Tensor read(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4) || magic != kMagic) throw IoError("pft1: bad magic");
    const int dtype = is.get();
    const int ndim = is.get();
    if (!is) throw IoError("pft1: truncated header");
    if (dtype != kDtypeFloat32) throw IoError("pft1: unsupported dtype " + std::to_string(dtype));
    if (ndim == 0) throw IoError("pft1: ndim must be positive");
    std::vector<std::size_t> dims(static_cast<std::size_t>(ndim));
    for (auto& d : dims) {
        d = detail::get_u32(is);
        if (d == 0) throw IoError("pft1: zero dimension");
    }
    const std::size_t n = Tensor::element_count(dims);
    std::vector<float> data(n);
    for (auto& v : data) v = std::bit_cast<float>(detail::get_u32(is));
    return Tensor(std::move(dims), std::move(data));
}

inline void save(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    write(os, t);
}

inline Tensor load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    try {
        return read(is);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace pft1
}  // namespace prefseg
