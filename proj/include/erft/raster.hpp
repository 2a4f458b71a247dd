#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "erft/common.hpp"

namespace erft {

// Planar multiband raster: C*H*W 32-bit samples, band-major, nominal [0,1].
struct RasterImage {
    int c = 0, h = 0, w = 0;
    std::vector<float> samples;

    RasterImage() = default;
    RasterImage(int c_, int h_, int w_, float fill = 0.0f)
        : c(c_), h(h_), w(w_), samples(static_cast<std::size_t>(c_) * h_ * w_, fill) {
        require(c_ >= 1 && h_ >= 1 && w_ >= 1, ErrorKind::Geometry, "raster dims must be >= 1");
    }

    std::int64_t count() const { return static_cast<std::int64_t>(c) * h * w; }
    float at(int band, int y, int x) const {
        return samples[(static_cast<std::int64_t>(band) * h + y) * w + x];
    }
    float& at(int band, int y, int x) {
        return samples[(static_cast<std::int64_t>(band) * h + y) * w + x];
    }
    const float* plane(int band) const { return samples.data() + static_cast<std::int64_t>(band) * h * w; }
    float* plane(int band) { return samples.data() + static_cast<std::int64_t>(band) * h * w; }
    std::string dims() const {
        return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

// A PAN/LRMS input pair with exact integer ratio alignment.
struct ImagePair {
    RasterImage pan;  // 1 x H x W
    RasterImage lrms; // C x H/r x W/r
    int ratio = 4;
};

// Checks H = r*h, W = r*w (exactly), single-band PAN, r >= 2.
ImagePair validate_pair(RasterImage pan, RasterImage lrms, int ratio);

// Named parameter blobs plus integer metadata attributes. Blob and attribute
// names are unique; insertion order is preserved so serialization is stable.
class WeightArchive {
public:
    struct Blob {
        std::string name;
        std::vector<int> dims;
        std::vector<float> data;
    };

    void set_attr(const std::string& name, std::int64_t value);
    std::int64_t attr(const std::string& name) const;
    std::optional<std::int64_t> attr_if(const std::string& name) const;

    void add(const std::string& name, std::vector<int> dims, std::vector<float> data);
    bool has(const std::string& name) const;
    const Blob& blob(const std::string& name) const;
    const std::vector<Blob>& blobs() const { return blobs_; }
    const std::vector<std::pair<std::string, std::int64_t>>& attrs() const { return attrs_; }

private:
    std::vector<std::pair<std::string, std::int64_t>> attrs_;
    std::vector<Blob> blobs_;
};

// On-disk formats (all little-endian):
//   raster  "ERFT" | u16 version=1 | u32 C | u32 H | u32 W | C*H*W float32, planar
//   weights "ERFW" | u16 version=1 | u32 n_attrs  | { u16 len | name | i64 value }*
//                                  | u32 n_blobs  | { u16 len | name | u32 ndim |
//                                                    u32 dims[ndim] | float32 data }*
void write_raster(const RasterImage& image, const std::filesystem::path& path);
RasterImage read_raster(const std::filesystem::path& path);

void write_weights(const WeightArchive& archive, const std::filesystem::path& path);
WeightArchive read_weights(const std::filesystem::path& path);

} // namespace erft
