#include "erft/raster.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace erft {

ImagePair validate_pair(RasterImage pan, RasterImage lrms, int ratio) {
    require(ratio >= 2, ErrorKind::Config, "pair ratio must be >= 2, got " + std::to_string(ratio));
    require(pan.c == 1, ErrorKind::Geometry, "PAN must be single-band, got " + pan.dims());
    if (pan.h != ratio * lrms.h || pan.w != ratio * lrms.w) {
        raise(ErrorKind::Geometry, "PAN " + pan.dims() + " is not exactly " + std::to_string(ratio) +
                                       "x the LRMS " + lrms.dims());
    }
    return ImagePair{std::move(pan), std::move(lrms), ratio};
}

void WeightArchive::set_attr(const std::string& name, std::int64_t value) {
    for (auto& [n, v] : attrs_) {
        if (n == name) {
            v = value;
            return;
        }
    }
    attrs_.emplace_back(name, value);
}

std::optional<std::int64_t> WeightArchive::attr_if(const std::string& name) const {
    for (const auto& [n, v] : attrs_)
        if (n == name) return v;
    return std::nullopt;
}

std::int64_t WeightArchive::attr(const std::string& name) const {
    auto v = attr_if(name);
    require(v.has_value(), ErrorKind::Validation, "weight archive missing attribute '" + name + "'");
    return *v;
}

void WeightArchive::add(const std::string& name, std::vector<int> dims, std::vector<float> data) {
    require(!has(name), ErrorKind::Validation, "duplicate blob name '" + name + "'");
    std::int64_t n = 1;
    for (int d : dims) {
        require(d >= 1, ErrorKind::Validation, "blob '" + name + "' has non-positive dim");
        n *= d;
    }
    require(n == static_cast<std::int64_t>(data.size()), ErrorKind::Validation,
            "blob '" + name + "' data length does not match dims");
    blobs_.push_back(Blob{name, std::move(dims), std::move(data)});
}

bool WeightArchive::has(const std::string& name) const {
    for (const auto& b : blobs_)
        if (b.name == name) return true;
    return false;
}

const WeightArchive::Blob& WeightArchive::blob(const std::string& name) const {
    for (const auto& b : blobs_)
        if (b.name == name) return b;
    raise(ErrorKind::Validation, "weight archive has no blob '" + name + "'");
}

namespace {

constexpr std::uint16_t kRasterVersion = 1;
constexpr std::uint16_t kWeightsVersion = 1;

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : path_(path) {
        f_ = std::fopen(path.string().c_str(), "wb");
        require(f_ != nullptr, ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    }
    ~Writer() {
        if (f_) std::fclose(f_);
    }
    Writer(const Writer&) = delete;
    Writer& operator=(const Writer&) = delete;

    void bytes(const void* p, std::size_t n) {
        require(std::fwrite(p, 1, n, f_) == n, ErrorKind::Io, "short write to '" + path_.string() + "'");
    }
    void u16(std::uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
        bytes(b, 2);
    }
    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        bytes(b, 4);
    }
    void i64(std::int64_t v) {
        auto u = static_cast<std::uint64_t>(v);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
        bytes(b, 8);
    }
    void f32_array(const float* p, std::size_t n) {
        std::vector<unsigned char> buf(n * 4);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t u = std::bit_cast<std::uint32_t>(p[i]);
            buf[4 * i] = static_cast<unsigned char>(u);
            buf[4 * i + 1] = static_cast<unsigned char>(u >> 8);
            buf[4 * i + 2] = static_cast<unsigned char>(u >> 16);
            buf[4 * i + 3] = static_cast<unsigned char>(u >> 24);
        }
        bytes(buf.data(), buf.size());
    }
    void name(const std::string& s) {
        require(s.size() <= 0xFFFF, ErrorKind::Validation, "name too long");
        u16(static_cast<std::uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }

private:
    std::filesystem::path path_;
    std::FILE* f_ = nullptr;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path) {
        f_ = std::fopen(path.string().c_str(), "rb");
        require(f_ != nullptr, ErrorKind::Io, "cannot open '" + path.string() + "' for reading");
    }
    ~Reader() {
        if (f_) std::fclose(f_);
    }
    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    void bytes(void* p, std::size_t n) {
        require(std::fread(p, 1, n, f_) == n, ErrorKind::Io,
                "truncated file '" + path_.string() + "'");
    }
    std::uint16_t u16() {
        unsigned char b[2];
        bytes(b, 2);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32() {
        unsigned char b[4];
        bytes(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::int64_t i64() {
        unsigned char b[8];
        bytes(b, 8);
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return static_cast<std::int64_t>(u);
    }
    void f32_array(float* p, std::size_t n) {
        std::vector<unsigned char> buf(n * 4);
        bytes(buf.data(), buf.size());
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t u = static_cast<std::uint32_t>(buf[4 * i]) |
                                    (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                                    (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                                    (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
            p[i] = std::bit_cast<float>(u);
        }
    }
    std::string name() {
        std::string s(u16(), '\0');
        bytes(s.data(), s.size());
        return s;
    }
    void magic(const char expect[4]) {
        char m[4];
        bytes(m, 4);
        require(std::memcmp(m, expect, 4) == 0, ErrorKind::Format,
                "bad magic in '" + path_.string() + "'");
    }
    void version(std::uint16_t expect) {
        const std::uint16_t v = u16();
        require(v == expect, ErrorKind::Format,
                "unsupported format version " + std::to_string(v) + " in '" + path_.string() + "'");
    }

private:
    std::filesystem::path path_;
    std::FILE* f_ = nullptr;
};

void check_finite(const std::vector<float>& v, const std::string& what) {
    for (float x : v)
        require(std::isfinite(x), ErrorKind::Validation, what + " contains a non-finite sample");
}

} // namespace

void write_raster(const RasterImage& image, const std::filesystem::path& path) {
    require(image.c >= 1 && image.h >= 1 && image.w >= 1, ErrorKind::Geometry,
            "cannot write empty raster");
    require(image.count() == static_cast<std::int64_t>(image.samples.size()), ErrorKind::Validation,
            "raster sample count does not match dims");
    check_finite(image.samples, "raster");
    Writer w(path);
    w.bytes("ERFT", 4);
    w.u16(kRasterVersion);
    w.u32(static_cast<std::uint32_t>(image.c));
    w.u32(static_cast<std::uint32_t>(image.h));
    w.u32(static_cast<std::uint32_t>(image.w));
    w.f32_array(image.samples.data(), image.samples.size());
}

RasterImage read_raster(const std::filesystem::path& path) {
    Reader r(path);
    r.magic("ERFT");
    r.version(kRasterVersion);
    const auto c = r.u32(), h = r.u32(), w = r.u32();
    require(c >= 1 && h >= 1 && w >= 1, ErrorKind::Format, "raster with zero dimension");
    RasterImage img(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    r.f32_array(img.samples.data(), img.samples.size());
    return img;
}

void write_weights(const WeightArchive& archive, const std::filesystem::path& path) {
    Writer w(path);
    w.bytes("ERFW", 4);
    w.u16(kWeightsVersion);
    w.u32(static_cast<std::uint32_t>(archive.attrs().size()));
    for (const auto& [name, value] : archive.attrs()) {
        w.name(name);
        w.i64(value);
    }
    w.u32(static_cast<std::uint32_t>(archive.blobs().size()));
    for (const auto& b : archive.blobs()) {
        check_finite(b.data, "blob '" + b.name + "'");
        w.name(b.name);
        w.u32(static_cast<std::uint32_t>(b.dims.size()));
        for (int d : b.dims) w.u32(static_cast<std::uint32_t>(d));
        w.f32_array(b.data.data(), b.data.size());
    }
}

WeightArchive read_weights(const std::filesystem::path& path) {
    Reader r(path);
    r.magic("ERFW");
    r.version(kWeightsVersion);
    WeightArchive a;
    const std::uint32_t n_attrs = r.u32();
    for (std::uint32_t i = 0; i < n_attrs; ++i) {
        const std::string name = r.name();
        require(!a.attr_if(name).has_value(), ErrorKind::Validation,
                "duplicate attribute '" + name + "'");
        a.set_attr(name, r.i64());
    }
    const std::uint32_t n_blobs = r.u32();
    for (std::uint32_t i = 0; i < n_blobs; ++i) {
        const std::string name = r.name();
        const std::uint32_t ndim = r.u32();
        require(ndim >= 1 && ndim <= 8, ErrorKind::Format, "blob '" + name + "' has bad rank");
        std::vector<int> dims(ndim);
        std::int64_t count = 1;
        for (auto& d : dims) {
            d = static_cast<int>(r.u32());
            count *= d;
        }
        require(count >= 0 && count < (std::int64_t{1} << 33), ErrorKind::Format,
                "blob '" + name + "' is implausibly large");
        std::vector<float> data(static_cast<std::size_t>(count));
        r.f32_array(data.data(), data.size());
        a.add(name, std::move(dims), std::move(data));
    }
    return a;
}

} // namespace erft
