#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "erft/raster.hpp"
#include "erft/rng.hpp"

using namespace erft;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    const fs::path dir = fs::temp_directory_path() / "erft_raster_tests";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
}

RasterImage random_raster(int c, int h, int w, std::uint64_t seed) {
    RasterImage img(c, h, w);
    SplitMix64 rng(seed);
    for (float& v : img.samples) v = rng.uniform(0.0f, 1.0f);
    return img;
}

} // namespace

TEST_SUITE("raster.files") {
    TEST_CASE("1x1x1 raster has the documented byte layout") {
        RasterImage img(1, 1, 1);
        img.samples[0] = 0.5f;
        const auto path = temp_file("tiny.erft");
        write_raster(img, path);
        const auto bytes = file_bytes(path);
        const std::vector<unsigned char> expect = {'E', 'R', 'F', 'T',       // magic
                                                   0x01, 0x00,               // version
                                                   0x01, 0x00, 0x00, 0x00,   // C
                                                   0x01, 0x00, 0x00, 0x00,   // H
                                                   0x01, 0x00, 0x00, 0x00,   // W
                                                   0x00, 0x00, 0x00, 0x3F};  // 0.5f LE
        CHECK(bytes == expect);
    }

    TEST_CASE("random raster round-trips bit-exactly") {
        const RasterImage img = random_raster(8, 16, 16, 7);
        const auto path = temp_file("roundtrip.erft");
        write_raster(img, path);
        const RasterImage back = read_raster(path);
        CHECK(back.c == img.c);
        CHECK(back.h == img.h);
        CHECK(back.w == img.w);
        CHECK(back.samples == img.samples);
    }

    TEST_CASE("bad magic is a format error") {
        const auto path = temp_file("badmagic.erft");
        std::ofstream f(path, std::ios::binary);
        f << "XXXX" << std::string(18, '\0');
        f.close();
        try {
            read_raster(path);
            FAIL("expected a format error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Format);
        }
    }

    TEST_CASE("truncated file is an I/O error") {
        const auto path = temp_file("short.erft");
        write_raster(random_raster(2, 4, 4, 8), path);
        const auto bytes = file_bytes(path);
        std::ofstream f(path, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size() - 10));
        f.close();
        try {
            read_raster(path);
            FAIL("expected an I/O error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Io);
        }
    }

    TEST_CASE("non-finite sample on write is a validation error") {
        RasterImage img(1, 1, 2);
        img.samples[1] = std::numeric_limits<float>::quiet_NaN();
        try {
            write_raster(img, temp_file("nan.erft"));
            FAIL("expected a validation error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Validation);
        }
    }
}

TEST_SUITE("raster.weights") {
    TEST_CASE("empty archive round-trips") {
        WeightArchive a;
        const auto path = temp_file("empty.erfw");
        write_weights(a, path);
        const WeightArchive back = read_weights(path);
        CHECK(back.blobs().empty());
        CHECK(back.attrs().empty());
    }

    TEST_CASE("archive with one 3x2 blob round-trips bit-exactly") {
        WeightArchive a;
        a.set_attr("width", 7);
        a.add("w", {3, 2}, {1.5f, -2.25f, 0.0f, 3.0f, -0.125f, 9.75f});
        const auto path = temp_file("one.erfw");
        write_weights(a, path);
        const WeightArchive back = read_weights(path);
        CHECK(back.attr("width") == 7);
        CHECK(back.blob("w").dims == std::vector<int>{3, 2});
        CHECK(back.blob("w").data == a.blob("w").data);
    }

    TEST_CASE("duplicate blob names are a validation error") {
        WeightArchive a;
        a.add("w", {1}, {1.0f});
        CHECK_THROWS_AS(a.add("w", {1}, {2.0f}), Error);
    }

    TEST_CASE("version mismatch is a format error") {
        const auto path = temp_file("badver.erfw");
        WeightArchive a;
        write_weights(a, path);
        auto bytes = file_bytes(path);
        bytes[4] = 0x42; // bump the version field
        std::ofstream f(path, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        f.close();
        try {
            read_weights(path);
            FAIL("expected a format error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Format);
        }
    }
}

TEST_SUITE("raster.pairs") {
    TEST_CASE("512x512 PAN with 8x128x128 LRMS at ratio 4 validates") {
        const ImagePair p = validate_pair(RasterImage(1, 512, 512), RasterImage(8, 128, 128), 4);
        CHECK(p.ratio == 4);
        CHECK(p.pan.h == 512);
    }

    TEST_CASE("misaligned PAN is a geometry error naming both shapes") {
        try {
            validate_pair(RasterImage(1, 510, 512), RasterImage(8, 128, 128), 4);
            FAIL("expected a geometry error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Geometry);
            const std::string msg = e.what();
            CHECK(msg.find("1x510x512") != std::string::npos);
            CHECK(msg.find("8x128x128") != std::string::npos);
        }
    }

    TEST_CASE("4000x4000 PAN with 8x1000x1000 LRMS validates") {
        const ImagePair p = validate_pair(RasterImage(1, 4000, 4000), RasterImage(8, 1000, 1000), 4);
        CHECK(p.lrms.w == 1000);
    }
}
