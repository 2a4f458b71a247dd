#include <doctest.h>

#include <cmath>
#include <complex>

#include "erft/degrade.hpp"
#include "erft/rng.hpp"
#include "oracles.hpp"

using namespace erft;

namespace {

RasterImage random_raster(int c, int h, int w, std::uint64_t seed) {
    RasterImage img(c, h, w);
    SplitMix64 rng(seed);
    for (float& v : img.samples) v = rng.uniform(0.0f, 1.0f);
    return img;
}

double pearson(const float* a, const float* b, std::int64_t n) {
    double ma = 0, mb = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double va = 0, vb = 0, cov = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
        cov += (a[i] - ma) * (b[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

} // namespace

TEST_SUITE("degrade.kernel") {
    TEST_CASE("r=4 G=0.3 pins sigma and the default support") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f});
        CHECK(k.sigmas[0] == doctest::Approx(1.9757).epsilon(1e-3));
        CHECK(k.support() == 13);
    }

    TEST_CASE("taps are normalized and 180-degree symmetric") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f, 0.15f, 0.6f});
        for (const auto& taps : k.taps) {
            double sum = 0.0;
            for (float t : taps) sum += t;
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            for (std::size_t i = 0; i < taps.size(); ++i)
                CHECK(taps[i] == taps[taps.size() - 1 - i]);
        }
    }

    TEST_CASE("Fourier magnitude at the low-res Nyquist equals the gain") {
        // DTFT of the discrete taps at f = 1/(2r) cycles/pixel.
        for (const float gain : {0.15f, 0.3f, 0.5f}) {
            const MtfKernel k = build_mtf_kernel(4, {gain});
            const double f = 1.0 / (2.0 * k.ratio);
            std::complex<double> acc(0.0, 0.0);
            const int p = k.support() / 2;
            for (int i = -p; i <= p; ++i)
                acc += static_cast<double>(k.taps[0][static_cast<std::size_t>(i + p)]) *
                       std::exp(std::complex<double>(0.0, -2.0 * 3.141592653589793 * f * i));
            CHECK(std::abs(acc) == doctest::Approx(gain).epsilon(1e-2));
        }
    }

    TEST_CASE("gain outside (0,1) is a configuration error") {
        CHECK_THROWS_AS(build_mtf_kernel(4, {1.0f}), Error);
        CHECK_THROWS_AS(build_mtf_kernel(4, {0.0f}), Error);
    }
}

TEST_SUITE("degrade.blur") {
    TEST_CASE("constant image is preserved") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f});
        const RasterImage img(3, 16, 16, 0.42f);
        const RasterImage out = mtf_blur(img, k);
        for (float v : out.samples) CHECK(v == doctest::Approx(0.42f).epsilon(1e-6));
    }

    TEST_CASE("impulse reproduces the separable taps") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f});
        RasterImage img(1, 33, 33);
        img.at(0, 16, 16) = 1.0f;
        const RasterImage out = mtf_blur(img, k);
        const int p = k.support() / 2;
        for (int dy = -p; dy <= p; ++dy)
            for (int dx = -p; dx <= p; ++dx)
                CHECK(out.at(0, 16 + dy, 16 + dx) ==
                      doctest::Approx(k.taps[0][static_cast<std::size_t>(dy + p)] *
                                      k.taps[0][static_cast<std::size_t>(dx + p)])
                          .epsilon(1e-6));
    }

    TEST_CASE("random image matches a dense loop oracle") {
        const MtfKernel k = build_mtf_kernel(2, {0.4f});
        const RasterImage img = random_raster(2, 12, 10, 77);
        const RasterImage out = mtf_blur(img, k);
        const int m = k.support(), p = m / 2;
        double max_abs = 0.0;
        for (int b = 0; b < img.c; ++b)
            for (int y = 0; y < img.h; ++y)
                for (int x = 0; x < img.w; ++x) {
                    double acc = 0.0;
                    for (int ty = 0; ty < m; ++ty)
                        for (int tx = 0; tx < m; ++tx)
                            acc += static_cast<double>(k.taps[0][static_cast<std::size_t>(ty)]) *
                                   k.taps[0][static_cast<std::size_t>(tx)] *
                                   img.at(b, oracle::reflect(y + ty - p, img.h),
                                          oracle::reflect(x + tx - p, img.w));
                    max_abs = std::max(max_abs, std::abs(acc - out.at(b, y, x)));
                }
        CHECK(max_abs <= 1e-5);
    }

    TEST_CASE("band mismatch is a dimension error") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f, 0.3f});
        CHECK_THROWS_AS(mtf_blur(RasterImage(3, 8, 8), k), Error);
    }

    TEST_CASE("support larger than the image still matches the loop oracle") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f}); // 13 taps
        REQUIRE(k.support() == 13);
        const RasterImage img = random_raster(1, 4, 5, 79);
        const RasterImage out = mtf_blur(img, k);
        const int m = k.support(), p = m / 2;
        double max_abs = 0.0;
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double acc = 0.0;
                for (int ty = 0; ty < m; ++ty)
                    for (int tx = 0; tx < m; ++tx)
                        acc += static_cast<double>(k.taps[0][static_cast<std::size_t>(ty)]) *
                               k.taps[0][static_cast<std::size_t>(tx)] *
                               img.at(0, oracle::reflect(y + ty - p, img.h),
                                      oracle::reflect(x + tx - p, img.w));
                max_abs = std::max(max_abs, std::abs(acc - out.at(0, y, x)));
            }
        CHECK(max_abs <= 1e-5);
    }

    TEST_CASE("raster and tensor blur paths are bit-identical") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f, 0.25f});
        const RasterImage img = random_raster(2, 16, 16, 78);
        const RasterImage via_raster = mtf_blur(img, k);
        Tape t;
        Tensor in(Shape{1, 2, 16, 16});
        std::copy(img.samples.begin(), img.samples.end(), in.data().begin());
        const NodeId out = mtf_blur(t, t.leaf(std::move(in)), k);
        for (std::size_t i = 0; i < via_raster.samples.size(); ++i)
            CHECK(via_raster.samples[i] == t.value(out).data()[i]);
    }
}

TEST_SUITE("degrade.decimate") {
    TEST_CASE("r=4 picks rows and cols {2, 6} from an 8x8 input") {
        RasterImage img(1, 8, 8);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) img.at(0, y, x) = static_cast<float>(10 * y + x);
        const RasterImage out = decimate(img, 4);
        CHECK(out.h == 2);
        CHECK(out.at(0, 0, 0) == 22.0f);
        CHECK(out.at(0, 0, 1) == 26.0f);
        CHECK(out.at(0, 1, 0) == 62.0f);
        CHECK(out.at(0, 1, 1) == 66.0f);
    }

    TEST_CASE("constants survive decimation and the blur-decimate chain") {
        const RasterImage img(2, 16, 16, 0.37f);
        const RasterImage dec = decimate(img, 4);
        for (float v : dec.samples) CHECK(v == 0.37f);
        const MtfKernel k = build_mtf_kernel(4, {0.3f});
        const RasterImage chain = decimate(mtf_blur(img, k), 4);
        for (float v : chain.samples) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
    }

    TEST_CASE("non-divisible dims are a geometry error") {
        CHECK_THROWS_AS(decimate(RasterImage(1, 9, 8), 4), Error);
    }
}

TEST_SUITE("degrade.wald") {
    TEST_CASE("shapes follow the protocol") {
        const MtfKernel ms_k = build_mtf_kernel(4, {0.3f});
        const MtfKernel pan_k = build_mtf_kernel(4, {0.15f});
        const RasterImage gt = random_raster(8, 256, 256, 90);
        const RasterImage pan = random_raster(1, 1024, 1024, 91);
        const WaldTriple t = wald_simulate(gt, pan, ms_k, pan_k, 4);
        CHECK(t.pair.lrms.c == 8);
        CHECK(t.pair.lrms.h == 64);
        CHECK(t.pair.pan.h == 256);
        CHECK(t.gt.h == 256);
    }

    TEST_CASE("re-running is deterministic") {
        const MtfKernel ms_k = build_mtf_kernel(4, {0.3f});
        const MtfKernel pan_k = build_mtf_kernel(4, {0.15f});
        const RasterImage gt = random_raster(2, 64, 64, 92);
        const RasterImage pan = random_raster(1, 256, 256, 93);
        const WaldTriple a = wald_simulate(gt, pan, ms_k, pan_k, 4);
        const WaldTriple b = wald_simulate(gt, pan, ms_k, pan_k, 4);
        CHECK(a.pair.lrms.samples == b.pair.lrms.samples);
        CHECK(a.pair.pan.samples == b.pair.pan.samples);
    }
}

TEST_SUITE("degrade.scene") {
    TEST_CASE("same seed gives bit-identical scenes") {
        const SceneImages a = synth_scene(5, 4, 64, 64, 4);
        const SceneImages b = synth_scene(5, 4, 64, 64, 4);
        CHECK(a.gt_ms.samples == b.gt_ms.samples);
        CHECK(a.pan_hr.samples == b.pan_hr.samples);
        const SceneImages c = synth_scene(6, 4, 64, 64, 4);
        CHECK(a.gt_ms.samples != c.gt_ms.samples);
    }

    TEST_CASE("PAN and bands stay in [0,1]") {
        const SceneImages s = synth_scene(9, 3, 64, 64, 4);
        for (float v : s.pan_hr.samples) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        for (float v : s.gt_ms.samples) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    TEST_CASE("bands correlate with PAN across seeds") {
        // Seed-averaged Pearson correlation of each band against the PAN
        // block-averaged onto the GT grid.
        double mean_corr = 0.0;
        int count = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const SceneImages s = synth_scene(seed, 4, 64, 64, 4);
            RasterImage pan_lo(1, 64, 64);
            for (int y = 0; y < 64; ++y)
                for (int x = 0; x < 64; ++x) {
                    float acc = 0.0f;
                    for (int dy = 0; dy < 4; ++dy)
                        for (int dx = 0; dx < 4; ++dx)
                            acc += s.pan_hr.at(0, 4 * y + dy, 4 * x + dx);
                    pan_lo.at(0, y, x) = acc / 16.0f;
                }
            for (int b = 0; b < 4; ++b) {
                mean_corr += pearson(s.gt_ms.plane(b), pan_lo.plane(0), 64 * 64);
                ++count;
            }
        }
        CHECK(mean_corr / count >= 0.5);
    }
}

TEST_SUITE("degrade.shift") {
    TEST_CASE("identity shift leaves the image unchanged") {
        const RasterImage img = random_raster(3, 16, 16, 95);
        const RasterImage out = apply_sensor_shift(img, SensorShift::uniform(3, 1.0f, 0.0f, 1.0f));
        for (std::size_t i = 0; i < img.samples.size(); ++i)
            CHECK(out.samples[i] == doctest::Approx(img.samples[i]).epsilon(1e-6));
    }

    TEST_CASE("gain and offset act affinely on constants") {
        const RasterImage img(2, 8, 8, 0.5f);
        const RasterImage out = apply_sensor_shift(img, SensorShift::uniform(2, 0.8f, 0.05f, 1.0f));
        for (float v : out.samples) CHECK(v == doctest::Approx(0.45f).epsilon(1e-6));
    }

    TEST_CASE("band mismatch is a geometry error") {
        CHECK_THROWS_AS(apply_sensor_shift(RasterImage(3, 4, 4), SensorShift::uniform(2, 1, 0, 1)),
                        Error);
    }
}
