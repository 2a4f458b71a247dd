#include "erft/degrade.hpp"

#include <algorithm>
#include <cmath>

#include "erft/rng.hpp"

namespace erft {

MtfKernel build_mtf_kernel(int ratio, const std::vector<float>& gains, int m) {
    require(ratio >= 2, ErrorKind::Config, "mtf kernel ratio must be >= 2");
    require(!gains.empty(), ErrorKind::Config, "mtf kernel needs at least one band gain");
    MtfKernel k;
    k.ratio = ratio;
    k.gains = gains;
    double max_sigma = 0.0;
    for (float g : gains) {
        require(g > 0.0f && g < 1.0f, ErrorKind::Config,
                "mtf Nyquist gain must lie in (0,1), got " + std::to_string(g));
        const double sigma = (ratio / 3.141592653589793) * std::sqrt(2.0 * std::log(1.0 / g));
        k.sigmas.push_back(sigma);
        max_sigma = std::max(max_sigma, sigma);
    }
    const int min_m = 2 * static_cast<int>(std::ceil(3.0 * max_sigma)) + 1;
    if (m == 0) m = min_m;
    require(m % 2 == 1, ErrorKind::Config, "mtf kernel support must be odd");
    require(m >= min_m, ErrorKind::Config,
            "mtf kernel support " + std::to_string(m) + " below minimum " + std::to_string(min_m));
    for (double sigma : k.sigmas) {
        const int p = m / 2;
        std::vector<double> t(static_cast<std::size_t>(m));
        double sum = 0.0;
        for (int i = -p; i <= p; ++i) {
            t[static_cast<std::size_t>(i + p)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
            sum += t[static_cast<std::size_t>(i + p)];
        }
        std::vector<float> taps(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i)
            taps[static_cast<std::size_t>(i)] = static_cast<float>(t[static_cast<std::size_t>(i)] / sum);
        k.taps.push_back(std::move(taps));
    }
    return k;
}

RasterImage mtf_blur(const RasterImage& image, const MtfKernel& kernel) {
    require(kernel.bands() == image.c || kernel.bands() == 1, ErrorKind::Geometry,
            "mtf_blur: kernel has " + std::to_string(kernel.bands()) + " bands, image has " +
                std::to_string(image.c));
    RasterImage out(image.c, image.h, image.w);
    std::vector<float> tmp(static_cast<std::size_t>(image.h) * image.w);
    for (int b = 0; b < image.c; ++b) {
        const auto& taps = kernel.taps[kernel.bands() == 1 ? 0 : static_cast<std::size_t>(b)];
        detail::blur_axis(image.plane(b), tmp.data(), image.h, image.w, taps, 1);
        detail::blur_axis(tmp.data(), out.plane(b), image.h, image.w, taps, 0);
    }
    return out;
}

NodeId mtf_blur(Tape& tape, NodeId image, const MtfKernel& kernel) {
    const int c = tape.value(image).shape().c;
    require(kernel.bands() == c || kernel.bands() == 1, ErrorKind::Geometry,
            "mtf_blur: kernel has " + std::to_string(kernel.bands()) + " bands, tensor has " +
                std::to_string(c));
    return band_blur(tape, image, kernel.taps);
}

RasterImage decimate(const RasterImage& image, int ratio, int offset) {
    require(ratio >= 1, ErrorKind::Config, "decimate: ratio must be >= 1");
    require(image.h % ratio == 0 && image.w % ratio == 0, ErrorKind::Geometry,
            "decimate: " + image.dims() + " not divisible by ratio " + std::to_string(ratio));
    if (offset < 0) offset = ratio / 2;
    require(offset < ratio, ErrorKind::Config, "decimate: offset must be < ratio");
    RasterImage out(image.c, image.h / ratio, image.w / ratio);
    for (int b = 0; b < image.c; ++b)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.at(b, y, x) = image.at(b, y * ratio + offset, x * ratio + offset);
    return out;
}

WaldTriple wald_simulate(const RasterImage& gt_ms, const RasterImage& pan_hr,
                         const MtfKernel& ms_kernel, const MtfKernel& pan_kernel, int ratio) {
    require(pan_hr.c == 1, ErrorKind::Geometry, "wald_simulate: PAN must be single-band");
    require(pan_hr.h == ratio * gt_ms.h && pan_hr.w == ratio * gt_ms.w, ErrorKind::Geometry,
            "wald_simulate: native PAN " + pan_hr.dims() + " must be " + std::to_string(ratio) +
                "x the GT " + gt_ms.dims());
    RasterImage lrms = decimate(mtf_blur(gt_ms, ms_kernel), ratio);
    RasterImage pan = decimate(mtf_blur(pan_hr, pan_kernel), ratio);
    WaldTriple t{validate_pair(std::move(pan), std::move(lrms), ratio), gt_ms};
    return t;
}

namespace {

void add_blob(std::vector<float>& field, int h, int w, SplitMix64& rng, float amp_scale) {
    const float cy = rng.uniform(0.0f, static_cast<float>(h));
    const float cx = rng.uniform(0.0f, static_cast<float>(w));
    const float rad = rng.uniform(static_cast<float>(h) / 32.0f, static_cast<float>(h) / 6.0f);
    const float amp = rng.uniform(-0.5f, 0.5f) * amp_scale;
    const int y0 = std::max(0, static_cast<int>(cy - 3 * rad));
    const int y1 = std::min(h, static_cast<int>(cy + 3 * rad) + 1);
    const int x0 = std::max(0, static_cast<int>(cx - 3 * rad));
    const int x1 = std::min(w, static_cast<int>(cx + 3 * rad) + 1);
    const float inv = 1.0f / (2.0f * rad * rad);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
            const float dy = y - cy, dx = x - cx;
            field[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-(dy * dy + dx * dx) * inv);
        }
}

void add_rect(std::vector<float>& field, int h, int w, SplitMix64& rng, float amp_scale) {
    const int rh = 2 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(h / 4)));
    const int rw = 2 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(w / 4)));
    const int y0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(std::max(1, h - rh))));
    const int x0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(std::max(1, w - rw))));
    const float amp = rng.uniform(-0.4f, 0.4f) * amp_scale;
    for (int y = y0; y < y0 + rh; ++y)
        for (int x = x0; x < x0 + rw; ++x) field[static_cast<std::size_t>(y) * w + x] += amp;
}

} // namespace

SceneImages synth_scene(std::uint64_t seed, int bands, int height, int width, int ratio) {
    require(bands >= 1, ErrorKind::Config, "synth_scene: bands must be >= 1");
    require(height % ratio == 0 && width % ratio == 0, ErrorKind::Geometry,
            "synth_scene: size must be divisible by the ratio");
    const int nh = height * ratio, nw = width * ratio;
    SplitMix64 rng(derive_seed(seed, "scene"));

    std::vector<float> shared(static_cast<std::size_t>(nh) * nw, 0.0f);
    for (int i = 0; i < 24; ++i) add_blob(shared, nh, nw, rng, 1.0f);
    for (int i = 0; i < 10; ++i) add_rect(shared, nh, nw, rng, 1.0f);

    std::vector<std::vector<float>> native(static_cast<std::size_t>(bands));
    for (int b = 0; b < bands; ++b) {
        auto& band = native[static_cast<std::size_t>(b)];
        band.assign(static_cast<std::size_t>(nh) * nw, 0.0f);
        const float base = rng.uniform(0.25f, 0.6f);
        for (int i = 0; i < 4; ++i) add_blob(band, nh, nw, rng, 0.35f);
        for (int i = 0; i < 2; ++i) add_rect(band, nh, nw, rng, 0.35f);
        for (std::size_t i = 0; i < band.size(); ++i)
            band[i] = std::clamp(base + 0.55f * shared[i] + band[i], 0.0f, 1.0f);
    }

    // PAN: positive-weight band average, then a mild unsharp-mask detail boost.
    std::vector<float> alpha(static_cast<std::size_t>(bands));
    float alpha_sum = 0.0f;
    for (auto& a : alpha) {
        a = rng.uniform(0.5f, 1.5f);
        alpha_sum += a;
    }
    RasterImage pan_hr(1, nh, nw);
    for (int b = 0; b < bands; ++b) {
        const float wgt = alpha[static_cast<std::size_t>(b)] / alpha_sum;
        const auto& band = native[static_cast<std::size_t>(b)];
        for (std::size_t i = 0; i < band.size(); ++i) pan_hr.samples[i] += wgt * band[i];
    }
    {
        const std::vector<float> smooth_taps{0.25f, 0.5f, 0.25f};
        std::vector<float> tmp(pan_hr.samples.size());
        std::vector<float> sm(pan_hr.samples.size());
        detail::blur_axis(pan_hr.samples.data(), tmp.data(), nh, nw, smooth_taps, 1);
        detail::blur_axis(tmp.data(), sm.data(), nh, nw, smooth_taps, 0);
        for (std::size_t i = 0; i < pan_hr.samples.size(); ++i)
            pan_hr.samples[i] =
                std::clamp(pan_hr.samples[i] + 0.8f * (pan_hr.samples[i] - sm[i]), 0.0f, 1.0f);
    }

    SceneImages s;
    s.pan_hr = std::move(pan_hr);
    s.gt_ms = RasterImage(bands, height, width);
    const float inv_area = 1.0f / static_cast<float>(ratio * ratio);
    for (int b = 0; b < bands; ++b) {
        const auto& band = native[static_cast<std::size_t>(b)];
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                float acc = 0.0f;
                for (int dy = 0; dy < ratio; ++dy)
                    for (int dx = 0; dx < ratio; ++dx)
                        acc += band[static_cast<std::size_t>(y * ratio + dy) * nw + x * ratio + dx];
                s.gt_ms.at(b, y, x) = std::clamp(acc * inv_area, 0.0f, 1.0f);
            }
    }
    return s;
}

SensorShift SensorShift::uniform(int bands, float g, float o, float gam) {
    SensorShift s;
    s.gain.assign(static_cast<std::size_t>(bands), g);
    s.offset.assign(static_cast<std::size_t>(bands), o);
    s.gamma.assign(static_cast<std::size_t>(bands), gam);
    return s;
}

RasterImage apply_sensor_shift(const RasterImage& image, const SensorShift& shift) {
    require(static_cast<int>(shift.gain.size()) == image.c &&
                shift.offset.size() == shift.gain.size() && shift.gamma.size() == shift.gain.size(),
            ErrorKind::Geometry, "sensor shift bands do not match image bands");
    RasterImage out(image.c, image.h, image.w);
    for (int b = 0; b < image.c; ++b) {
        const float g = shift.gain[static_cast<std::size_t>(b)];
        const float o = shift.offset[static_cast<std::size_t>(b)];
        const float gam = shift.gamma[static_cast<std::size_t>(b)];
        require(g > 0.0f && gam > 0.0f, ErrorKind::Config, "sensor shift gain/gamma must be > 0");
        const float* src = image.plane(b);
        float* dst = out.plane(b);
        const std::int64_t n = static_cast<std::int64_t>(image.h) * image.w;
        for (std::int64_t i = 0; i < n; ++i) {
            const float x = std::max(src[i], 0.0f);
            dst[i] = std::clamp(g * std::pow(x, gam) + o, 0.0f, 1.0f);
        }
    }
    return out;
}

} // namespace erft
