#pragma once

#include <cstdint>
#include <vector>

#include "erft/raster.hpp"
#include "erft/tensor.hpp"

namespace erft {

// Per-band separable Gaussian approximation of a sensor MTF, pinned so the
// kernel's frequency response at the low-resolution Nyquist f = 1/(2r)
// equals the band's gain: sigma_b = (r/pi) * sqrt(2 * ln(1/G_b)).
struct MtfKernel {
    int ratio = 4;
    std::vector<float> gains;              // one per band, in (0,1)
    std::vector<double> sigmas;            // derived, one per band
    std::vector<std::vector<float>> taps;  // normalized odd-length 1-D taps per band
    int bands() const { return static_cast<int>(taps.size()); }
    int support() const { return taps.empty() ? 0 : static_cast<int>(taps[0].size()); }
};

// Default Nyquist gains (conventional values; configurable everywhere).
inline constexpr float kDefaultMsGain = 0.30f;
inline constexpr float kDefaultPanGain = 0.15f;

// m = 0 picks the default support 2*ceil(3*max sigma)+1; an explicit m must
// be odd and at least that large.
MtfKernel build_mtf_kernel(int ratio, const std::vector<float>& gains, int m = 0);

// Per-band blur, symmetric-reflect boundary. The raster and tensor paths run
// the same kernels bit-for-bit. A 1-band kernel broadcasts across bands.
RasterImage mtf_blur(const RasterImage& image, const MtfKernel& kernel);
NodeId mtf_blur(Tape& tape, NodeId image, const MtfKernel& kernel);

// Keep samples at rows/cols == offset (mod r); offset < 0 means floor(r/2).
RasterImage decimate(const RasterImage& image, int ratio, int offset = -1);

struct WaldTriple {
    ImagePair pair;  // degraded inputs at ratio r
    RasterImage gt;  // the original MS, ground truth at PAN scale
};

// Reduced-scale pair construction: LRMS from the ground-truth MS, PAN from
// the native-resolution panchromatic, both through their MTF kernels.
WaldTriple wald_simulate(const RasterImage& gt_ms, const RasterImage& pan_hr,
                         const MtfKernel& ms_kernel, const MtfKernel& pan_kernel, int ratio);

struct SceneImages {
    RasterImage gt_ms;   // C x H x W
    RasterImage pan_hr;  // rH x rW, carries sub-GT-pixel detail
};

// Deterministic synthetic scene: correlated smooth blobs plus sharp
// rectangles per band; PAN is a positive-weight band average with a mild
// detail boost. Everything clipped to [0,1].
SceneImages synth_scene(std::uint64_t seed, int bands, int height, int width, int ratio);

// Per-band radiometric change standing in for a different sensor.
struct SensorShift {
    std::vector<float> gain;    // g_b > 0
    std::vector<float> offset;  // o_b
    std::vector<float> gamma;   // gamma_b > 0
    static SensorShift uniform(int bands, float g, float o, float gam);
};

// x -> clip(g_b * x^gamma_b + o_b, 0, 1) per band.
RasterImage apply_sensor_shift(const RasterImage& image, const SensorShift& shift);

} // namespace erft
