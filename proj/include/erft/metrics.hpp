#pragma once

#include <optional>
#include <span>
#include <string>

#include "erft/degrade.hpp"
#include "erft/raster.hpp"

namespace erft {

// Universal image quality index between two single-band planes, averaged
// over window x window tiles on a stride grid. Population (1/n) moments.
// Per window, with d1 = var_a + var_b and d2 = mean_a^2 + mean_b^2:
//   d1*d2 >= 1e-12  ->  Q = (2 cov / d1) * (2 mean_a mean_b / d2)
//   d1    >= 1e-12  ->  Q = 2 cov / d1          (mean-free limit)
//   otherwise the window is skipped.
double q_index(std::span<const float> a, std::span<const float> b, int h, int w, int window = 32,
               int stride = 32);

// Hypercomplex generalization: pixels are embedded into dimension
// 2^ceil(log2 C) (zero padded, C <= 8), window statistics use the
// Cayley-Dickson product and Euclidean moduli. The covariance enters through
// its modulus with the sign of its scalar part, so C = 1 reduces exactly to
// q_index. Same degenerate-window rule as q_index.
double q2n(const RasterImage& a, const RasterImage& b, int window = 32, int stride = 32);

// Spectral distortion: 1 - q2n(decimate(blur(fused)), lrms), clamped to [0,1].
double d_lambda(const RasterImage& fused, const RasterImage& lrms, const MtfKernel& ms_kernel,
                int ratio, int window = 32);

// Spatial distortion: mean over bands of |Q(fused_b, pan) - Q(lrms_b, pan_lowres)|.
double d_s(const RasterImage& fused, const RasterImage& lrms, const RasterImage& pan,
           const MtfKernel& pan_kernel, int ratio, int window = 32);

// (1 - d_lambda) * (1 - d_s); inputs must lie in [0,1].
double hqnr(double d_lambda_value, double d_s_value);

// Mean spectral angle in degrees; pixels with a near-zero norm are skipped.
double sam_degrees(const RasterImage& fused, const RasterImage& gt);

// 100 * (1/r) * sqrt(mean_b(RMSE_b^2 / mean_b(gt)^2)).
double ergas(const RasterImage& fused, const RasterImage& gt, int ratio);

// Pearson correlation of 3x3 Laplacian high-pass responses, pooled over all
// bands and pixels.
double scc(const RasterImage& fused, const RasterImage& gt);

struct MetricReport {
    std::optional<double> d_lambda;
    std::optional<double> d_s;
    std::optional<double> hqnr;
    std::optional<double> sam_deg;
    std::optional<double> ergas;
    std::optional<double> scc;
    std::optional<double> q2n;
    double wall_time_s = 0.0;
};

// Full-resolution metrics always; reduced-resolution reference metrics when
// gt is non-null. Does not fill wall_time_s.
MetricReport evaluate_report(const RasterImage& fused, const ImagePair& pair, const RasterImage* gt,
                             const MtfKernel& ms_kernel, const MtfKernel& pan_kernel,
                             int window = 32);

std::string metric_csv_header();
std::string metric_csv_row(const std::string& image_id, const MetricReport& report);

namespace detail {
// Cayley-Dickson product and conjugate on d in {1,2,4,8}.
void cd_mult(const double* x, const double* y, double* out, int d);
void cd_conj(const double* x, double* out, int d);
} // namespace detail

} // namespace erft
