#include "erft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace erft {

namespace detail {

void cd_conj(const double* x, double* out, int d) {
    out[0] = x[0];
    for (int i = 1; i < d; ++i) out[i] = -x[i];
}

// (a,b)(c,d) = (ac - conj(d) b, d a + b conj(c))
void cd_mult(const double* x, const double* y, double* out, int d) {
    if (d == 1) {
        out[0] = x[0] * y[0];
        return;
    }
    const int h = d / 2;
    const double* a = x;
    const double* b = x + h;
    const double* c = y;
    const double* dd = y + h;
    double t1[8], t2[8], cj[8];
    cd_mult(a, c, t1, h);
    cd_conj(dd, cj, h);
    cd_mult(cj, b, t2, h);
    for (int i = 0; i < h; ++i) out[i] = t1[i] - t2[i];
    cd_mult(dd, a, t1, h);
    cd_conj(c, cj, h);
    cd_mult(b, cj, t2, h);
    for (int i = 0; i < h; ++i) out[h + i] = t1[i] + t2[i];
}

} // namespace detail

namespace {

constexpr double kDegenEps = 1e-12;

struct WindowMean {
    double sum = 0.0;
    long count = 0;
    void add(double q) {
        sum += q;
        ++count;
    }
    double mean(const char* what) const {
        require(count > 0, ErrorKind::MetricUndefined,
                std::string(what) + ": every window was degenerate");
        return sum / static_cast<double>(count);
    }
};

void check_window(int h, int w, int window, int stride) {
    require(window >= 1 && window <= std::min(h, w), ErrorKind::Config,
            "window " + std::to_string(window) + " does not fit a " + std::to_string(h) + "x" +
                std::to_string(w) + " image");
    require(stride >= 1, ErrorKind::Config, "stride must be >= 1");
}

std::string fmt_opt(const std::optional<double>& v, const char* spec) {
    if (!v) return "";
    char buf[48];
    std::snprintf(buf, sizeof(buf), spec, *v);
    return buf;
}

} // namespace

double q_index(std::span<const float> a, std::span<const float> b, int h, int w, int window,
               int stride) {
    require(a.size() == b.size() && static_cast<std::int64_t>(a.size()) ==
                                        static_cast<std::int64_t>(h) * w,
            ErrorKind::Geometry, "q_index: plane sizes differ");
    check_window(h, w, window, stride);
    WindowMean wm;
    const double n = static_cast<double>(window) * window;
    for (int y0 = 0; y0 + window <= h; y0 += stride) {
        for (int x0 = 0; x0 + window <= w; x0 += stride) {
            double sa = 0.0, sb = 0.0;
            for (int y = y0; y < y0 + window; ++y)
                for (int x = x0; x < x0 + window; ++x) {
                    sa += a[static_cast<std::size_t>(y) * w + x];
                    sb += b[static_cast<std::size_t>(y) * w + x];
                }
            const double ma = sa / n, mb = sb / n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (int y = y0; y < y0 + window; ++y)
                for (int x = x0; x < x0 + window; ++x) {
                    const double da = a[static_cast<std::size_t>(y) * w + x] - ma;
                    const double db = b[static_cast<std::size_t>(y) * w + x] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va /= n;
            vb /= n;
            cov /= n;
            const double d1 = va + vb;
            const double d2 = ma * ma + mb * mb;
            if (d1 * d2 >= kDegenEps) {
                wm.add((2.0 * cov / d1) * (2.0 * ma * mb / d2));
            } else if (d1 >= kDegenEps) {
                wm.add(2.0 * cov / d1);
            }
        }
    }
    return wm.mean("q_index");
}

double q2n(const RasterImage& a, const RasterImage& b, int window, int stride) {
    require(a.c == b.c && a.h == b.h && a.w == b.w, ErrorKind::Geometry,
            "q2n: image dims differ (" + a.dims() + " vs " + b.dims() + ")");
    require(a.c <= 8, ErrorKind::Config,
            "q2n supports at most 8 bands (modulus multiplicativity fails beyond dimension 8)");
    check_window(a.h, a.w, window, stride);
    int d = 1;
    while (d < a.c) d *= 2;
    const double n = static_cast<double>(window) * window;

    WindowMean wm;
    std::vector<double> z1(static_cast<std::size_t>(d)), z2(static_cast<std::size_t>(d));
    for (int y0 = 0; y0 + window <= a.h; y0 += stride) {
        for (int x0 = 0; x0 + window <= a.w; x0 += stride) {
            double mu1[8] = {0}, mu2[8] = {0};
            for (int y = y0; y < y0 + window; ++y)
                for (int x = x0; x < x0 + window; ++x)
                    for (int c = 0; c < a.c; ++c) {
                        mu1[c] += a.at(c, y, x);
                        mu2[c] += b.at(c, y, x);
                    }
            for (int c = 0; c < d; ++c) {
                mu1[c] /= n;
                mu2[c] /= n;
            }
            double var1 = 0.0, var2 = 0.0;
            double cov[8] = {0}, prod[8];
            for (int y = y0; y < y0 + window; ++y)
                for (int x = x0; x < x0 + window; ++x) {
                    for (int c = 0; c < d; ++c) {
                        z1[static_cast<std::size_t>(c)] = (c < a.c ? a.at(c, y, x) : 0.0) - mu1[c];
                        z2[static_cast<std::size_t>(c)] = (c < a.c ? b.at(c, y, x) : 0.0) - mu2[c];
                        var1 += z1[static_cast<std::size_t>(c)] * z1[static_cast<std::size_t>(c)];
                        var2 += z2[static_cast<std::size_t>(c)] * z2[static_cast<std::size_t>(c)];
                    }
                    double cj[8];
                    detail::cd_conj(z2.data(), cj, d);
                    detail::cd_mult(z1.data(), cj, prod, d);
                    for (int c = 0; c < d; ++c) cov[c] += prod[c];
                }
            var1 /= n;
            var2 /= n;
            double cov_mod = 0.0, lum = 0.0, m1 = 0.0, m2 = 0.0;
            for (int c = 0; c < d; ++c) {
                cov[c] /= n;
                cov_mod += cov[c] * cov[c];
                lum += mu1[c] * mu2[c];
                m1 += mu1[c] * mu1[c];
                m2 += mu2[c] * mu2[c];
            }
            cov_mod = std::sqrt(cov_mod);
            const double signed_mod = cov[0] < 0.0 ? -cov_mod : cov_mod;
            const double d1 = var1 + var2;
            const double d2 = m1 + m2;
            if (d1 * d2 >= kDegenEps) {
                wm.add((2.0 * signed_mod / d1) * (2.0 * lum / d2));
            } else if (d1 >= kDegenEps) {
                wm.add(2.0 * signed_mod / d1);
            }
        }
    }
    return wm.mean("q2n");
}

double d_lambda(const RasterImage& fused, const RasterImage& lrms, const MtfKernel& ms_kernel,
                int ratio, int window) {
    require(fused.c == lrms.c && fused.h == lrms.h * ratio && fused.w == lrms.w * ratio,
            ErrorKind::Geometry,
            "d_lambda: fused " + fused.dims() + " and LRMS " + lrms.dims() +
                " are not aligned at ratio " + std::to_string(ratio));
    const RasterImage degraded = decimate(mtf_blur(fused, ms_kernel), ratio);
    return std::clamp(1.0 - q2n(degraded, lrms, window, window), 0.0, 1.0);
}

double d_s(const RasterImage& fused, const RasterImage& lrms, const RasterImage& pan,
           const MtfKernel& pan_kernel, int ratio, int window) {
    require(pan.c == 1, ErrorKind::Geometry, "d_s: PAN must be single-band");
    require(fused.h == pan.h && fused.w == pan.w, ErrorKind::Geometry,
            "d_s: fused and PAN sizes differ");
    require(fused.c == lrms.c && fused.h == lrms.h * ratio && fused.w == lrms.w * ratio,
            ErrorKind::Geometry, "d_s: fused and LRMS are not aligned at ratio");
    const RasterImage pan_lo = decimate(mtf_blur(pan, pan_kernel), ratio);
    const std::size_t hi_n = static_cast<std::size_t>(fused.h) * fused.w;
    const std::size_t lo_n = static_cast<std::size_t>(lrms.h) * lrms.w;
    double acc = 0.0;
    for (int b = 0; b < fused.c; ++b) {
        const double q_hi = q_index({fused.plane(b), hi_n}, {pan.plane(0), hi_n}, fused.h, fused.w,
                                    window, window);
        const double q_lo = q_index({lrms.plane(b), lo_n}, {pan_lo.plane(0), lo_n}, lrms.h, lrms.w,
                                    window, window);
        acc += std::abs(q_hi - q_lo);
    }
    return std::clamp(acc / fused.c, 0.0, 1.0);
}

double hqnr(double d_lambda_value, double d_s_value) {
    require(d_lambda_value >= 0.0 && d_lambda_value <= 1.0 && d_s_value >= 0.0 && d_s_value <= 1.0,
            ErrorKind::Validation, "hqnr inputs must lie in [0,1]");
    return (1.0 - d_lambda_value) * (1.0 - d_s_value);
}

double sam_degrees(const RasterImage& fused, const RasterImage& gt) {
    require(fused.c == gt.c && fused.h == gt.h && fused.w == gt.w, ErrorKind::Geometry,
            "sam: image dims differ");
    double acc = 0.0;
    long count = 0;
    for (int y = 0; y < gt.h; ++y)
        for (int x = 0; x < gt.w; ++x) {
            double dot = 0.0, nx = 0.0, ny = 0.0;
            for (int b = 0; b < gt.c; ++b) {
                const double fv = fused.at(b, y, x), gv = gt.at(b, y, x);
                dot += fv * gv;
                nx += fv * fv;
                ny += gv * gv;
            }
            if (nx < 1e-24 || ny < 1e-24) continue; // norm < 1e-12
            acc += std::acos(std::clamp(dot / std::sqrt(nx * ny), -1.0, 1.0));
            ++count;
        }
    require(count > 0, ErrorKind::MetricUndefined, "sam: every pixel had near-zero norm");
    return acc / static_cast<double>(count) * (180.0 / 3.141592653589793);
}

double ergas(const RasterImage& fused, const RasterImage& gt, int ratio) {
    require(fused.c == gt.c && fused.h == gt.h && fused.w == gt.w, ErrorKind::Geometry,
            "ergas: image dims differ");
    require(ratio >= 1, ErrorKind::Config, "ergas: ratio must be >= 1");
    const double n = static_cast<double>(gt.h) * gt.w;
    double acc = 0.0;
    for (int b = 0; b < gt.c; ++b) {
        double mse = 0.0, mean = 0.0;
        const float* fp = fused.plane(b);
        const float* gp = gt.plane(b);
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
            const double d = static_cast<double>(fp[i]) - gp[i];
            mse += d * d;
            mean += gp[i];
        }
        mse /= n;
        mean /= n;
        require(std::abs(mean) > 1e-12, ErrorKind::MetricUndefined,
                "ergas: band " + std::to_string(b) + " of the reference has zero mean");
        acc += mse / (mean * mean);
    }
    return 100.0 / ratio * std::sqrt(acc / gt.c);
}

namespace {

// 3x3 Laplacian [[-1,-1,-1],[-1,8,-1],[-1,-1,-1]], symmetric boundary.
std::vector<double> laplacian(const RasterImage& img, int band) {
    std::vector<double> out(static_cast<std::size_t>(img.h) * img.w);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double acc = 8.0 * img.at(band, y, x);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    acc -= img.at(band, detail::reflect_index(y + dy, img.h),
                                  detail::reflect_index(x + dx, img.w));
                }
            out[static_cast<std::size_t>(y) * img.w + x] = acc;
        }
    return out;
}

} // namespace

double scc(const RasterImage& fused, const RasterImage& gt) {
    require(fused.c == gt.c && fused.h == gt.h && fused.w == gt.w, ErrorKind::Geometry,
            "scc: image dims differ");
    std::vector<double> hf, hg;
    hf.reserve(static_cast<std::size_t>(fused.count()));
    hg.reserve(static_cast<std::size_t>(fused.count()));
    for (int b = 0; b < fused.c; ++b) {
        const auto a = laplacian(fused, b);
        const auto g = laplacian(gt, b);
        hf.insert(hf.end(), a.begin(), a.end());
        hg.insert(hg.end(), g.begin(), g.end());
    }
    const double n = static_cast<double>(hf.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < hf.size(); ++i) {
        ma += hf[i];
        mb += hg[i];
    }
    ma /= n;
    mb /= n;
    double va = 0.0, vb = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < hf.size(); ++i) {
        const double da = hf[i] - ma, db = hg[i] - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    require(va > 0.0 && vb > 0.0, ErrorKind::MetricUndefined,
            "scc: a high-pass response is identically constant");
    return cov / std::sqrt(va * vb);
}

MetricReport evaluate_report(const RasterImage& fused, const ImagePair& pair, const RasterImage* gt,
                             const MtfKernel& ms_kernel, const MtfKernel& pan_kernel, int window) {
    MetricReport rep;
    rep.d_lambda = d_lambda(fused, pair.lrms, ms_kernel, pair.ratio, window);
    rep.d_s = d_s(fused, pair.lrms, pair.pan, pan_kernel, pair.ratio, window);
    rep.hqnr = hqnr(*rep.d_lambda, *rep.d_s);
    if (gt != nullptr) {
        rep.sam_deg = sam_degrees(fused, *gt);
        rep.ergas = ergas(fused, *gt, pair.ratio);
        rep.scc = scc(fused, *gt);
        rep.q2n = q2n(fused, *gt, window, window);
    }
    return rep;
}

std::string metric_csv_header() {
    return "image_id,d_lambda,d_s,hqnr,sam_deg,ergas,scc,q2n,wall_time_s";
}

std::string metric_csv_row(const std::string& image_id, const MetricReport& report) {
    std::string s = image_id;
    s += "," + fmt_opt(report.d_lambda, "%.6f");
    s += "," + fmt_opt(report.d_s, "%.6f");
    s += "," + fmt_opt(report.hqnr, "%.6f");
    s += "," + fmt_opt(report.sam_deg, "%.6f");
    s += "," + fmt_opt(report.ergas, "%.6f");
    s += "," + fmt_opt(report.scc, "%.6f");
    s += "," + fmt_opt(report.q2n, "%.6f");
    s += "," + fmt_opt(report.wall_time_s, "%.3f");
    return s;
}

} // namespace erft
