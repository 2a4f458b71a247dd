#pragma once

// Test-side reference implementations, kept independent of the library's
// compute paths: a direct double-precision evaluator for recorded tapes
// (used for finite-difference gradient checks), a brute-force convolution,
// and the bilinear sampling formula evaluated per pixel.

#include <cmath>
#include <map>
#include <vector>

#include "erft/rng.hpp"
#include "erft/tensor.hpp"

namespace oracle {

inline int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// Direct 6-nested-loop cross-correlation in double.
inline std::vector<double> conv2d_ref(const erft::Tensor& in, const erft::Tensor& ker,
                                      const erft::Tensor& bias, erft::Pad pad) {
    const auto is = in.shape();
    const int cout = ker.shape().n, cin = ker.shape().c, k = ker.shape().h, p = k / 2;
    std::vector<double> out(static_cast<std::size_t>(is.n) * cout * is.h * is.w);
    for (int n = 0; n < is.n; ++n)
        for (int co = 0; co < cout; ++co)
            for (int y = 0; y < is.h; ++y)
                for (int x = 0; x < is.w; ++x) {
                    double acc = bias.data()[static_cast<std::size_t>(co)];
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int sy = y + ky - p, sx = x + kx - p;
                                double v = 0.0;
                                if (sy >= 0 && sy < is.h && sx >= 0 && sx < is.w) {
                                    v = in.at(n, ci, sy, sx);
                                } else if (pad == erft::Pad::Reflect) {
                                    v = in.at(n, ci, reflect(sy, is.h), reflect(sx, is.w));
                                }
                                acc += v * ker.at(co, ci, ky, kx);
                            }
                    out[((static_cast<std::size_t>(n) * cout + co) * is.h + y) * is.w + x] = acc;
                }
    return out;
}

// The upsample coordinate formula, evaluated directly.
inline double upsample_ref_at(const erft::Tensor& in, int n, int c, int y, int x, int r) {
    const auto is = in.shape();
    auto sample = [&](double coord, int limit) {
        coord = std::min(std::max(coord, 0.0), static_cast<double>(limit - 1));
        return coord;
    };
    const double sy = sample((y + 0.5) / r - 0.5, is.h);
    const double sx = sample((x + 0.5) / r - 0.5, is.w);
    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, is.h - 1), x1 = std::min(x0 + 1, is.w - 1);
    const double ty = sy - y0, tx = sx - x0;
    return (1 - ty) * ((1 - tx) * in.at(n, c, y0, x0) + tx * in.at(n, c, y0, x1)) +
           ty * ((1 - tx) * in.at(n, c, y1, x0) + tx * in.at(n, c, y1, x1));
}

// Double-precision re-execution of a recorded tape, written against the
// node views only (fresh loop code, not the library kernels).
class DoubleEval {
public:
    explicit DoubleEval(const erft::Tape& tape) : tape_(tape) {}

    double scalar(erft::NodeId target) {
        std::vector<std::vector<double>> vals(static_cast<std::size_t>(tape_.size()));
        for (int id = 0; id <= target; ++id) compute(id, vals);
        return vals[static_cast<std::size_t>(target)][0];
    }

private:
    void compute(int id, std::vector<std::vector<double>>& vals) const {
        const auto nv = tape_.view(id);
        auto& out = vals[static_cast<std::size_t>(id)];
        const auto shape_of = [&](int i) { return tape_.view(i).value.shape(); };
        switch (nv.kind) {
        case erft::OpKind::Leaf: {
            const auto d = nv.value.data();
            out.assign(d.begin(), d.end());
            return;
        }
        case erft::OpKind::Conv2d: {
            const auto is = shape_of(nv.inputs[0]);
            const auto ks = shape_of(nv.inputs[1]);
            const auto& in = vals[static_cast<std::size_t>(nv.inputs[0])];
            const auto& ker = vals[static_cast<std::size_t>(nv.inputs[1])];
            const auto& bias = vals[static_cast<std::size_t>(nv.inputs[2])];
            const int cout = ks.n, cin = ks.c, k = ks.h, p = k / 2;
            out.assign(static_cast<std::size_t>(is.n) * cout * is.h * is.w, 0.0);
            for (int n = 0; n < is.n; ++n)
                for (int co = 0; co < cout; ++co)
                    for (int y = 0; y < is.h; ++y)
                        for (int x = 0; x < is.w; ++x) {
                            double acc = bias[static_cast<std::size_t>(co)];
                            for (int ci = 0; ci < cin; ++ci)
                                for (int ky = 0; ky < k; ++ky)
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int sy = y + ky - p, sx = x + kx - p;
                                        double v = 0.0;
                                        if (sy >= 0 && sy < is.h && sx >= 0 && sx < is.w)
                                            v = in[((static_cast<std::size_t>(n) * cin + ci) * is.h + sy) *
                                                       is.w +
                                                   sx];
                                        else if (nv.params.pad == erft::Pad::Reflect)
                                            v = in[((static_cast<std::size_t>(n) * cin + ci) * is.h +
                                                    reflect(sy, is.h)) *
                                                       is.w +
                                                   reflect(sx, is.w)];
                                        acc += v * ker[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k +
                                                       kx];
                                    }
                            out[((static_cast<std::size_t>(n) * cout + co) * is.h + y) * is.w + x] = acc;
                        }
            return;
        }
        case erft::OpKind::BilinearUp: {
            const auto is = shape_of(nv.inputs[0]);
            const auto& in = vals[static_cast<std::size_t>(nv.inputs[0])];
            const int r = nv.params.ratio;
            out.assign(static_cast<std::size_t>(is.n) * is.c * is.h * r * is.w * r, 0.0);
            for (int nc = 0; nc < is.n * is.c; ++nc)
                for (int y = 0; y < is.h * r; ++y)
                    for (int x = 0; x < is.w * r; ++x) {
                        double sy = (y + 0.5) / r - 0.5, sx = (x + 0.5) / r - 0.5;
                        sy = std::min(std::max(sy, 0.0), static_cast<double>(is.h - 1));
                        sx = std::min(std::max(sx, 0.0), static_cast<double>(is.w - 1));
                        const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
                        const int y1 = std::min(y0 + 1, is.h - 1), x1 = std::min(x0 + 1, is.w - 1);
                        const double ty = sy - y0, tx = sx - x0;
                        auto at = [&](int yy, int xx) {
                            return in[(static_cast<std::size_t>(nc) * is.h + yy) * is.w + xx];
                        };
                        out[(static_cast<std::size_t>(nc) * is.h * r + y) * is.w * r + x] =
                            (1 - ty) * ((1 - tx) * at(y0, x0) + tx * at(y0, x1)) +
                            ty * ((1 - tx) * at(y1, x0) + tx * at(y1, x1));
                    }
            return;
        }
        case erft::OpKind::Eltwise: {
            const auto as = shape_of(nv.inputs[0]);
            const auto bs = shape_of(nv.inputs[1]);
            const auto& a = vals[static_cast<std::size_t>(nv.inputs[0])];
            const auto& b = vals[static_cast<std::size_t>(nv.inputs[1])];
            const bool bcast = bs.c == 1 && as.c > 1;
            const std::size_t plane = static_cast<std::size_t>(as.h) * as.w;
            out.assign(a.size(), 0.0);
            for (int n = 0; n < as.n; ++n)
                for (int c = 0; c < as.c; ++c)
                    for (std::size_t i = 0; i < plane; ++i) {
                        const std::size_t ai = (static_cast<std::size_t>(n) * as.c + c) * plane + i;
                        const std::size_t bi =
                            bcast ? static_cast<std::size_t>(n) * plane + i : ai;
                        switch (nv.params.elt) {
                        case erft::Elt::Add: out[ai] = a[ai] + b[bi]; break;
                        case erft::Elt::Sub: out[ai] = a[ai] - b[bi]; break;
                        case erft::Elt::Mul: out[ai] = a[ai] * b[bi]; break;
                        case erft::Elt::DivGuard: {
                            const double d = b[bi];
                            const double mag = std::abs(d) < erft::kDivEps
                                                   ? static_cast<double>(erft::kDivEps)
                                                   : std::abs(d);
                            out[ai] = a[ai] / (d < 0.0 ? -mag : mag);
                            break;
                        }
                        }
                    }
            return;
        }
        case erft::OpKind::Relu: {
            const auto& in = vals[static_cast<std::size_t>(nv.inputs[0])];
            out.resize(in.size());
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
            return;
        }
        case erft::OpKind::L1Mean: {
            const auto& a = vals[static_cast<std::size_t>(nv.inputs[0])];
            const auto& b = vals[static_cast<std::size_t>(nv.inputs[1])];
            double acc = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
            out.assign(1, acc / static_cast<double>(a.size()));
            return;
        }
        case erft::OpKind::ConcatChannels: {
            const auto as = shape_of(nv.inputs[0]);
            const auto bs = shape_of(nv.inputs[1]);
            const auto& a = vals[static_cast<std::size_t>(nv.inputs[0])];
            const auto& b = vals[static_cast<std::size_t>(nv.inputs[1])];
            const std::size_t plane = static_cast<std::size_t>(as.h) * as.w;
            out.resize(a.size() + b.size());
            for (int n = 0; n < as.n; ++n) {
                std::copy(a.begin() + static_cast<std::ptrdiff_t>(n * as.c * plane),
                          a.begin() + static_cast<std::ptrdiff_t>((n + 1) * as.c * plane),
                          out.begin() + static_cast<std::ptrdiff_t>(n * (as.c + bs.c) * plane));
                std::copy(b.begin() + static_cast<std::ptrdiff_t>(n * bs.c * plane),
                          b.begin() + static_cast<std::ptrdiff_t>((n + 1) * bs.c * plane),
                          out.begin() +
                              static_cast<std::ptrdiff_t>(n * (as.c + bs.c) * plane + as.c * plane));
            }
            return;
        }
        case erft::OpKind::BandBlur: {
            const auto is = shape_of(nv.inputs[0]);
            const auto& in = vals[static_cast<std::size_t>(nv.inputs[0])];
            const std::size_t plane = static_cast<std::size_t>(is.h) * is.w;
            out.assign(in.size(), 0.0);
            const bool bcast = nv.params.taps.size() == 1;
            std::vector<double> tmp(plane);
            for (int n = 0; n < is.n; ++n)
                for (int c = 0; c < is.c; ++c) {
                    const auto& taps = nv.params.taps[bcast ? 0 : static_cast<std::size_t>(c)];
                    const int m = static_cast<int>(taps.size()), p = m / 2;
                    const double* src = in.data() + (static_cast<std::size_t>(n) * is.c + c) * plane;
                    double* dst = out.data() + (static_cast<std::size_t>(n) * is.c + c) * plane;
                    for (int y = 0; y < is.h; ++y)
                        for (int x = 0; x < is.w; ++x) {
                            double acc = 0.0;
                            for (int t = 0; t < m; ++t)
                                acc += static_cast<double>(taps[static_cast<std::size_t>(t)]) *
                                       src[static_cast<std::size_t>(y) * is.w + reflect(x + t - p, is.w)];
                            tmp[static_cast<std::size_t>(y) * is.w + x] = acc;
                        }
                    for (int y = 0; y < is.h; ++y)
                        for (int x = 0; x < is.w; ++x) {
                            double acc = 0.0;
                            for (int t = 0; t < m; ++t)
                                acc += static_cast<double>(taps[static_cast<std::size_t>(t)]) *
                                       tmp[static_cast<std::size_t>(reflect(y + t - p, is.h)) * is.w + x];
                            dst[static_cast<std::size_t>(y) * is.w + x] = acc;
                        }
                }
            return;
        }
        case erft::OpKind::Decimate: {
            const auto is = shape_of(nv.inputs[0]);
            const auto& in = vals[static_cast<std::size_t>(nv.inputs[0])];
            const int r = nv.params.ratio, off = nv.params.offset;
            const int oh = is.h / r, ow = is.w / r;
            out.assign(static_cast<std::size_t>(is.n) * is.c * oh * ow, 0.0);
            for (int nc = 0; nc < is.n * is.c; ++nc)
                for (int y = 0; y < oh; ++y)
                    for (int x = 0; x < ow; ++x)
                        out[(static_cast<std::size_t>(nc) * oh + y) * ow + x] =
                            in[(static_cast<std::size_t>(nc) * is.h + y * r + off) * is.w + x * r +
                               off];
            return;
        }
        case erft::OpKind::WeightedSum: {
            double acc = 0.0;
            for (std::size_t i = 0; i < nv.inputs.size(); ++i)
                acc += static_cast<double>(nv.params.weights[i]) *
                       vals[static_cast<std::size_t>(nv.inputs[i])][0];
            out.assign(1, acc);
            return;
        }
        }
    }

    const erft::Tape& tape_;
};

struct FdResult {
    double max_rel = 0.0;
    int checked = 0;
};

// Central finite differences on one leaf coordinate via the double evaluator.
inline double fd_gradient(erft::Tape& tape, erft::NodeId loss, erft::NodeId leaf, std::size_t coord,
                          double h = 1e-3) {
    float& x = tape.mutable_value(leaf).data()[coord];
    const float saved = x;
    x = static_cast<float>(saved + h);
    const double hi = static_cast<double>(x);
    const double lp = DoubleEval(tape).scalar(loss);
    x = static_cast<float>(saved - h);
    const double lo = static_cast<double>(x);
    const double lm = DoubleEval(tape).scalar(loss);
    x = saved;
    return (lp - lm) / (hi - lo);
}

// Checks up to `samples` strided coordinates of one leaf; analytic gradients
// must already be present on the tape (backward has run).
//
// screen_kinks: the recorded losses are piecewise-linear in any SINGLE leaf
// coordinate (convs and the residual adds are linear per coordinate, relu and
// |.| are piecewise-linear), so a nonzero second difference L+ + L- - 2 L0
// proves the step straddled a kink, where central differences say nothing
// about the one-sided derivative in use. Such coordinates are skipped, not
// counted.
inline FdResult fd_check(erft::Tape& tape, erft::NodeId loss, erft::NodeId leaf, int samples,
                         double h = 1e-3, bool screen_kinks = false) {
    FdResult r;
    const auto grads = tape.grad(leaf);
    const std::size_t n = grads.size();
    const double l0 = screen_kinks ? DoubleEval(tape).scalar(loss) : 0.0;
    const std::size_t stride = n <= static_cast<std::size_t>(samples) ? 1 : n / static_cast<std::size_t>(samples);
    for (std::size_t start = 0; start < stride && r.checked < samples; ++start) {
        for (std::size_t i = start; i < n && r.checked < samples; i += stride) {
            float& x = tape.mutable_value(leaf).data()[i];
            const float saved = x;
            x = static_cast<float>(saved + h);
            const double hi = static_cast<double>(x);
            const double lp = DoubleEval(tape).scalar(loss);
            x = static_cast<float>(saved - h);
            const double lo = static_cast<double>(x);
            const double lm = DoubleEval(tape).scalar(loss);
            x = saved;
            if (screen_kinks &&
                std::abs(lp + lm - 2.0 * l0) > 1e-9 * std::max(1.0, std::abs(l0)))
                continue;
            const double fd = (lp - lm) / (hi - lo);
            const double an = grads[i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            r.max_rel = std::max(r.max_rel, rel);
            ++r.checked;
        }
    }
    return r;
}

inline erft::Tensor random_tensor(erft::Shape s, std::uint64_t seed, float lo = 0.1f,
                                  float hi = 0.9f) {
    erft::SplitMix64 rng(seed);
    erft::Tensor t(s);
    for (float& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

} // namespace oracle
