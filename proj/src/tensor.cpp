#include "erft/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace erft {

std::string Shape::str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
}

Tensor::Tensor(Shape s, float fill) : shape_(s) {
    require(s.n >= 1 && s.c >= 1 && s.h >= 1 && s.w >= 1, ErrorKind::Geometry,
            "tensor dims must be >= 1, got " + s.str());
    data_.assign(static_cast<std::size_t>(s.numel()), fill);
}

Tensor Tensor::from(Shape s, std::vector<float> values) {
    require(static_cast<std::int64_t>(values.size()) == s.numel(), ErrorKind::Geometry,
            "tensor data length does not match shape " + s.str());
    Tensor t(s);
    t.data_ = std::move(values);
    return t;
}

NodeId Tape::leaf(Tensor t) {
    Node n;
    n.kind = OpKind::Leaf;
    n.needs_grad = t.requires_grad;
    n.value = std::move(t);
    n.value.grad.clear();
    return push(std::move(n));
}

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Tape::NodeView Tape::view(NodeId id) const {
    const Node& n = nodes_[check(id)];
    return NodeView{n.kind, std::span<const NodeId>(n.in.data(), static_cast<std::size_t>(n.n_in)),
                    n.params, n.value, n.needs_grad};
}

std::vector<float>& Tape::grad_buf(NodeId id) {
    Tensor& v = nodes_[id].value;
    if (v.grad.empty()) v.grad.assign(v.data().size(), 0.0f);
    return v.grad;
}

// --- forward kernels ---------------------------------------------------------

namespace {

// Materialize one padded plane (H+2P)x(W+2P) from an HxW plane.
void fill_padded(const float* src, float* dst, int h, int w, int p, Pad pad) {
    const int pw = w + 2 * p;
    for (int y = -p; y < h + p; ++y) {
        float* row = dst + static_cast<std::int64_t>(y + p) * pw;
        if (pad == Pad::Zero && (y < 0 || y >= h)) {
            std::fill(row, row + pw, 0.0f);
            continue;
        }
        const int sy = pad == Pad::Zero ? y : detail::reflect_index(y, h);
        const float* srow = src + static_cast<std::int64_t>(sy) * w;
        for (int x = -p; x < w + p; ++x) {
            if (x >= 0 && x < w) {
                row[x + p] = srow[x];
            } else if (pad == Pad::Zero) {
                row[x + p] = 0.0f;
            } else {
                row[x + p] = srow[detail::reflect_index(x, w)];
            }
        }
    }
}

// Scatter a padded-plane gradient back onto the real plane.
void unpad_accumulate(const float* gpad, float* gin, int h, int w, int p, Pad pad) {
    const int pw = w + 2 * p;
    for (int py = 0; py < h + 2 * p; ++py) {
        const int y = py - p;
        if (pad == Pad::Zero && (y < 0 || y >= h)) continue;
        const int ry = pad == Pad::Zero ? y : detail::reflect_index(y, h);
        const float* grow = gpad + static_cast<std::int64_t>(py) * pw;
        float* orow = gin + static_cast<std::int64_t>(ry) * w;
        for (int px = 0; px < w + 2 * p; ++px) {
            const int x = px - p;
            if (pad == Pad::Zero && (x < 0 || x >= w)) continue;
            orow[pad == Pad::Zero ? x : detail::reflect_index(x, w)] += grow[px];
        }
    }
}

struct UpsampleTable {
    std::vector<int> i0, i1;
    std::vector<float> t;
};

UpsampleTable upsample_table(int n, int r) {
    UpsampleTable tab;
    tab.i0.resize(static_cast<std::size_t>(n) * r);
    tab.i1.resize(static_cast<std::size_t>(n) * r);
    tab.t.resize(static_cast<std::size_t>(n) * r);
    for (int i = 0; i < n * r; ++i) {
        double src = (i + 0.5) / r - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(n - 1));
        const int i0 = static_cast<int>(src);
        tab.i0[i] = i0;
        tab.i1[i] = std::min(i0 + 1, n - 1);
        tab.t[i] = static_cast<float>(src - i0);
    }
    return tab;
}

} // namespace

namespace detail {

void blur_axis(const float* in, float* out, int h, int w, std::span<const float> taps, int axis) {
    const int m = static_cast<int>(taps.size());
    const int p = m / 2;
    if (axis == 1) { // along rows (x)
        for (int y = 0; y < h; ++y) {
            const float* row = in + static_cast<std::int64_t>(y) * w;
            float* orow = out + static_cast<std::int64_t>(y) * w;
            for (int x = 0; x < w; ++x) {
                float acc = 0.0f;
                if (x >= p && x + p < w) {
                    for (int t = 0; t < m; ++t) acc += taps[t] * row[x + t - p];
                } else {
                    for (int t = 0; t < m; ++t) acc += taps[t] * row[reflect_index(x + t - p, w)];
                }
                orow[x] = acc;
            }
        }
    } else { // along columns (y)
        for (int y = 0; y < h; ++y) {
            float* orow = out + static_cast<std::int64_t>(y) * w;
            const bool interior = y >= p && y + p < h;
            for (int x = 0; x < w; ++x) orow[x] = 0.0f;
            for (int t = 0; t < m; ++t) {
                const int sy = interior ? y + t - p : reflect_index(y + t - p, h);
                const float* row = in + static_cast<std::int64_t>(sy) * w;
                const float tap = taps[t];
                for (int x = 0; x < w; ++x) orow[x] += tap * row[x];
            }
        }
    }
}

void blur_axis_adjoint(const float* gout, float* gin, int h, int w, std::span<const float> taps,
                       int axis) {
    const int m = static_cast<int>(taps.size());
    const int p = m / 2;
    for (int y = 0; y < h; ++y) {
        const float* grow = gout + static_cast<std::int64_t>(y) * w;
        for (int x = 0; x < w; ++x) {
            const float g = grow[x];
            for (int t = 0; t < m; ++t) {
                int sy = y, sx = x;
                if (axis == 1) {
                    sx = reflect_index(x + t - p, w);
                } else {
                    sy = reflect_index(y + t - p, h);
                }
                gin[static_cast<std::int64_t>(sy) * w + sx] += g * taps[t];
            }
        }
    }
}

} // namespace detail

void Tape::compute(Node& node) const {
    switch (node.kind) {
    case OpKind::Leaf:
        return;
    case OpKind::Conv2d: {
        const Tensor& in = nodes_[node.in[0]].value;
        const Tensor& ker = nodes_[node.in[1]].value;
        const Tensor& bias = nodes_[node.in[2]].value;
        const Shape is = in.shape();
        const int cout = ker.shape().n, cin = ker.shape().c, k = ker.shape().h;
        const int p = k / 2;
        const int ph = is.h + 2 * p, pw = is.w + 2 * p;
        Tensor out(Shape{is.n, cout, is.h, is.w});
        std::vector<float> padded(static_cast<std::size_t>(ph) * pw);
        const std::int64_t plane = static_cast<std::int64_t>(is.h) * is.w;
        for (int n = 0; n < is.n; ++n) {
            for (int co = 0; co < cout; ++co) {
                float* o = out.data().data() + (static_cast<std::int64_t>(n) * cout + co) * plane;
                std::fill(o, o + plane, bias.data()[co]);
            }
            for (int ci = 0; ci < cin; ++ci) {
                fill_padded(in.data().data() + (static_cast<std::int64_t>(n) * cin + ci) * plane,
                            padded.data(), is.h, is.w, p, node.params.pad);
                for (int co = 0; co < cout; ++co) {
                    float* o = out.data().data() + (static_cast<std::int64_t>(n) * cout + co) * plane;
                    const float* kw = ker.data().data() +
                                      (static_cast<std::int64_t>(co) * cin + ci) * k * k;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const float wv = kw[ky * k + kx];
                            if (wv == 0.0f) continue;
                            for (int y = 0; y < is.h; ++y) {
                                const float* prow =
                                    padded.data() + static_cast<std::int64_t>(y + ky) * pw + kx;
                                float* orow = o + static_cast<std::int64_t>(y) * is.w;
                                for (int x = 0; x < is.w; ++x) orow[x] += wv * prow[x];
                            }
                        }
                    }
                }
            }
        }
        node.value = std::move(out);
        return;
    }
    case OpKind::BilinearUp: {
        const Tensor& in = nodes_[node.in[0]].value;
        const Shape is = in.shape();
        const int r = node.params.ratio;
        Tensor out(Shape{is.n, is.c, is.h * r, is.w * r});
        const UpsampleTable ty = upsample_table(is.h, r);
        const UpsampleTable tx = upsample_table(is.w, r);
        const std::int64_t iplane = static_cast<std::int64_t>(is.h) * is.w;
        const std::int64_t oplane = iplane * r * r;
        for (int nc = 0; nc < is.n * is.c; ++nc) {
            const float* src = in.data().data() + nc * iplane;
            float* dst = out.data().data() + nc * oplane;
            for (int y = 0; y < is.h * r; ++y) {
                const float wy = ty.t[y];
                const float* r0 = src + static_cast<std::int64_t>(ty.i0[y]) * is.w;
                const float* r1 = src + static_cast<std::int64_t>(ty.i1[y]) * is.w;
                float* orow = dst + static_cast<std::int64_t>(y) * is.w * r;
                for (int x = 0; x < is.w * r; ++x) {
                    const float wx = tx.t[x];
                    const float a = r0[tx.i0[x]], b = r0[tx.i1[x]];
                    const float c = r1[tx.i0[x]], d = r1[tx.i1[x]];
                    const float top = a + wx * (b - a);
                    const float bot = c + wx * (d - c);
                    orow[x] = top + wy * (bot - top);
                }
            }
        }
        node.value = std::move(out);
        return;
    }
    case OpKind::Eltwise: {
        const Tensor& a = nodes_[node.in[0]].value;
        const Tensor& b = nodes_[node.in[1]].value;
        const bool bcast = b.shape().c == 1 && a.shape().c > 1;
        Tensor out(a.shape());
        const std::int64_t plane = static_cast<std::int64_t>(a.shape().h) * a.shape().w;
        const float* pa = a.data().data();
        const float* pb = b.data().data();
        float* po = out.data().data();
        for (int n = 0; n < a.shape().n; ++n) {
            for (int c = 0; c < a.shape().c; ++c) {
                const std::int64_t ao = (static_cast<std::int64_t>(n) * a.shape().c + c) * plane;
                const std::int64_t bo = bcast ? static_cast<std::int64_t>(n) * plane
                                              : (static_cast<std::int64_t>(n) * a.shape().c + c) * plane;
                switch (node.params.elt) {
                case Elt::Add:
                    for (std::int64_t i = 0; i < plane; ++i) po[ao + i] = pa[ao + i] + pb[bo + i];
                    break;
                case Elt::Sub:
                    for (std::int64_t i = 0; i < plane; ++i) po[ao + i] = pa[ao + i] - pb[bo + i];
                    break;
                case Elt::Mul:
                    for (std::int64_t i = 0; i < plane; ++i) po[ao + i] = pa[ao + i] * pb[bo + i];
                    break;
                case Elt::DivGuard:
                    for (std::int64_t i = 0; i < plane; ++i)
                        po[ao + i] = pa[ao + i] / div_guard_denom(pb[bo + i]);
                    break;
                }
            }
        }
        node.value = std::move(out);
        return;
    }
    case OpKind::Relu: {
        const Tensor& in = nodes_[node.in[0]].value;
        Tensor out(in.shape());
        const float* pi = in.data().data();
        float* po = out.data().data();
        for (std::int64_t i = 0; i < in.numel(); ++i) po[i] = pi[i] > 0.0f ? pi[i] : 0.0f;
        node.value = std::move(out);
        return;
    }
    case OpKind::L1Mean: {
        const Tensor& a = nodes_[node.in[0]].value;
        const Tensor& b = nodes_[node.in[1]].value;
        double acc = 0.0;
        const float* pa = a.data().data();
        const float* pb = b.data().data();
        for (std::int64_t i = 0; i < a.numel(); ++i) acc += std::abs(static_cast<double>(pa[i]) - pb[i]);
        Tensor out(Shape{1, 1, 1, 1});
        out.data()[0] = static_cast<float>(acc / static_cast<double>(a.numel()));
        node.value = std::move(out);
        return;
    }
    case OpKind::ConcatChannels: {
        const Tensor& a = nodes_[node.in[0]].value;
        const Tensor& b = nodes_[node.in[1]].value;
        const Shape as = a.shape(), bs = b.shape();
        Tensor out(Shape{as.n, as.c + bs.c, as.h, as.w});
        const std::int64_t plane = static_cast<std::int64_t>(as.h) * as.w;
        for (int n = 0; n < as.n; ++n) {
            float* dst = out.data().data() + static_cast<std::int64_t>(n) * (as.c + bs.c) * plane;
            const float* pa = a.data().data() + static_cast<std::int64_t>(n) * as.c * plane;
            const float* pb = b.data().data() + static_cast<std::int64_t>(n) * bs.c * plane;
            std::copy(pa, pa + as.c * plane, dst);
            std::copy(pb, pb + bs.c * plane, dst + as.c * plane);
        }
        node.value = std::move(out);
        return;
    }
    case OpKind::BandBlur: {
        const Tensor& in = nodes_[node.in[0]].value;
        const Shape is = in.shape();
        Tensor out(is);
        const std::int64_t plane = static_cast<std::int64_t>(is.h) * is.w;
        std::vector<float> tmp(static_cast<std::size_t>(plane));
        const bool bcast = node.params.taps.size() == 1;
        for (int n = 0; n < is.n; ++n) {
            for (int c = 0; c < is.c; ++c) {
                const auto& taps = node.params.taps[bcast ? 0 : static_cast<std::size_t>(c)];
                const float* src =
                    in.data().data() + (static_cast<std::int64_t>(n) * is.c + c) * plane;
                float* dst = out.data().data() + (static_cast<std::int64_t>(n) * is.c + c) * plane;
                detail::blur_axis(src, tmp.data(), is.h, is.w, taps, 1);
                detail::blur_axis(tmp.data(), dst, is.h, is.w, taps, 0);
            }
        }
        node.value = std::move(out);
        return;
    }
    case OpKind::Decimate: {
        const Tensor& in = nodes_[node.in[0]].value;
        const Shape is = in.shape();
        const int r = node.params.ratio, off = node.params.offset;
        Tensor out(Shape{is.n, is.c, is.h / r, is.w / r});
        for (int nc = 0; nc < is.n * is.c; ++nc) {
            const float* src = in.data().data() + static_cast<std::int64_t>(nc) * is.h * is.w;
            float* dst = out.data().data() +
                         static_cast<std::int64_t>(nc) * (is.h / r) * (is.w / r);
            for (int y = 0; y < is.h / r; ++y)
                for (int x = 0; x < is.w / r; ++x)
                    dst[static_cast<std::int64_t>(y) * (is.w / r) + x] =
                        src[static_cast<std::int64_t>(y * r + off) * is.w + x * r + off];
        }
        node.value = std::move(out);
        return;
    }
    case OpKind::WeightedSum: {
        Tensor out(Shape{1, 1, 1, 1});
        float acc = 0.0f;
        for (int i = 0; i < node.n_in; ++i)
            acc += node.params.weights[static_cast<std::size_t>(i)] * nodes_[node.in[i]].value.data()[0];
        out.data()[0] = acc;
        node.value = std::move(out);
        return;
    }
    }
}

// --- backward ----------------------------------------------------------------

void Tape::backprop(const Node& node) {
    const std::span<const float> go = node.value.grad;
    switch (node.kind) {
    case OpKind::Leaf:
        return;
    case OpKind::Conv2d: {
        const Node& nin = nodes_[node.in[0]];
        const Node& nker = nodes_[node.in[1]];
        const Node& nbias = nodes_[node.in[2]];
        const Tensor& in = nin.value;
        const Tensor& ker = nker.value;
        const Shape is = in.shape();
        const int cout = ker.shape().n, cin = ker.shape().c, k = ker.shape().h;
        const int p = k / 2;
        const int pw = is.w + 2 * p, ph = is.h + 2 * p;
        const std::int64_t plane = static_cast<std::int64_t>(is.h) * is.w;
        std::vector<float> padded(static_cast<std::size_t>(ph) * pw);
        std::vector<float> gpad;
        if (nbias.needs_grad) {
            auto& gb = grad_buf(node.in[2]);
            for (int n = 0; n < is.n; ++n)
                for (int co = 0; co < cout; ++co) {
                    const float* g = go.data() + (static_cast<std::int64_t>(n) * cout + co) * plane;
                    float acc = 0.0f;
                    for (std::int64_t i = 0; i < plane; ++i) acc += g[i];
                    gb[co] += acc;
                }
        }
        const bool want_in = nin.needs_grad;
        const bool want_ker = nker.needs_grad;
        if (!want_in && !want_ker) return;
        if (want_in) gpad.resize(static_cast<std::size_t>(ph) * pw);
        float* gw = nullptr;
        if (want_ker) gw = grad_buf(node.in[1]).data();
        float* gi = nullptr;
        if (want_in) gi = grad_buf(node.in[0]).data();
        for (int n = 0; n < is.n; ++n) {
            for (int ci = 0; ci < cin; ++ci) {
                fill_padded(in.data().data() + (static_cast<std::int64_t>(n) * cin + ci) * plane,
                            padded.data(), is.h, is.w, p, node.params.pad);
                if (want_in) std::fill(gpad.begin(), gpad.end(), 0.0f);
                for (int co = 0; co < cout; ++co) {
                    const float* g = go.data() + (static_cast<std::int64_t>(n) * cout + co) * plane;
                    const float* kw =
                        ker.data().data() + (static_cast<std::int64_t>(co) * cin + ci) * k * k;
                    float* gkw = want_ker ? gw + (static_cast<std::int64_t>(co) * cin + ci) * k * k
                                          : nullptr;
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const float wv = kw[ky * k + kx];
                            float wacc = 0.0f;
                            for (int y = 0; y < is.h; ++y) {
                                const float* grow = g + static_cast<std::int64_t>(y) * is.w;
                                const std::int64_t poff =
                                    static_cast<std::int64_t>(y + ky) * pw + kx;
                                if (want_ker) {
                                    const float* prow = padded.data() + poff;
                                    for (int x = 0; x < is.w; ++x) wacc += grow[x] * prow[x];
                                }
                                if (want_in) {
                                    float* gprow = gpad.data() + poff;
                                    for (int x = 0; x < is.w; ++x) gprow[x] += grow[x] * wv;
                                }
                            }
                            if (want_ker) gkw[ky * k + kx] += wacc;
                        }
                    }
                }
                if (want_in)
                    unpad_accumulate(gpad.data(), gi + (static_cast<std::int64_t>(n) * cin + ci) * plane,
                                     is.h, is.w, p, node.params.pad);
            }
        }
        return;
    }
    case OpKind::BilinearUp: {
        const Node& nin = nodes_[node.in[0]];
        if (!nin.needs_grad) return;
        const Shape is = nin.value.shape();
        const int r = node.params.ratio;
        const UpsampleTable ty = upsample_table(is.h, r);
        const UpsampleTable tx = upsample_table(is.w, r);
        float* gi = grad_buf(node.in[0]).data();
        const std::int64_t iplane = static_cast<std::int64_t>(is.h) * is.w;
        const std::int64_t oplane = iplane * r * r;
        for (int nc = 0; nc < is.n * is.c; ++nc) {
            float* gsrc = gi + nc * iplane;
            const float* g = go.data() + nc * oplane;
            for (int y = 0; y < is.h * r; ++y) {
                const float wy = ty.t[y];
                const std::int64_t r0 = static_cast<std::int64_t>(ty.i0[y]) * is.w;
                const std::int64_t r1 = static_cast<std::int64_t>(ty.i1[y]) * is.w;
                const float* grow = g + static_cast<std::int64_t>(y) * is.w * r;
                for (int x = 0; x < is.w * r; ++x) {
                    const float wx = tx.t[x];
                    const float gv = grow[x];
                    gsrc[r0 + tx.i0[x]] += gv * (1 - wy) * (1 - wx);
                    gsrc[r0 + tx.i1[x]] += gv * (1 - wy) * wx;
                    gsrc[r1 + tx.i0[x]] += gv * wy * (1 - wx);
                    gsrc[r1 + tx.i1[x]] += gv * wy * wx;
                }
            }
        }
        return;
    }
    case OpKind::Eltwise: {
        const Node& na = nodes_[node.in[0]];
        const Node& nb = nodes_[node.in[1]];
        const Tensor& a = na.value;
        const Tensor& b = nb.value;
        const bool bcast = b.shape().c == 1 && a.shape().c > 1;
        const std::int64_t plane = static_cast<std::int64_t>(a.shape().h) * a.shape().w;
        float* ga = na.needs_grad ? grad_buf(node.in[0]).data() : nullptr;
        float* gb = nb.needs_grad ? grad_buf(node.in[1]).data() : nullptr;
        if (!ga && !gb) return;
        for (int n = 0; n < a.shape().n; ++n) {
            for (int c = 0; c < a.shape().c; ++c) {
                const std::int64_t ao = (static_cast<std::int64_t>(n) * a.shape().c + c) * plane;
                const std::int64_t bo = bcast ? static_cast<std::int64_t>(n) * plane : ao;
                const float* g = go.data() + ao;
                for (std::int64_t i = 0; i < plane; ++i) {
                    switch (node.params.elt) {
                    case Elt::Add:
                        if (ga) ga[ao + i] += g[i];
                        if (gb) gb[bo + i] += g[i];
                        break;
                    case Elt::Sub:
                        if (ga) ga[ao + i] += g[i];
                        if (gb) gb[bo + i] -= g[i];
                        break;
                    case Elt::Mul:
                        if (ga) ga[ao + i] += g[i] * b.data()[bo + i];
                        if (gb) gb[bo + i] += g[i] * a.data()[ao + i];
                        break;
                    case Elt::DivGuard: {
                        const float d = b.data()[bo + i];
                        const float dg = div_guard_denom(d);
                        if (ga) ga[ao + i] += g[i] / dg;
                        if (gb && std::abs(d) >= kDivEps)
                            gb[bo + i] -= g[i] * a.data()[ao + i] / (dg * dg);
                        break;
                    }
                    }
                }
            }
        }
        return;
    }
    case OpKind::Relu: {
        const Node& nin = nodes_[node.in[0]];
        if (!nin.needs_grad) return;
        float* gi = grad_buf(node.in[0]).data();
        const float* pi = nin.value.data().data();
        for (std::int64_t i = 0; i < nin.value.numel(); ++i)
            if (pi[i] > 0.0f) gi[i] += go[static_cast<std::size_t>(i)];
        return;
    }
    case OpKind::L1Mean: {
        const Node& na = nodes_[node.in[0]];
        const Node& nb = nodes_[node.in[1]];
        const float scale = go[0] / static_cast<float>(na.value.numel());
        float* ga = na.needs_grad ? grad_buf(node.in[0]).data() : nullptr;
        float* gb = nb.needs_grad ? grad_buf(node.in[1]).data() : nullptr;
        if (!ga && !gb) return;
        const float* pa = na.value.data().data();
        const float* pb = nb.value.data().data();
        for (std::int64_t i = 0; i < na.value.numel(); ++i) {
            const float d = pa[i] - pb[i];
            const float s = d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
            if (ga) ga[i] += s;
            if (gb) gb[i] -= s;
        }
        return;
    }
    case OpKind::ConcatChannels: {
        const Node& na = nodes_[node.in[0]];
        const Node& nb = nodes_[node.in[1]];
        const Shape as = na.value.shape(), bs = nb.value.shape();
        const std::int64_t plane = static_cast<std::int64_t>(as.h) * as.w;
        float* ga = na.needs_grad ? grad_buf(node.in[0]).data() : nullptr;
        float* gb = nb.needs_grad ? grad_buf(node.in[1]).data() : nullptr;
        for (int n = 0; n < as.n; ++n) {
            const float* g = go.data() + static_cast<std::int64_t>(n) * (as.c + bs.c) * plane;
            if (ga) {
                float* d = ga + static_cast<std::int64_t>(n) * as.c * plane;
                for (std::int64_t i = 0; i < as.c * plane; ++i) d[i] += g[i];
            }
            if (gb) {
                float* d = gb + static_cast<std::int64_t>(n) * bs.c * plane;
                const float* gsrc = g + as.c * plane;
                for (std::int64_t i = 0; i < bs.c * plane; ++i) d[i] += gsrc[i];
            }
        }
        return;
    }
    case OpKind::BandBlur: {
        const Node& nin = nodes_[node.in[0]];
        if (!nin.needs_grad) return;
        const Shape is = nin.value.shape();
        const std::int64_t plane = static_cast<std::int64_t>(is.h) * is.w;
        float* gi = grad_buf(node.in[0]).data();
        std::vector<float> tmp(static_cast<std::size_t>(plane));
        const bool bcast = node.params.taps.size() == 1;
        for (int n = 0; n < is.n; ++n) {
            for (int c = 0; c < is.c; ++c) {
                const auto& taps = node.params.taps[bcast ? 0 : static_cast<std::size_t>(c)];
                const float* g = go.data() + (static_cast<std::int64_t>(n) * is.c + c) * plane;
                std::fill(tmp.begin(), tmp.end(), 0.0f);
                // forward was rows-then-columns; adjoint is columns then rows
                detail::blur_axis_adjoint(g, tmp.data(), is.h, is.w, taps, 0);
                detail::blur_axis_adjoint(tmp.data(),
                                          gi + (static_cast<std::int64_t>(n) * is.c + c) * plane,
                                          is.h, is.w, taps, 1);
            }
        }
        return;
    }
    case OpKind::Decimate: {
        const Node& nin = nodes_[node.in[0]];
        if (!nin.needs_grad) return;
        const Shape is = nin.value.shape();
        const int r = node.params.ratio, off = node.params.offset;
        float* gi = grad_buf(node.in[0]).data();
        const int oh = is.h / r, ow = is.w / r;
        for (int nc = 0; nc < is.n * is.c; ++nc) {
            const float* g = go.data() + static_cast<std::int64_t>(nc) * oh * ow;
            float* gs = gi + static_cast<std::int64_t>(nc) * is.h * is.w;
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x)
                    gs[static_cast<std::int64_t>(y * r + off) * is.w + x * r + off] +=
                        g[static_cast<std::int64_t>(y) * ow + x];
        }
        return;
    }
    case OpKind::WeightedSum: {
        for (int i = 0; i < node.n_in; ++i) {
            if (!nodes_[node.in[i]].needs_grad) continue;
            grad_buf(node.in[i])[0] += go[0] * node.params.weights[static_cast<std::size_t>(i)];
        }
        return;
    }
    }
}

void Tape::backward(NodeId loss) {
    check(loss);
    require(nodes_[loss].value.numel() == 1, ErrorKind::Contract,
            "backward: loss node must be scalar, got shape " + nodes_[loss].value.shape().str());
    for (Node& n : nodes_) n.value.grad.clear();
    grad_buf(loss)[0] = 1.0f;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.value.grad.empty() && n.kind != OpKind::Leaf && n.needs_grad) backprop(n);
    }
    // unreachable trainable leaves still report a (zero) gradient
    for (Node& n : nodes_)
        if (n.kind == OpKind::Leaf && n.value.requires_grad && n.value.grad.empty())
            n.value.grad.assign(n.value.data().size(), 0.0f);
}

void Tape::replay() {
    for (Node& n : nodes_)
        if (n.kind != OpKind::Leaf) compute(n);
}

// --- op builders --------------------------------------------------------------

namespace {
bool any_needs_grad(const Tape& t, std::initializer_list<NodeId> ids) {
    for (NodeId id : ids)
        if (t.view(id).needs_grad) return true;
    return false;
}
} // namespace

NodeId conv2d(Tape& tape, NodeId input, NodeId kernel, NodeId bias, Pad pad) {
    const Shape is = tape.value(input).shape();
    const Shape ks = tape.value(kernel).shape();
    const Shape bs = tape.value(bias).shape();
    require(ks.h == ks.w, ErrorKind::Geometry, "conv2d: kernel must be square, got " + ks.str());
    require(ks.h % 2 == 1, ErrorKind::Config, "conv2d: kernel size must be odd, got " + std::to_string(ks.h));
    require(is.c == ks.c, ErrorKind::Geometry,
            "conv2d: input channels " + is.str() + " do not match kernel " + ks.str());
    require(bs.numel() == ks.n, ErrorKind::Geometry,
            "conv2d: bias length " + std::to_string(bs.numel()) + " != output channels " +
                std::to_string(ks.n));
    Tape::Node n;
    n.kind = OpKind::Conv2d;
    n.in = {input, kernel, bias};
    n.n_in = 3;
    n.params.pad = pad;
    n.needs_grad = any_needs_grad(tape, {input, kernel, bias});
    tape.compute(n);
    return tape.push(std::move(n));
}

NodeId bilinear_upsample(Tape& tape, NodeId input, int ratio) {
    require(ratio >= 1, ErrorKind::Config, "bilinear_upsample: ratio must be >= 1");
    Tape::Node n;
    n.kind = OpKind::BilinearUp;
    n.in = {input, -1, -1};
    n.n_in = 1;
    n.params.ratio = ratio;
    n.needs_grad = tape.view(input).needs_grad;
    tape.compute(n);
    return tape.push(std::move(n));
}

NodeId eltwise(Tape& tape, NodeId a, NodeId b, Elt kind) {
    const Shape as = tape.value(a).shape();
    const Shape bs = tape.value(b).shape();
    const bool same = as == bs;
    const bool bcast = bs.c == 1 && as.c >= 1 && bs.n == as.n && bs.h == as.h && bs.w == as.w;
    require(same || bcast, ErrorKind::Geometry,
            "eltwise: shapes " + as.str() + " and " + bs.str() + " are not compatible");
    Tape::Node n;
    n.kind = OpKind::Eltwise;
    n.in = {a, b, -1};
    n.n_in = 2;
    n.params.elt = kind;
    n.needs_grad = any_needs_grad(tape, {a, b});
    tape.compute(n);
    return tape.push(std::move(n));
}

NodeId relu(Tape& tape, NodeId input) {
    Tape::Node n;
    n.kind = OpKind::Relu;
    n.in = {input, -1, -1};
    n.n_in = 1;
    n.needs_grad = tape.view(input).needs_grad;
    tape.compute(n);
    return tape.push(std::move(n));
}

NodeId l1_mean(Tape& tape, NodeId a, NodeId b) {
    require(tape.value(a).shape() == tape.value(b).shape(), ErrorKind::Geometry,
            "l1_mean: shapes " + tape.value(a).shape().str() + " and " +
                tape.value(b).shape().str() + " differ");
    Tape::Node n;
    n.kind = OpKind::L1Mean;
    n.in = {a, b, -1};
    n.n_in = 2;
    n.needs_grad = any_needs_grad(tape, {a, b});
    tape.compute(n);
    return tape.push(std::move(n));
}

NodeId concat_channels(Tape& tape, NodeId a, NodeId b) {
    const Shape as = tape.value(a).shape();
    const Shape bs = tape.value(b).shape();
    require(as.n == bs.n && as.h == bs.h && as.w == bs.w, ErrorKind::Geometry,
            "concat_channels: shapes " + as.str() + " and " + bs.str() + " differ outside C");
    Tape::Node n;
    n.kind = OpKind::ConcatChannels;
    n.in = {a, b, -1};
    n.n_in = 2;
    n.needs_grad = any_needs_grad(tape, {a, b});
    tape.compute(n);
    return tape.push(std::move(n));
}

NodeId band_blur(Tape& tape, NodeId input, std::vector<std::vector<float>> taps) {
    const Shape is = tape.value(input).shape();
    require(!taps.empty(), ErrorKind::Config, "band_blur: no taps given");
    require(static_cast<int>(taps.size()) == is.c || taps.size() == 1, ErrorKind::Geometry,
            "band_blur: " + std::to_string(taps.size()) + " tap sets for " + std::to_string(is.c) +
                " bands");
    for (const auto& t : taps)
        require(t.size() % 2 == 1, ErrorKind::Config, "band_blur: tap count must be odd");
    Tape::Node n;
    n.kind = OpKind::BandBlur;
    n.in = {input, -1, -1};
    n.n_in = 1;
    n.params.taps = std::move(taps);
    n.needs_grad = tape.view(input).needs_grad;
    tape.compute(n);
    return tape.push(std::move(n));
}

NodeId decimate(Tape& tape, NodeId input, int ratio, int offset) {
    const Shape is = tape.value(input).shape();
    require(ratio >= 1, ErrorKind::Config, "decimate: ratio must be >= 1");
    require(is.h % ratio == 0 && is.w % ratio == 0, ErrorKind::Geometry,
            "decimate: dims " + is.str() + " not divisible by ratio " + std::to_string(ratio));
    Tape::Node n;
    n.kind = OpKind::Decimate;
    n.in = {input, -1, -1};
    n.n_in = 1;
    n.params.ratio = ratio;
    n.params.offset = offset < 0 ? ratio / 2 : offset;
    require(n.params.offset < ratio, ErrorKind::Config, "decimate: offset must be < ratio");
    n.needs_grad = tape.view(input).needs_grad;
    tape.compute(n);
    return tape.push(std::move(n));
}

NodeId weighted_sum(Tape& tape, std::array<NodeId, 3> terms, std::array<float, 3> w) {
    Tape::Node n;
    n.kind = OpKind::WeightedSum;
    n.n_in = 3;
    for (int i = 0; i < 3; ++i) {
        require(tape.value(terms[static_cast<std::size_t>(i)]).numel() == 1, ErrorKind::Contract,
                "weighted_sum: terms must be scalar");
        n.in[static_cast<std::size_t>(i)] = terms[static_cast<std::size_t>(i)];
    }
    n.params.weights = w;
    n.needs_grad = any_needs_grad(tape, {terms[0], terms[1], terms[2]});
    tape.compute(n);
    return tape.push(std::move(n));
}

// --- Adam ----------------------------------------------------------------------

AdamState::AdamState(AdamConfig config, const std::vector<std::int64_t>& param_sizes) : cfg(config) {
    m.reserve(param_sizes.size());
    v.reserve(param_sizes.size());
    for (std::int64_t s : param_sizes) {
        m.emplace_back(static_cast<std::size_t>(s), 0.0f);
        v.emplace_back(static_cast<std::size_t>(s), 0.0f);
    }
}

void adam_step(const std::vector<std::span<float>>& params,
               const std::vector<std::span<const float>>& grads, AdamState& state) {
    require(params.size() == grads.size() && params.size() == state.m.size(), ErrorKind::Geometry,
            "adam_step: parameter/gradient group count mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.cfg.beta1), static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.cfg.beta2), static_cast<double>(state.t));
    const float lr = state.cfg.lr, b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    for (std::size_t g = 0; g < params.size(); ++g) {
        require(params[g].size() == grads[g].size() && params[g].size() == state.m[g].size(),
                ErrorKind::Geometry, "adam_step: parameter size mismatch in group " + std::to_string(g));
        float* p = params[g].data();
        const float* gr = grads[g].data();
        float* mm = state.m[g].data();
        float* vv = state.v[g].data();
        for (std::size_t i = 0; i < params[g].size(); ++i) {
            p[i] -= lr * state.cfg.weight_decay * p[i];
            mm[i] = b1 * mm[i] + (1.0f - b1) * gr[i];
            vv[i] = b2 * vv[i] + (1.0f - b2) * gr[i] * gr[i];
            const float mhat = static_cast<float>(mm[i] / bc1);
            const float vhat = static_cast<float>(vv[i] / bc2);
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
    }
}

} // namespace erft
