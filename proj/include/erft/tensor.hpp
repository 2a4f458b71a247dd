#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "erft/common.hpp"

namespace erft {

struct Shape {
    int n = 1, c = 1, h = 1, w = 1;
    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

// Dense batched NCHW tensor: contiguous, row-major, planar, 32-bit samples.
// grad is empty unless a backward pass produced one; when present it has the
// same length as data.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s, float fill = 0.0f);
    static Tensor from(Shape s, std::vector<float> values);

    const Shape& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    float at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }
    float& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }

    bool requires_grad = false;
    std::vector<float> grad;

private:
    std::int64_t offset(int n, int c, int y, int x) const {
        return ((static_cast<std::int64_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    Shape shape_;
    std::vector<float> data_;
};

enum class Pad { Zero, Reflect };
enum class Elt { Add, Sub, Mul, DivGuard };

enum class OpKind {
    Leaf,
    Conv2d,
    BilinearUp,
    Eltwise,
    Relu,
    L1Mean,
    ConcatChannels,
    BandBlur,
    Decimate,
    WeightedSum,
};

// Denominator clamp used by Elt::DivGuard: d -> sign(d) * max(|d|, kDivEps),
// with sign(0) = +1. The clamp is treated as locally constant in backward.
inline constexpr float kDivEps = 1e-6f;
inline float div_guard_denom(float d) {
    const float mag = std::abs(d) < kDivEps ? kDivEps : std::abs(d);
    return d < 0.0f ? -mag : mag;
}

struct OpParams {
    Pad pad = Pad::Zero;
    Elt elt = Elt::Add;
    int ratio = 1;
    int offset = 0;                         // decimate pick offset
    std::vector<std::vector<float>> taps;   // BandBlur: per-band separable taps
    std::array<float, 3> weights = {0, 0, 0}; // WeightedSum
};

using NodeId = int;

// Recorded forward graph. Nodes are appended in execution order, so the list
// is topologically ordered by construction; backward() is a reverse sweep.
// All op loops are single-threaded with fixed iteration order, which makes
// forward values and gradients bit-reproducible (replay() re-executes the
// recorded ops and must reproduce cached values exactly).
class Tape {
public:
    struct NodeView {
        OpKind kind;
        std::span<const NodeId> inputs;
        const OpParams& params;
        const Tensor& value;
        bool needs_grad;
    };

    NodeId leaf(Tensor t);

    const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }
    Tensor& mutable_value(NodeId id) { return nodes_[check(id)].value; }
    std::span<const float> grad(NodeId id) const { return nodes_[check(id)].value.grad; }

    // Reverse-mode sweep from a scalar loss node. Every requires_grad leaf
    // ends up with a grad buffer (zeros when unreachable from the loss).
    void backward(NodeId loss);

    // Recompute every non-leaf value from the recorded ops.
    void replay();

    int size() const { return static_cast<int>(nodes_.size()); }
    NodeView view(NodeId id) const;

private:
    friend NodeId conv2d(Tape&, NodeId, NodeId, NodeId, Pad);
    friend NodeId bilinear_upsample(Tape&, NodeId, int);
    friend NodeId eltwise(Tape&, NodeId, NodeId, Elt);
    friend NodeId relu(Tape&, NodeId);
    friend NodeId l1_mean(Tape&, NodeId, NodeId);
    friend NodeId concat_channels(Tape&, NodeId, NodeId);
    friend NodeId band_blur(Tape&, NodeId, std::vector<std::vector<float>>);
    friend NodeId decimate(Tape&, NodeId, int, int);
    friend NodeId weighted_sum(Tape&, std::array<NodeId, 3>, std::array<float, 3>);

    struct Node {
        OpKind kind = OpKind::Leaf;
        std::array<NodeId, 3> in = {-1, -1, -1};
        int n_in = 0;
        OpParams params;
        Tensor value;
        bool needs_grad = false;
    };

    int check(NodeId id) const {
        require(id >= 0 && id < size(), ErrorKind::Contract, "tape: node id out of range");
        return id;
    }
    NodeId push(Node n);
    void compute(Node& node) const;
    void backprop(const Node& node);
    std::vector<float>& grad_buf(NodeId id);

    std::vector<Node> nodes_;
};

// --- differentiable operation set ------------------------------------------

// Same-padded cross-correlation. kernel is [Cout, Cin, k, k] (k odd),
// bias is [1, Cout, 1, 1]. Differentiable in input, kernel and bias.
NodeId conv2d(Tape& tape, NodeId input, NodeId kernel, NodeId bias, Pad pad);

// Upsample by integer ratio r; output pixel (i, j) samples the input at
// ((i+0.5)/r - 0.5, (j+0.5)/r - 0.5) clamped to the valid range.
NodeId bilinear_upsample(Tape& tape, NodeId input, int ratio);

// Elementwise op; b may be single-channel and broadcasts across a's channels.
NodeId eltwise(Tape& tape, NodeId a, NodeId b, Elt kind);
inline NodeId add(Tape& t, NodeId a, NodeId b) { return eltwise(t, a, b, Elt::Add); }
inline NodeId sub(Tape& t, NodeId a, NodeId b) { return eltwise(t, a, b, Elt::Sub); }
inline NodeId mul(Tape& t, NodeId a, NodeId b) { return eltwise(t, a, b, Elt::Mul); }
inline NodeId div_guard(Tape& t, NodeId a, NodeId b) { return eltwise(t, a, b, Elt::DivGuard); }

NodeId relu(Tape& tape, NodeId input);

// Mean absolute difference over all elements; scalar output, tie gradient 0.
NodeId l1_mean(Tape& tape, NodeId a, NodeId b);

NodeId concat_channels(Tape& tape, NodeId a, NodeId b);

// Per-band separable blur with symmetric-reflect boundary. taps holds one
// odd-length normalized 1-D kernel per band (or a single kernel broadcast to
// all bands). Differentiable in the image, not the taps.
NodeId band_blur(Tape& tape, NodeId input, std::vector<std::vector<float>> taps);

// Keep samples at rows/cols == offset (mod r); offset < 0 means floor(r/2).
NodeId decimate(Tape& tape, NodeId input, int ratio, int offset = -1);

// w[0]*a + w[1]*b + w[2]*c over scalar nodes, summed in that fixed order.
NodeId weighted_sum(Tape& tape, std::array<NodeId, 3> terms, std::array<float, 3> w);

// --- Adam -------------------------------------------------------------------

struct AdamConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-5f; // decoupled: p -= lr*wd*p before the moment update
};

struct AdamState {
    AdamState(AdamConfig config, const std::vector<std::int64_t>& param_sizes);
    AdamConfig cfg;
    std::int64_t t = 0;
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

// One bias-corrected Adam update over a group of parameter blobs.
void adam_step(const std::vector<std::span<float>>& params,
               const std::vector<std::span<const float>>& grads, AdamState& state);

namespace detail {
// Symmetric reflection of index i into [0, n): ...cba|abc...|cba...
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}
// 1-D symmetric-boundary correlation along rows (axis=1) or columns (axis=0)
// of an h*w plane. Shared by the tape op and the raster-side blur so both
// paths are bit-identical.
void blur_axis(const float* in, float* out, int h, int w, std::span<const float> taps, int axis);
// Adjoint of blur_axis (scatter form).
void blur_axis_adjoint(const float* gout, float* gin, int h, int w, std::span<const float> taps,
                       int axis);
} // namespace detail

} // namespace erft
