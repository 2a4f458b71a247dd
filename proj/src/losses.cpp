#include "erft/losses.hpp"

namespace erft {

NodeId spectral_loss(Tape& tape, NodeId xhat, NodeId lrms, const MtfKernel& ms_kernel, int ratio) {
    const Shape xs = tape.value(xhat).shape();
    const Shape ys = tape.value(lrms).shape();
    require(xs.c == ys.c && xs.h == ys.h * ratio && xs.w == ys.w * ratio && xs.n == ys.n,
            ErrorKind::Geometry,
            "spectral_loss: output " + xs.str() + " and LRMS " + ys.str() +
                " are not aligned at ratio " + std::to_string(ratio));
    const NodeId degraded = decimate(tape, mtf_blur(tape, xhat, ms_kernel), ratio);
    return l1_mean(tape, degraded, lrms);
}

NodeId spatial_loss(Tape& tape, NodeId xhat, NodeId pan, const MtfKernel& pan_kernel) {
    const Shape xs = tape.value(xhat).shape();
    const Shape ps = tape.value(pan).shape();
    require(ps.c == 1, ErrorKind::Geometry, "spatial_loss: PAN must be single-band");
    require(xs.h == ps.h && xs.w == ps.w && xs.n == ps.n, ErrorKind::Geometry,
            "spatial_loss: output " + xs.str() + " and PAN " + ps.str() + " sizes differ");
    const NodeId xb = mtf_blur(tape, xhat, pan_kernel);
    const NodeId pb = mtf_blur(tape, pan, pan_kernel);
    const NodeId ratio_map = div_guard(tape, pan, pb);      // P / PB, guarded
    const NodeId modulated = mul(tape, xb, ratio_map);      // broadcasts over bands
    return l1_mean(tape, xhat, modulated);
}

NodeId consistency_loss(Tape& tape, NodeId xhat, NodeId xhat0) {
    require(!tape.view(xhat0).needs_grad, ErrorKind::Contract,
            "consistency_loss: the reference output must not require gradients");
    return l1_mean(tape, xhat, xhat0);
}

LossTerms total_loss(Tape& tape, const LossWeights& weights, NodeId xhat, NodeId xhat0, NodeId lrms,
                     NodeId pan, const MtfKernel& ms_kernel, const MtfKernel& pan_kernel, int ratio) {
    require(weights.spectral >= 0.0f && weights.spatial >= 0.0f && weights.consistency >= 0.0f,
            ErrorKind::Config, "loss weights must be non-negative");
    LossTerms t;
    t.spectral = spectral_loss(tape, xhat, lrms, ms_kernel, ratio);
    t.spatial = spatial_loss(tape, xhat, pan, pan_kernel);
    t.consistency = consistency_loss(tape, xhat, xhat0);
    t.total = weighted_sum(tape, {t.spectral, t.spatial, t.consistency},
                           {weights.spectral, weights.spatial, weights.consistency});
    return t;
}

LossBreakdown read_breakdown(const Tape& tape, const LossTerms& terms) {
    LossBreakdown b;
    b.spectral = tape.value(terms.spectral).data()[0];
    b.spatial = tape.value(terms.spatial).data()[0];
    b.consistency = tape.value(terms.consistency).data()[0];
    b.total = tape.value(terms.total).data()[0];
    return b;
}

} // namespace erft
