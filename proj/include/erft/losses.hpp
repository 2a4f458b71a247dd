#pragma once

#include "erft/degrade.hpp"
#include "erft/tensor.hpp"

namespace erft {

// Weights of the unsupervised objective. Real-data defaults (1, 1, 0.1);
// simulated-data mode uses (10, 100, 10000).
struct LossWeights {
    float spectral = 1.0f;
    float spatial = 1.0f;
    float consistency = 0.1f;
};

inline LossWeights simulated_mode_weights() { return LossWeights{10.0f, 100.0f, 10000.0f}; }

struct LossBreakdown {
    float spectral = 0.0f;
    float spatial = 0.0f;
    float consistency = 0.0f;
    float total = 0.0f;
};

struct LossTerms {
    NodeId spectral = -1;
    NodeId spatial = -1;
    NodeId consistency = -1;
    NodeId total = -1;
};

// mean |decimate(blur(X^*)) - Y|: the output, degraded through the MS MTF,
// must reproduce the observed LRMS.
NodeId spectral_loss(Tape& tape, NodeId xhat, NodeId lrms, const MtfKernel& ms_kernel, int ratio);

// mean |X^* - blur(X^*) o (P / blur(P))| with the guarded division; both
// blurs use the PAN-gain kernel and P broadcasts across the output bands.
NodeId spatial_loss(Tape& tape, NodeId xhat, NodeId pan, const MtfKernel& pan_kernel);

// mean |X^* - X^0| against the frozen-backbone output; xhat0 must be a
// constant node so no gradient reaches it.
NodeId consistency_loss(Tape& tape, NodeId xhat, NodeId xhat0);

// Weighted sum, accumulated in the fixed order spectral, spatial, consistency.
LossTerms total_loss(Tape& tape, const LossWeights& weights, NodeId xhat, NodeId xhat0, NodeId lrms,
                     NodeId pan, const MtfKernel& ms_kernel, const MtfKernel& pan_kernel, int ratio);

LossBreakdown read_breakdown(const Tape& tape, const LossTerms& terms);

} // namespace erft
