#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "erft/raster.hpp"
#include "erft/tensor.hpp"

namespace erft {

struct ConvParams {
    Tensor weight; // [Cout, Cin, k, k]
    Tensor bias;   // [1, Cout, 1, 1]
};

// Records which tape leaf holds which named parameter, so training code can
// read gradients back after backward().
struct ParamNodes {
    std::vector<std::pair<std::string, NodeId>> items;
    void add(std::string name, NodeId id) { items.emplace_back(std::move(name), id); }
};

// Pretrained pansharpening CNN factored into Feature Extractor and Channel
// Mapper around the width-S feature interface:
//   FE: conv (C+1 -> S), then k residual blocks (conv-relu-conv, shortcut add)
//   CM: one conv (S -> C), plus the upsampled-LRMS shortcut
// All convs are 3x3 with reflect padding.
struct BackboneSplit {
    int bands = 0;   // C
    int width = 32;  // S
    int blocks = 4;  // k
    int ratio = 4;
    bool frozen = true;

    ConvParams fe_in;
    std::vector<std::pair<ConvParams, ConvParams>> fe_blocks;
    ConvParams cm;

    // Radius grown by the 3x3 convs on the FE+CM path.
    int receptive_field_radius() const { return 2 * blocks + 2; }
    std::int64_t parameter_count() const;
    std::vector<std::pair<std::string, Tensor*>> named_params();
};

BackboneSplit build_backbone(int bands, int width, int blocks, int ratio, std::uint64_t seed);

// Z = FE(concat(upsample(Y, r), P)); lrms/pan are [1,C,h,w] / [1,1,H,W] nodes.
NodeId fe_forward(Tape& tape, const BackboneSplit& net, NodeId lrms, NodeId pan,
                  ParamNodes* reg = nullptr);

// X^ = conv(Z; cm) + upsample(Y, r).
NodeId cm_forward(Tape& tape, const BackboneSplit& net, NodeId z, NodeId lrms,
                  ParamNodes* reg = nullptr);

// Exactly cm_forward(fe_forward(.)).
NodeId full_forward(Tape& tape, const BackboneSplit& net, NodeId lrms, NodeId pan,
                    ParamNodes* reg = nullptr);

// Single-sample convenience: run the frozen net on a pair, return [C,H,W].
RasterImage infer_pair(const BackboneSplit& net, const RasterImage& lrms, const RasterImage& pan);

// Tensor <-> raster bridges ([1,C,H,W] batch of one).
Tensor to_tensor(const RasterImage& image);
RasterImage to_raster(const Tensor& t);

struct PretrainSample {
    RasterImage lrms;
    RasterImage pan;
    RasterImage gt;
};

struct PretrainLogRow {
    int epoch;
    int step;
    float l1;
};

// Supervised L1 pretraining on Wald-style triples, tiled into patch x patch
// crops (PAN scale) and batched. Batch members may run on parallel tapes;
// the gradient reduction is ordered, so the result is deterministic for a
// given seed regardless of the worker count.
std::vector<PretrainLogRow> pretrain(BackboneSplit& net, const std::vector<PretrainSample>& data,
                                     int epochs, float lr, float weight_decay, int patch, int batch,
                                     std::uint64_t seed, int workers = 1);

WeightArchive backbone_to_archive(const BackboneSplit& net);
BackboneSplit backbone_from_archive(const WeightArchive& archive);

} // namespace erft
