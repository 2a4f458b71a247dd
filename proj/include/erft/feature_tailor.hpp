#pragma once

#include <cstdint>

#include "erft/backbone.hpp"

namespace erft {

enum class FtInit {
    He,        // fan-in scaled random init on both layers (real-data mode)
    ZeroFirst, // first conv exactly zero (simulated-data mode)
};

// Residual correction G(.; phi) at the FE/CM interface: two 3x3 convs S -> S
// with a relu between, added back onto Z. The only parameters that train at
// test time.
struct FeatureTailor {
    int width = 0;
    bool trainable = true;
    FtInit init = FtInit::He;
    ConvParams conv1;
    ConvParams conv2;

    std::int64_t parameter_count() const {
        return conv1.weight.numel() + conv1.bias.numel() + conv2.weight.numel() +
               conv2.bias.numel();
    }
    std::vector<std::pair<std::string, Tensor*>> named_params();
};

// init_gain scales the He stddev on both layers; biases start at zero, so
// init_gain 0 (or ZeroFirst) makes G an exact identity at build time.
FeatureTailor build_tailor(int width, FtInit init, std::uint64_t seed, float init_gain = 1.0f);

// Z* = Z + G(Z); Z itself is treated as a constant input.
NodeId tailor_forward(Tape& tape, const FeatureTailor& ft, NodeId z, ParamNodes* reg = nullptr);

// X^* = CM(Z + G(Z)) + upsample(Y): the full ERFT-enhanced forward pass.
NodeId tailored_forward(Tape& tape, const BackboneSplit& net, const FeatureTailor& ft, NodeId lrms,
                        NodeId pan, ParamNodes* reg = nullptr);

inline void freeze(FeatureTailor& ft) { ft.trainable = false; }
inline void unfreeze(FeatureTailor& ft) { ft.trainable = true; }

WeightArchive tailor_to_archive(const FeatureTailor& ft);
FeatureTailor tailor_from_archive(const WeightArchive& archive);

} // namespace erft
