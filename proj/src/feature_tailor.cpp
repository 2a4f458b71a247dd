#include "erft/feature_tailor.hpp"

#include <cmath>

#include "erft/rng.hpp"

namespace erft {

std::vector<std::pair<std::string, Tensor*>> FeatureTailor::named_params() {
    return {{"ft.c1.w", &conv1.weight},
            {"ft.c1.b", &conv1.bias},
            {"ft.c2.w", &conv2.weight},
            {"ft.c2.b", &conv2.bias}};
}

FeatureTailor build_tailor(int width, FtInit init, std::uint64_t seed, float init_gain) {
    require(width >= 1, ErrorKind::Config, "tailor width must be >= 1");
    require(init_gain >= 0.0f, ErrorKind::Config, "tailor init gain must be >= 0");
    SplitMix64 rng(derive_seed(seed, "tailor"));
    FeatureTailor ft;
    ft.width = width;
    ft.init = init;
    const float stddev = init_gain * std::sqrt(2.0f / static_cast<float>(width * 9));
    auto conv = [&](bool zero) {
        ConvParams p;
        p.weight = Tensor(Shape{width, width, 3, 3});
        p.bias = Tensor(Shape{1, width, 1, 1});
        for (float& v : p.weight.data()) {
            const float n = rng.normal(); // keep the draw order fixed across modes
            if (!zero) v = stddev * n;
        }
        return p;
    };
    ft.conv1 = conv(init == FtInit::ZeroFirst);
    ft.conv2 = conv(false);
    return ft;
}

NodeId tailor_forward(Tape& tape, const FeatureTailor& ft, NodeId z, ParamNodes* reg) {
    require(tape.value(z).shape().c == ft.width, ErrorKind::Geometry,
            "tailor_forward: feature width " + std::to_string(tape.value(z).shape().c) +
                " does not match tailor width " + std::to_string(ft.width));
    auto conv = [&](const ConvParams& p, NodeId input, const std::string& name) {
        Tensor w = p.weight;
        Tensor b = p.bias;
        w.requires_grad = ft.trainable;
        b.requires_grad = ft.trainable;
        const NodeId wid = tape.leaf(std::move(w));
        const NodeId bid = tape.leaf(std::move(b));
        if (reg) {
            reg->add(name + ".w", wid);
            reg->add(name + ".b", bid);
        }
        return conv2d(tape, input, wid, bid, Pad::Reflect);
    };
    NodeId g = conv(ft.conv1, z, "ft.c1");
    g = relu(tape, g);
    g = conv(ft.conv2, g, "ft.c2");
    return add(tape, z, g);
}

NodeId tailored_forward(Tape& tape, const BackboneSplit& net, const FeatureTailor& ft, NodeId lrms,
                        NodeId pan, ParamNodes* reg) {
    require(net.width == ft.width, ErrorKind::Geometry,
            "tailored_forward: backbone width != tailor width");
    const NodeId z = fe_forward(tape, net, lrms, pan);
    const NodeId zi = tailor_forward(tape, ft, z, reg);
    return cm_forward(tape, net, zi, lrms);
}

WeightArchive tailor_to_archive(const FeatureTailor& ft) {
    WeightArchive a;
    a.set_attr("kind.tailor", 1);
    a.set_attr("width", ft.width);
    a.set_attr("init_zero_first", ft.init == FtInit::ZeroFirst ? 1 : 0);
    FeatureTailor& mut = const_cast<FeatureTailor&>(ft);
    for (auto& [name, t] : mut.named_params()) {
        const Shape s = t->shape();
        a.add(name, {s.n, s.c, s.h, s.w}, std::vector<float>(t->data().begin(), t->data().end()));
    }
    return a;
}

FeatureTailor tailor_from_archive(const WeightArchive& archive) {
    require(archive.attr_if("kind.tailor").value_or(0) == 1, ErrorKind::Format,
            "archive does not hold feature-tailor weights");
    FeatureTailor ft;
    ft.width = static_cast<int>(archive.attr("width"));
    ft.init = archive.attr_if("init_zero_first").value_or(0) == 1 ? FtInit::ZeroFirst : FtInit::He;
    ft.trainable = false;
    for (auto& [name, t] : ft.named_params()) {
        const auto& b = archive.blob(name);
        require(b.dims.size() == 4, ErrorKind::Format, "blob '" + name + "' must be rank 4");
        *t = Tensor::from(Shape{b.dims[0], b.dims[1], b.dims[2], b.dims[3]}, b.data);
    }
    return ft;
}

} // namespace erft
