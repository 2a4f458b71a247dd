#include "erft/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "erft/parallel.hpp"
#include "erft/rng.hpp"

namespace erft {

namespace {

ConvParams he_conv(int cout, int cin, int k, SplitMix64& rng, float gain = 1.0f) {
    ConvParams p;
    p.weight = Tensor(Shape{cout, cin, k, k});
    p.bias = Tensor(Shape{1, cout, 1, 1});
    const float stddev = gain * std::sqrt(2.0f / static_cast<float>(cin * k * k));
    for (float& v : p.weight.data()) v = stddev * rng.normal();
    return p;
}

NodeId conv_leafed(Tape& tape, const ConvParams& p, NodeId input, bool trainable,
                   const std::string& name, ParamNodes* reg) {
    Tensor w = p.weight;
    Tensor b = p.bias;
    w.requires_grad = trainable;
    b.requires_grad = trainable;
    const NodeId wid = tape.leaf(std::move(w));
    const NodeId bid = tape.leaf(std::move(b));
    if (reg) {
        reg->add(name + ".w", wid);
        reg->add(name + ".b", bid);
    }
    return conv2d(tape, input, wid, bid, Pad::Reflect);
}

} // namespace

std::int64_t BackboneSplit::parameter_count() const {
    std::int64_t n = fe_in.weight.numel() + fe_in.bias.numel();
    for (const auto& [a, b] : fe_blocks)
        n += a.weight.numel() + a.bias.numel() + b.weight.numel() + b.bias.numel();
    return n + cm.weight.numel() + cm.bias.numel();
}

std::vector<std::pair<std::string, Tensor*>> BackboneSplit::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("fe.in.w", &fe_in.weight);
    out.emplace_back("fe.in.b", &fe_in.bias);
    for (std::size_t i = 0; i < fe_blocks.size(); ++i) {
        const std::string p = "fe.b" + std::to_string(i);
        out.emplace_back(p + ".a.w", &fe_blocks[i].first.weight);
        out.emplace_back(p + ".a.b", &fe_blocks[i].first.bias);
        out.emplace_back(p + ".b.w", &fe_blocks[i].second.weight);
        out.emplace_back(p + ".b.b", &fe_blocks[i].second.bias);
    }
    out.emplace_back("cm.w", &cm.weight);
    out.emplace_back("cm.b", &cm.bias);
    return out;
}

BackboneSplit build_backbone(int bands, int width, int blocks, int ratio, std::uint64_t seed) {
    require(bands >= 1, ErrorKind::Config, "backbone bands must be >= 1");
    require(width >= bands, ErrorKind::Config, "backbone width must be >= band count");
    require(blocks >= 1, ErrorKind::Config, "backbone needs at least one residual block");
    require(ratio >= 2, ErrorKind::Config, "backbone ratio must be >= 2");
    SplitMix64 rng(derive_seed(seed, "backbone"));
    BackboneSplit net;
    net.bands = bands;
    net.width = width;
    net.blocks = blocks;
    net.ratio = ratio;
    net.fe_in = he_conv(width, bands + 1, 3, rng);
    for (int i = 0; i < blocks; ++i)
        net.fe_blocks.emplace_back(he_conv(width, width, 3, rng), he_conv(width, width, 3, rng));
    net.cm = he_conv(bands, width, 3, rng);
    return net;
}

NodeId fe_forward(Tape& tape, const BackboneSplit& net, NodeId lrms, NodeId pan, ParamNodes* reg) {
    require(tape.value(lrms).shape().c == net.bands, ErrorKind::Geometry,
            "fe_forward: LRMS has " + std::to_string(tape.value(lrms).shape().c) + " bands, net has " +
                std::to_string(net.bands));
    require(tape.value(pan).shape().c == 1, ErrorKind::Geometry, "fe_forward: PAN must be single-band");
    const bool train = !net.frozen;
    const NodeId up = bilinear_upsample(tape, lrms, net.ratio);
    require(tape.value(up).shape().h == tape.value(pan).shape().h &&
                tape.value(up).shape().w == tape.value(pan).shape().w,
            ErrorKind::Geometry, "fe_forward: PAN and upsampled LRMS sizes differ");
    NodeId x = concat_channels(tape, up, pan);
    x = conv_leafed(tape, net.fe_in, x, train, "fe.in", reg);
    for (std::size_t i = 0; i < net.fe_blocks.size(); ++i) {
        const std::string p = "fe.b" + std::to_string(i);
        NodeId t = conv_leafed(tape, net.fe_blocks[i].first, x, train, p + ".a", reg);
        t = relu(tape, t);
        t = conv_leafed(tape, net.fe_blocks[i].second, t, train, p + ".b", reg);
        x = add(tape, x, t);
    }
    return x;
}

NodeId cm_forward(Tape& tape, const BackboneSplit& net, NodeId z, NodeId lrms, ParamNodes* reg) {
    require(tape.value(z).shape().c == net.width, ErrorKind::Geometry,
            "cm_forward: feature width " + std::to_string(tape.value(z).shape().c) +
                " does not match net width " + std::to_string(net.width));
    const NodeId detail = conv_leafed(tape, net.cm, z, !net.frozen, "cm", reg);
    const NodeId up = bilinear_upsample(tape, lrms, net.ratio);
    return add(tape, detail, up);
}

NodeId full_forward(Tape& tape, const BackboneSplit& net, NodeId lrms, NodeId pan, ParamNodes* reg) {
    return cm_forward(tape, net, fe_forward(tape, net, lrms, pan, reg), lrms, reg);
}

Tensor to_tensor(const RasterImage& image) {
    Tensor t(Shape{1, image.c, image.h, image.w});
    std::copy(image.samples.begin(), image.samples.end(), t.data().begin());
    return t;
}

RasterImage to_raster(const Tensor& t) {
    require(t.shape().n == 1, ErrorKind::Geometry, "to_raster expects a batch of one");
    RasterImage img(t.shape().c, t.shape().h, t.shape().w);
    std::copy(t.data().begin(), t.data().end(), img.samples.begin());
    return img;
}

RasterImage infer_pair(const BackboneSplit& net, const RasterImage& lrms, const RasterImage& pan) {
    Tape tape;
    const NodeId y = tape.leaf(to_tensor(lrms));
    const NodeId p = tape.leaf(to_tensor(pan));
    return to_raster(tape.value(full_forward(tape, net, y, p)));
}

namespace {

struct TileRef {
    int scene;
    int y0; // PAN scale
    int x0;
};

} // namespace

std::vector<PretrainLogRow> pretrain(BackboneSplit& net, const std::vector<PretrainSample>& data,
                                     int epochs, float lr, float weight_decay, int patch, int batch,
                                     std::uint64_t seed, int workers) {
    require(!data.empty(), ErrorKind::Config, "pretrain: dataset is empty");
    require(epochs >= 1, ErrorKind::Config, "pretrain: epochs must be >= 1");
    require(batch >= 1, ErrorKind::Config, "pretrain: batch must be >= 1");
    const int r = net.ratio;
    require(patch % r == 0, ErrorKind::Geometry, "pretrain: patch must be divisible by the ratio");

    std::vector<TileRef> tiles;
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto& d = data[s];
        require(d.gt.c == net.bands && d.lrms.c == net.bands, ErrorKind::Geometry,
                "pretrain: sample band count does not match the backbone");
        require(d.pan.h % patch == 0 && d.pan.w % patch == 0, ErrorKind::Geometry,
                "pretrain: PAN " + d.pan.dims() + " not divisible by patch " + std::to_string(patch));
        require(d.gt.h == d.pan.h && d.gt.w == d.pan.w, ErrorKind::Geometry,
                "pretrain: GT must be at PAN scale");
        require(d.lrms.h * r == d.pan.h && d.lrms.w * r == d.pan.w, ErrorKind::Geometry,
                "pretrain: LRMS must be at 1/r scale");
        for (int y = 0; y + patch <= d.pan.h; y += patch)
            for (int x = 0; x + patch <= d.pan.w; x += patch)
                tiles.push_back(TileRef{static_cast<int>(s), y, x});
    }

    auto crop = [](const RasterImage& src, int y0, int x0, int h, int w) {
        RasterImage out(src.c, h, w);
        for (int b = 0; b < src.c; ++b)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(b, y, x) = src.at(b, y0 + y, x0 + x);
        return out;
    };

    net.frozen = false;
    auto params = net.named_params();
    std::vector<std::int64_t> sizes;
    for (auto& [name, t] : params) sizes.push_back(t->numel());
    AdamConfig acfg;
    acfg.lr = lr;
    acfg.weight_decay = weight_decay;
    AdamState opt(acfg, sizes);

    std::vector<PretrainLogRow> log;
    const int lp = patch / r;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        std::vector<TileRef> order = tiles;
        SplitMix64 rng(derive_seed(seed, "pretrain", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next_below(i)]);
        int step = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            const int bsz = static_cast<int>(
                std::min<std::size_t>(static_cast<std::size_t>(batch), order.size() - start));

            // members run on independent tapes (possibly in parallel); the
            // mean loss and its gradient are reduced in member order
            struct MemberOut {
                float loss = 0.0f;
                std::vector<std::vector<float>> grads;
            };
            std::vector<MemberOut> members(static_cast<std::size_t>(bsz));
            parallel_slots(bsz, std::min(workers, batch), [&](int i) {
                const TileRef& tref = order[start + static_cast<std::size_t>(i)];
                const auto& d = data[static_cast<std::size_t>(tref.scene)];
                Tape tape;
                const NodeId yid =
                    tape.leaf(to_tensor(crop(d.lrms, tref.y0 / r, tref.x0 / r, lp, lp)));
                const NodeId pid = tape.leaf(to_tensor(crop(d.pan, tref.y0, tref.x0, patch, patch)));
                const NodeId gid = tape.leaf(to_tensor(crop(d.gt, tref.y0, tref.x0, patch, patch)));
                ParamNodes reg;
                const NodeId pred = full_forward(tape, net, yid, pid, &reg);
                const NodeId loss = l1_mean(tape, pred, gid);
                tape.backward(loss);
                MemberOut& m = members[static_cast<std::size_t>(i)];
                m.loss = tape.value(loss).data()[0];
                for (std::size_t j = 0; j < params.size(); ++j) {
                    const auto g = tape.grad(reg.items[j].second);
                    m.grads.emplace_back(g.begin(), g.end());
                }
            });

            std::vector<std::vector<float>> total(params.size());
            for (std::size_t j = 0; j < params.size(); ++j)
                total[j].assign(static_cast<std::size_t>(sizes[j]), 0.0f);
            float loss_sum = 0.0f;
            for (int i = 0; i < bsz; ++i) {
                loss_sum += members[static_cast<std::size_t>(i)].loss;
                for (std::size_t j = 0; j < params.size(); ++j)
                    for (std::size_t k = 0; k < total[j].size(); ++k)
                        total[j][k] += members[static_cast<std::size_t>(i)].grads[j][k];
            }
            const float inv = 1.0f / static_cast<float>(bsz);
            for (auto& g : total)
                for (float& v : g) v *= inv;

            std::vector<std::span<float>> pspans;
            std::vector<std::span<const float>> gspans;
            for (std::size_t j = 0; j < params.size(); ++j) {
                pspans.push_back(params[j].second->data());
                gspans.push_back(total[j]);
            }
            adam_step(pspans, gspans, opt);
            log.push_back(PretrainLogRow{epoch, step, loss_sum * inv});
            ++step;
        }
    }
    net.frozen = true;
    return log;
}

WeightArchive backbone_to_archive(const BackboneSplit& net) {
    WeightArchive a;
    a.set_attr("kind.backbone", 1);
    a.set_attr("bands", net.bands);
    a.set_attr("width", net.width);
    a.set_attr("blocks", net.blocks);
    a.set_attr("ratio", net.ratio);
    auto copy = [&a](const std::string& name, const Tensor& t) {
        const Shape s = t.shape();
        a.add(name, {s.n, s.c, s.h, s.w}, std::vector<float>(t.data().begin(), t.data().end()));
    };
    BackboneSplit& mut = const_cast<BackboneSplit&>(net);
    for (auto& [name, t] : mut.named_params()) copy(name, *t);
    return a;
}

BackboneSplit backbone_from_archive(const WeightArchive& archive) {
    require(archive.attr_if("kind.backbone").value_or(0) == 1, ErrorKind::Format,
            "archive does not hold backbone weights");
    BackboneSplit net;
    net.bands = static_cast<int>(archive.attr("bands"));
    net.width = static_cast<int>(archive.attr("width"));
    net.blocks = static_cast<int>(archive.attr("blocks"));
    net.ratio = static_cast<int>(archive.attr("ratio"));
    net.fe_blocks.resize(static_cast<std::size_t>(net.blocks));
    net.frozen = true;
    auto load = [&archive](const std::string& name, Tensor& t) {
        const auto& b = archive.blob(name);
        require(b.dims.size() == 4, ErrorKind::Format, "blob '" + name + "' must be rank 4");
        t = Tensor::from(Shape{b.dims[0], b.dims[1], b.dims[2], b.dims[3]}, b.data);
    };
    for (auto& [name, t] : net.named_params()) load(name, *t);
    return net;
}

} // namespace erft
