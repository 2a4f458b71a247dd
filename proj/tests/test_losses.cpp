#include <doctest.h>

#include <cmath>

#include "erft/feature_tailor.hpp"
#include "erft/losses.hpp"
#include "oracles.hpp"

using namespace erft;

TEST_SUITE("losses.spectral") {
    TEST_CASE("zero exactly on self-consistent construction") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f, 0.3f});
        const Tensor xhat = oracle::random_tensor(Shape{1, 2, 16, 16}, 1, 0.0f, 1.0f);
        Tape t;
        const NodeId x = t.leaf(xhat);
        const Tensor lrms = t.value(decimate(t, mtf_blur(t, x, k), 4));
        const NodeId y = t.leaf(lrms);
        const NodeId loss = spectral_loss(t, x, y, k, 4);
        CHECK(t.value(loss).data()[0] == 0.0f);
    }

    TEST_CASE("upsampled constant LRMS gives zero") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f});
        Tape t;
        const NodeId y = t.leaf(Tensor(Shape{1, 1, 4, 4}, 0.6f));
        const NodeId x = bilinear_upsample(t, y, 4);
        const NodeId loss = spectral_loss(t, x, y, k, 4);
        CHECK(t.value(loss).data()[0] <= 1e-7f);
    }

    TEST_CASE("gradient matches finite differences") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f, 0.3f, 0.3f, 0.3f, 0.3f, 0.3f, 0.3f, 0.3f});
        Tensor xhat = oracle::random_tensor(Shape{1, 8, 16, 16}, 2, 0.1f, 0.9f);
        xhat.requires_grad = true;
        const Tensor lrms = oracle::random_tensor(Shape{1, 8, 4, 4}, 3, 0.1f, 0.9f);
        Tape t;
        const NodeId x = t.leaf(xhat);
        const NodeId loss = spectral_loss(t, x, t.leaf(lrms), k, 4);
        t.backward(loss);
        CHECK(oracle::fd_check(t, loss, x, 60).max_rel < 1e-3);
    }

    TEST_CASE("misaligned shapes raise a geometry error") {
        const MtfKernel k = build_mtf_kernel(4, {0.3f});
        Tape t;
        const NodeId x = t.leaf(Tensor(Shape{1, 1, 16, 16}));
        const NodeId y = t.leaf(Tensor(Shape{1, 1, 5, 5}));
        CHECK_THROWS_AS(spectral_loss(t, x, y, k, 4), Error);
    }
}

TEST_SUITE("losses.spatial") {
    TEST_CASE("zero when the output equals the broadcast PAN held away from zero") {
        const MtfKernel pan_k = build_mtf_kernel(4, {0.15f});
        const Tensor pan = oracle::random_tensor(Shape{1, 1, 16, 16}, 4, 0.1f, 1.0f);
        Tensor xhat(Shape{1, 3, 16, 16});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 16; ++y)
                for (int x = 0; x < 16; ++x) xhat.at(0, c, y, x) = pan.at(0, 0, y, x);
        Tape t;
        const NodeId loss = spatial_loss(t, t.leaf(xhat), t.leaf(pan), pan_k);
        CHECK(t.value(loss).data()[0] <= 1e-6f);
    }

    TEST_CASE("zero for constant output and constant PAN") {
        const MtfKernel pan_k = build_mtf_kernel(4, {0.15f});
        Tape t;
        const NodeId loss = spatial_loss(t, t.leaf(Tensor(Shape{1, 2, 16, 16}, 0.4f)),
                                         t.leaf(Tensor(Shape{1, 1, 16, 16}, 0.8f)), pan_k);
        CHECK(t.value(loss).data()[0] <= 1e-6f);
    }

    TEST_CASE("gradient matches finite differences") {
        const MtfKernel pan_k = build_mtf_kernel(4, {0.15f});
        Tensor xhat = oracle::random_tensor(Shape{1, 3, 12, 12}, 5, 0.1f, 0.9f);
        xhat.requires_grad = true;
        const Tensor pan = oracle::random_tensor(Shape{1, 1, 12, 12}, 6, 0.15f, 1.0f);
        Tape t;
        const NodeId x = t.leaf(xhat);
        const NodeId loss = spatial_loss(t, x, t.leaf(pan), pan_k);
        t.backward(loss);
        CHECK(oracle::fd_check(t, loss, x, 60).max_rel < 1e-3);
    }
}

TEST_SUITE("losses.consistency") {
    TEST_CASE("zero at equal inputs and gradient flows only into the live branch") {
        const Tensor a = oracle::random_tensor(Shape{1, 2, 8, 8}, 7, 0.0f, 1.0f);
        Tensor live = a;
        live.requires_grad = true;
        Tape t;
        const NodeId x = t.leaf(live);
        const NodeId x0 = t.leaf(a);
        const NodeId loss = consistency_loss(t, x, x0);
        CHECK(t.value(loss).data()[0] == 0.0f);
        t.backward(loss);
        CHECK(!t.grad(x).empty());
        CHECK(t.grad(x0).empty());
    }

    TEST_CASE("rejects a reference that requires gradients") {
        Tensor bad(Shape{1, 1, 4, 4});
        bad.requires_grad = true;
        Tape t;
        const NodeId x = t.leaf(Tensor(Shape{1, 1, 4, 4}));
        CHECK_THROWS_AS(consistency_loss(t, x, t.leaf(bad)), Error);
    }
}

TEST_SUITE("losses.total") {
    TEST_CASE("weighted arithmetic with eta = (1, 1, 0.1)") {
        // components (0.2, 0.3, 0.5) -> 0.2 + 0.3 + 0.05 = 0.55
        Tape t;
        auto scalar_node = [&](float v) { return t.leaf(Tensor(Shape{1, 1, 1, 1}, v)); };
        const NodeId total = weighted_sum(t, {scalar_node(0.2f), scalar_node(0.3f), scalar_node(0.5f)},
                                          {1.0f, 1.0f, 0.1f});
        CHECK(t.value(total).data()[0] == doctest::Approx(0.55f).epsilon(1e-6));
    }

    TEST_CASE("defaults match the real-data setting and the simulated preset") {
        const LossWeights def{};
        CHECK(def.spectral == 1.0f);
        CHECK(def.spatial == 1.0f);
        CHECK(def.consistency == doctest::Approx(0.1f));
        const LossWeights sim = simulated_mode_weights();
        CHECK(sim.spectral == 10.0f);
        CHECK(sim.spatial == 100.0f);
        CHECK(sim.consistency == 10000.0f);
    }

    TEST_CASE("breakdown identity and non-negativity on a real pipeline graph") {
        const BackboneSplit net = build_backbone(2, 8, 1, 4, 8);
        const FeatureTailor ft = build_tailor(8, FtInit::He, 9, 0.4f);
        const MtfKernel ms_k = build_mtf_kernel(4, {0.3f, 0.3f});
        const MtfKernel pan_k = build_mtf_kernel(4, {0.15f});
        const Tensor lrms = oracle::random_tensor(Shape{1, 2, 4, 4}, 10, 0.0f, 1.0f);
        const Tensor pan = oracle::random_tensor(Shape{1, 1, 16, 16}, 11, 0.0f, 1.0f);
        Tape t;
        const NodeId y = t.leaf(lrms);
        const NodeId p = t.leaf(pan);
        const NodeId z = fe_forward(t, net, y, p);
        Tensor x0v = t.value(cm_forward(t, net, z, y));
        const NodeId x0 = t.leaf(std::move(x0v));
        const NodeId zt = tailor_forward(t, ft, z);
        const NodeId xh = cm_forward(t, net, zt, y);
        const LossWeights w{1.0f, 1.0f, 0.1f};
        const LossTerms terms = total_loss(t, w, xh, x0, y, p, ms_k, pan_k, 4);
        const LossBreakdown b = read_breakdown(t, terms);
        CHECK(b.spectral >= 0.0f);
        CHECK(b.spatial >= 0.0f);
        CHECK(b.consistency >= 0.0f);
        // exact bookkeeping in the pinned summation order
        const float expect = (w.spectral * b.spectral + w.spatial * b.spatial) +
                             w.consistency * b.consistency;
        CHECK(b.total == expect);
    }

    TEST_CASE("eta (0,0,1) with zero phi gives zero total") {
        const BackboneSplit net = build_backbone(2, 8, 1, 4, 12);
        const FeatureTailor ft = build_tailor(8, FtInit::He, 13, 0.0f);
        const MtfKernel ms_k = build_mtf_kernel(4, {0.3f, 0.3f});
        const MtfKernel pan_k = build_mtf_kernel(4, {0.15f});
        const Tensor lrms = oracle::random_tensor(Shape{1, 2, 4, 4}, 14, 0.0f, 1.0f);
        const Tensor pan = oracle::random_tensor(Shape{1, 1, 16, 16}, 15, 0.0f, 1.0f);
        Tape t;
        const NodeId y = t.leaf(lrms);
        const NodeId p = t.leaf(pan);
        const NodeId z = fe_forward(t, net, y, p);
        Tensor x0v = t.value(cm_forward(t, net, z, y));
        const NodeId x0 = t.leaf(std::move(x0v));
        const NodeId zt = tailor_forward(t, ft, z);
        const NodeId xh = cm_forward(t, net, zt, y);
        const LossTerms terms = total_loss(t, LossWeights{0.0f, 0.0f, 1.0f}, xh, x0, y, p, ms_k,
                                           pan_k, 4);
        CHECK(t.value(terms.total).data()[0] == 0.0f);
    }

    TEST_CASE("full objective gradient through phi matches finite differences (k=1, S=8)") {
        const BackboneSplit net = build_backbone(2, 8, 1, 4, 16);
        const FeatureTailor ft = build_tailor(8, FtInit::He, 17);
        const MtfKernel ms_k = build_mtf_kernel(4, {0.3f, 0.3f});
        const MtfKernel pan_k = build_mtf_kernel(4, {0.15f});
        const Tensor lrms = oracle::random_tensor(Shape{1, 2, 4, 4}, 18, 0.1f, 0.9f);
        const Tensor pan = oracle::random_tensor(Shape{1, 1, 16, 16}, 19, 0.1f, 0.9f);
        Tape t;
        const NodeId y = t.leaf(lrms);
        const NodeId p = t.leaf(pan);
        const NodeId z0 = fe_forward(t, net, y, p);
        Tensor zc = t.value(z0);
        const NodeId z = t.leaf(std::move(zc));
        Tensor x0v = t.value(cm_forward(t, net, z, y));
        const NodeId x0 = t.leaf(std::move(x0v));
        ParamNodes reg;
        const NodeId zt = tailor_forward(t, ft, z, &reg);
        const NodeId xh = cm_forward(t, net, zt, y);
        const LossTerms terms = total_loss(t, LossWeights{}, xh, x0, y, p, ms_k, pan_k, 4);
        t.backward(terms.total);
        for (const auto& [name, id] : reg.items) {
            const auto fd = oracle::fd_check(t, terms.total, id, 40, 1e-3, true);
            CHECK(fd.max_rel < 1e-3);
            if (name.ends_with(".w")) CHECK(fd.checked >= 25);
        }
    }
}
