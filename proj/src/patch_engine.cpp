#include "erft/patch_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "erft/parallel.hpp"
#include "erft/rng.hpp"

namespace erft {

namespace {

RasterImage window_reflect(const RasterImage& src, int y0, int x0, int h, int w) {
    RasterImage out(src.c, h, w);
    for (int b = 0; b < src.c; ++b)
        for (int y = 0; y < h; ++y) {
            const int sy = detail::reflect_index(y0 + y, src.h);
            for (int x = 0; x < w; ++x)
                out.at(b, y, x) = src.at(b, sy, detail::reflect_index(x0 + x, src.w));
        }
    return out;
}

std::string fmt_float(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

SplitResult split(const ImagePair& pair, int patch, int rim) {
    const int r = pair.ratio;
    require(patch >= 1 && patch % r == 0, ErrorKind::Config,
            "patch size must be a positive multiple of the ratio");
    require(rim >= 0 && rim % r == 0, ErrorKind::Config,
            "rim must be a non-negative multiple of the ratio");
    require(pair.pan.h % patch == 0 && pair.pan.w % patch == 0, ErrorKind::Geometry,
            "PAN " + pair.pan.dims() + " is not divisible by patch size " + std::to_string(patch));

    SplitResult out;
    PatchGrid& g = out.grid;
    g.patch = patch;
    g.rim = rim;
    g.ratio = r;
    g.rows = pair.pan.h / patch;
    g.cols = pair.pan.w / patch;
    g.image_h = pair.pan.h;
    g.image_w = pair.pan.w;
    g.bands = pair.lrms.c;
    g.cells.reserve(static_cast<std::size_t>(g.count()));
    out.payloads.reserve(static_cast<std::size_t>(g.count()));
    const int lp = patch / r, lrim = rim / r;
    for (int row = 0; row < g.rows; ++row) {
        for (int col = 0; col < g.cols; ++col) {
            PatchGrid::Cell c;
            c.index = row * g.cols + col;
            c.row = row;
            c.col = col;
            c.rim_real = {row > 0, row < g.rows - 1, col > 0, col < g.cols - 1};
            g.cells.push_back(c);
            PatchPayload p;
            p.pan = window_reflect(pair.pan, row * patch - rim, col * patch - rim, patch + 2 * rim,
                                   patch + 2 * rim);
            p.lrms = window_reflect(pair.lrms, row * lp - lrim, col * lp - lrim, lp + 2 * lrim,
                                    lp + 2 * lrim);
            out.payloads.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<int> select_training(const PatchGrid& grid, int m, std::uint64_t seed) {
    const int n = grid.count();
    require(m >= 1, ErrorKind::Config, "must select at least one training patch");
    require(m <= n, ErrorKind::Config,
            "cannot select " + std::to_string(m) + " of " + std::to_string(n) + " patches");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    SplitMix64 rng(derive_seed(seed, "select"));
    for (int i = 0; i < m; ++i) {
        const auto j = i + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(m));
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace {

RasterImage core_window(const RasterImage& padded, int rim, int core) {
    RasterImage out(padded.c, core, core);
    for (int b = 0; b < padded.c; ++b)
        for (int y = 0; y < core; ++y)
            for (int x = 0; x < core; ++x) out.at(b, y, x) = padded.at(b, rim + y, rim + x);
    return out;
}

} // namespace

AdaptOutcome adapt(const BackboneSplit& net, FeatureTailor& tailor, const PatchGrid& grid,
                   const std::vector<PatchPayload>& payloads, const AdaptConfig& cfg,
                   const MtfKernel& ms_kernel, const MtfKernel& pan_kernel) {
    require(net.frozen, ErrorKind::Contract, "adapt: the backbone must be frozen");
    require(tailor.trainable, ErrorKind::Contract, "adapt: the tailor must be unfrozen");
    require(static_cast<int>(payloads.size()) == grid.count(), ErrorKind::Contract,
            "adapt: payload count does not match the grid");
    require(cfg.epochs >= 1, ErrorKind::Config, "adapt: epochs must be >= 1");
    require(cfg.batch >= 1, ErrorKind::Config, "adapt: batch must be >= 1");

    AdaptOutcome out;
    out.selected = select_training(grid, cfg.train_patches, cfg.seed);
    const int m = static_cast<int>(out.selected.size());
    const int pool = std::min(cfg.batch, std::max(1, cfg.workers));

    // Frozen-path values are epoch-invariant: cache Z and X^0 per patch.
    struct PatchCache {
        Tensor lrms, pan, z, x0;
    };
    std::vector<PatchCache> cache(static_cast<std::size_t>(m));
    parallel_slots(m, pool, [&](int i) {
        const PatchPayload& p = payloads[static_cast<std::size_t>(out.selected[static_cast<std::size_t>(i)])];
        PatchCache& c = cache[static_cast<std::size_t>(i)];
        c.lrms = to_tensor(core_window(p.lrms, grid.rim / grid.ratio, grid.patch / grid.ratio));
        c.pan = to_tensor(core_window(p.pan, grid.rim, grid.patch));
        Tape tape;
        const NodeId y = tape.leaf(c.lrms);
        const NodeId pn = tape.leaf(c.pan);
        const NodeId z = fe_forward(tape, net, y, pn);
        const NodeId x0 = cm_forward(tape, net, z, y);
        c.z = tape.value(z);
        c.x0 = tape.value(x0);
    });

    auto params = tailor.named_params();
    std::vector<std::int64_t> sizes;
    for (auto& [name, t] : params) sizes.push_back(t->numel());
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.weight_decay = cfg.weight_decay;
    AdamState opt(acfg, sizes);

    struct Slot {
        std::vector<std::vector<float>> grads;
        LossBreakdown loss;
    };
    std::vector<Slot> slots(static_cast<std::size_t>(m));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        parallel_slots(m, pool, [&](int i) {
            const PatchCache& c = cache[static_cast<std::size_t>(i)];
            Tape tape;
            const NodeId y = tape.leaf(c.lrms);
            const NodeId pn = tape.leaf(c.pan);
            const NodeId z = tape.leaf(c.z);
            const NodeId x0 = tape.leaf(c.x0);
            ParamNodes reg;
            const NodeId zt = tailor_forward(tape, tailor, z, &reg);
            const NodeId xh = cm_forward(tape, net, zt, y);
            const LossTerms terms =
                total_loss(tape, cfg.weights, xh, x0, y, pn, ms_kernel, pan_kernel, grid.ratio);
            tape.backward(terms.total);
            Slot& s = slots[static_cast<std::size_t>(i)];
            s.loss = read_breakdown(tape, terms);
            s.grads.clear();
            for (auto& [name, id] : reg.items) {
                const auto g = tape.grad(id);
                s.grads.emplace_back(g.begin(), g.end());
            }
        });

        // ascending-index reduction, normalized by M
        std::vector<std::vector<float>> total(params.size());
        for (std::size_t j = 0; j < params.size(); ++j)
            total[j].assign(static_cast<std::size_t>(sizes[j]), 0.0f);
        for (int i = 0; i < m; ++i)
            for (std::size_t j = 0; j < params.size(); ++j)
                for (std::size_t k = 0; k < total[j].size(); ++k)
                    total[j][k] += slots[static_cast<std::size_t>(i)].grads[j][k];
        const float inv_m = 1.0f / static_cast<float>(m);
        for (auto& g : total)
            for (float& v : g) v *= inv_m;

        for (int i = 0; i < m; ++i)
            out.log.push_back(TrainLogRow{epoch, out.selected[static_cast<std::size_t>(i)],
                                          slots[static_cast<std::size_t>(i)].loss});

        std::vector<std::span<float>> pspans;
        std::vector<std::span<const float>> gspans;
        for (std::size_t j = 0; j < params.size(); ++j) {
            pspans.push_back(params[j].second->data());
            gspans.push_back(total[j]);
        }
        adam_step(pspans, gspans, opt);
    }

    freeze(tailor);
    return out;
}

std::vector<RasterImage> infer_all(const BackboneSplit& net, const FeatureTailor& tailor,
                                   const PatchGrid& grid, const std::vector<PatchPayload>& payloads,
                                   int batch, int workers) {
    require(!tailor.trainable, ErrorKind::Contract, "infer_all: the tailor must be frozen");
    require(net.frozen, ErrorKind::Contract, "infer_all: the backbone must be frozen");
    require(static_cast<int>(payloads.size()) == grid.count(), ErrorKind::Contract,
            "infer_all: payload count does not match the grid");
    require(batch >= 1, ErrorKind::Config, "infer_all: batch must be >= 1");
    std::vector<RasterImage> cores(payloads.size());
    const int pool = std::min(batch, std::max(1, workers));
    parallel_slots(grid.count(), pool, [&](int i) {
        const PatchPayload& p = payloads[static_cast<std::size_t>(i)];
        Tape tape;
        const NodeId y = tape.leaf(to_tensor(p.lrms));
        const NodeId pn = tape.leaf(to_tensor(p.pan));
        const NodeId xh = tailored_forward(tape, net, tailor, y, pn);
        cores[static_cast<std::size_t>(i)] =
            core_window(to_raster(tape.value(xh)), grid.rim, grid.patch);
    });
    return cores;
}

RasterImage stitch(const PatchGrid& grid, const std::vector<RasterImage>& cores) {
    require(static_cast<int>(cores.size()) == grid.count(), ErrorKind::Contract,
            "stitch: expected " + std::to_string(grid.count()) + " cores, got " +
                std::to_string(cores.size()));
    RasterImage out(grid.bands, grid.image_h, grid.image_w);
    for (const auto& cell : grid.cells) {
        const RasterImage& core = cores[static_cast<std::size_t>(cell.index)];
        require(core.c == grid.bands && core.h == grid.patch && core.w == grid.patch,
                ErrorKind::Contract, "stitch: core " + std::to_string(cell.index) + " has dims " +
                                         core.dims() + ", expected " + std::to_string(grid.patch));
        for (int b = 0; b < core.c; ++b)
            for (int y = 0; y < core.h; ++y)
                for (int x = 0; x < core.w; ++x)
                    out.at(b, cell.row * grid.patch + y, cell.col * grid.patch + x) =
                        core.at(b, y, x);
    }
    return out;
}

int required_rim(const BackboneSplit& net, bool with_tailor) {
    return net.receptive_field_radius() + (with_tailor ? 2 : 0) + net.ratio / 2;
}

// --- speedup calculator -------------------------------------------------------

namespace {
long long gcd_ll(long long a, long long b) {
    while (b != 0) {
        const long long t = a % b;
        a = b;
        b = t;
    }
    return a < 0 ? -a : a;
}
} // namespace

Rational Rational::make(long long n, long long d) {
    require(d != 0, ErrorKind::Config, "rational with zero denominator");
    if (d < 0) {
        n = -n;
        d = -d;
    }
    const long long g = gcd_ll(n < 0 ? -n : n, d);
    return Rational{g == 0 ? 0 : n / g, g == 0 ? 1 : d / g};
}

std::string Rational::str() const {
    if (den == 1) return std::to_string(num);
    return std::to_string(num) + "/" + std::to_string(den);
}

Rational theoretical_speedup(const SpeedupQuery& q) {
    require(q.n_patches >= 1 && q.m_selected >= 1 && q.batch >= 1, ErrorKind::Config,
            "speedup query: N, M, B must be >= 1");
    require(q.m_selected <= q.n_patches, ErrorKind::Config, "speedup query: M must be <= N");
    require(q.full_h >= 1 && q.full_w >= 1 && q.patch_h >= 1 && q.patch_w >= 1, ErrorKind::Config,
            "speedup query: sizes must be >= 1");
    require(q.n_patches * q.patch_h * q.patch_w == q.full_h * q.full_w, ErrorKind::Config,
            "speedup query: N*h*w must equal H*W");
    const __int128 nb = static_cast<__int128>(q.n_patches) * q.batch;
    const __int128 nnb = static_cast<__int128>(q.n_patches) * q.n_patches * q.batch;
    require(nnb <= static_cast<__int128>(9'000'000'000'000'000'000LL), ErrorKind::Config,
            "speedup query too large");
    switch (q.arch) {
    case Arch::Cnn:
        return q.phase == Phase::Train ? Rational::make(static_cast<long long>(nb), q.m_selected)
                                       : Rational::make(q.batch, 1);
    case Arch::Attention:
        return q.phase == Phase::Train ? Rational::make(static_cast<long long>(nnb), q.m_selected)
                                       : Rational::make(static_cast<long long>(nb), 1);
    }
    raise(ErrorKind::Config, "speedup query: unknown architecture");
}

// --- measurement bench ---------------------------------------------------------

namespace {

constexpr int kBenchChannels = 4;
constexpr int kAttnDim = 2;

std::vector<float> bench_image(int h, int w, int channels, std::uint64_t seed) {
    SplitMix64 rng(seed);
    std::vector<float> img(static_cast<std::size_t>(h) * w * channels);
    for (float& v : img) v = rng.uniform(0.0f, 1.0f);
    return img;
}

// Two 3x3 conv layers over kBenchChannels channels, zero padding.
double cnn_kernel(const float* img, int h, int w) {
    const int c = kBenchChannels;
    std::vector<float> a(img, img + static_cast<std::size_t>(h) * w * c);
    std::vector<float> b(a.size(), 0.0f);
    for (int layer = 0; layer < 2; ++layer) {
        const float* src = layer == 0 ? a.data() : b.data();
        float* dst = layer == 0 ? b.data() : a.data();
        for (int co = 0; co < c; ++co) {
            const float wv = 0.1f + 0.05f * static_cast<float>(co);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    float acc = 0.0f;
                    for (int ci = 0; ci < c; ++ci)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int sy = y + dy, sx = x + dx;
                                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                                acc += wv * src[(static_cast<std::size_t>(ci) * h + sy) * w + sx];
                            }
                    dst[(static_cast<std::size_t>(co) * h + y) * w + x] = acc;
                }
        }
    }
    double sum = 0.0;
    for (float v : a) sum += v;
    return sum;
}

// Dense pairwise token mixing: every pixel attends to every other pixel.
double attention_kernel(const float* img, int h, int w) {
    const int n = h * w;
    const int d = kAttnDim;
    std::vector<float> feat(static_cast<std::size_t>(n) * d);
    for (int t = 0; t < n; ++t)
        for (int k = 0; k < d; ++k)
            feat[static_cast<std::size_t>(t) * d + k] = img[static_cast<std::size_t>(k) * n + t];
    std::vector<float> out(static_cast<std::size_t>(n) * d, 0.0f);
    const float inv = 1.0f / static_cast<float>(n);
    for (int t = 0; t < n; ++t) {
        const float* ft = feat.data() + static_cast<std::size_t>(t) * d;
        float acc0 = 0.0f, acc1 = 0.0f;
        for (int s = 0; s < n; ++s) {
            const float* fs = feat.data() + static_cast<std::size_t>(s) * d;
            float dot = 0.0f;
            for (int k = 0; k < d; ++k) dot += ft[k] * fs[k];
            acc0 += dot * fs[0];
            acc1 += dot * fs[1 % d];
        }
        out[static_cast<std::size_t>(t) * d] = acc0 * inv;
        out[static_cast<std::size_t>(t) * d + 1 % d] = acc1 * inv;
    }
    double sum = 0.0;
    for (float v : out) sum += v;
    return sum;
}

double run_kernel(Arch arch, const float* img, int h, int w) {
    return arch == Arch::Cnn ? cnn_kernel(img, h, w) : attention_kernel(img, h, w);
}

std::vector<float> extract_patch(const std::vector<float>& img, int h, int w, int y0, int x0,
                                 int p) {
    std::vector<float> out(static_cast<std::size_t>(p) * p * kBenchChannels);
    for (int c = 0; c < kBenchChannels; ++c)
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x)
                out[(static_cast<std::size_t>(c) * p + y) * p + x] =
                    img[(static_cast<std::size_t>(c) * h + y0 + y) * w + x0 + x];
    return out;
}

double median5(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

volatile double g_bench_sink = 0.0;

} // namespace

std::vector<BenchRow> bench(Arch arch, std::span<const int> sizes, int patch, int m_selected,
                            int batch, int workers) {
    require(patch >= 1, ErrorKind::Config, "bench: patch must be >= 1");
    std::vector<BenchRow> rows;
    for (const int size : sizes) {
        require(size % patch == 0, ErrorKind::Geometry, "bench: size must be divisible by patch");
        const int grid = size / patch;
        const std::int64_t n = static_cast<std::int64_t>(grid) * grid;
        const std::int64_t m = std::min<std::int64_t>(m_selected, n);
        const auto img = bench_image(size, size, kBenchChannels, derive_seed(7, "bench"));
        std::vector<std::vector<float>> patches;
        for (int gy = 0; gy < grid; ++gy)
            for (int gx = 0; gx < grid; ++gx)
                patches.push_back(extract_patch(img, size, size, gy * patch, gx * patch, patch));

        auto time_ms = [](const std::function<void()>& fn) {
            std::vector<double> runs;
            for (int i = 0; i < 5; ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                fn();
                const auto t1 = std::chrono::steady_clock::now();
                runs.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
            return median5(std::move(runs));
        };

        for (const Phase phase : {Phase::Train, Phase::Infer}) {
            const std::int64_t count = phase == Phase::Train ? m : n;
            const double t_full = time_ms([&] { g_bench_sink = run_kernel(arch, img.data(), size, size); });
            const double t_patch = time_ms([&] {
                std::vector<double> sums(static_cast<std::size_t>(count));
                parallel_slots(static_cast<int>(count), std::min<int>(batch, workers), [&](int i) {
                    sums[static_cast<std::size_t>(i)] =
                        run_kernel(arch, patches[static_cast<std::size_t>(i)].data(), patch, patch);
                });
                double s = 0.0;
                for (double v : sums) s += v;
                g_bench_sink = s;
            });
            BenchRow row;
            row.arch = arch;
            row.phase = phase;
            row.image_h = size;
            row.image_w = size;
            row.patch = patch;
            row.n_patches = n;
            row.m_selected = m;
            row.batch = batch;
            row.t_full_ms = t_full;
            row.t_patch_ms = t_patch;
            row.speedup_measured = t_patch > 0 ? t_full / t_patch : 0.0;
            row.speedup_theory = theoretical_speedup(SpeedupQuery{
                arch, phase, n, m, batch, size, size, patch, patch});
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string bench_csv_header() {
    return "arch,phase,H,W,p,N,M,B,t_full_ms,t_patch_ms,speedup_measured,speedup_theory";
}

std::string bench_csv_row(const BenchRow& row) {
    std::string s;
    s += row.arch == Arch::Cnn ? "cnn" : "attention-toy";
    s += row.phase == Phase::Train ? ",train," : ",infer,";
    s += std::to_string(row.image_h) + "," + std::to_string(row.image_w) + "," +
         std::to_string(row.patch) + "," + std::to_string(row.n_patches) + "," +
         std::to_string(row.m_selected) + "," + std::to_string(row.batch) + ",";
    s += fmt_float(row.t_full_ms) + "," + fmt_float(row.t_patch_ms) + "," +
         fmt_float(row.speedup_measured) + "," + fmt_float(row.speedup_theory.value());
    return s;
}

std::string train_log_csv_header() { return "epoch,patch_id,spe,spa,ori,total"; }

std::string train_log_csv_row(const TrainLogRow& row) {
    return std::to_string(row.epoch) + "," + std::to_string(row.patch_id) + "," +
           fmt_float(row.loss.spectral) + "," + fmt_float(row.loss.spatial) + "," +
           fmt_float(row.loss.consistency) + "," + fmt_float(row.loss.total);
}

} // namespace erft
