#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "erft/backbone.hpp"
#include "erft/feature_tailor.hpp"
#include "erft/losses.hpp"

namespace erft {

// Tiling geometry in PAN pixels. Patches tile the image exactly; each cell
// additionally records whether its rim sides are backed by real image
// context (interior) or reflect fill (image border).
struct PatchGrid {
    int patch = 64;
    int rim = 4;
    int ratio = 4;
    int rows = 0, cols = 0;
    int image_h = 0, image_w = 0;
    int bands = 0;

    struct Cell {
        int index = 0, row = 0, col = 0;
        std::array<bool, 4> rim_real = {false, false, false, false}; // top,bottom,left,right
    };
    std::vector<Cell> cells;
    int count() const { return rows * cols; }
};

// Rim-padded windows for one patch: PAN (p+2R)^2 and LRMS (p+2R)/r squared.
struct PatchPayload {
    RasterImage pan;
    RasterImage lrms;
};

struct SplitResult {
    PatchGrid grid;
    std::vector<PatchPayload> payloads;
};

SplitResult split(const ImagePair& pair, int patch, int rim);

// Uniform sample of M patch indices without replacement (SplitMix64,
// integer-only draws), returned sorted ascending.
std::vector<int> select_training(const PatchGrid& grid, int m, std::uint64_t seed);

struct AdaptConfig {
    int train_patches = 8; // M
    int batch = 32;        // B, concurrency cap
    int epochs = 10;
    std::uint64_t seed = 1;
    float lr = 1e-4f;
    float weight_decay = 1e-5f;
    LossWeights weights{};
    FtInit init = FtInit::He;
    float init_gain = 1.0f;
    int workers = 1;
};

struct TrainLogRow {
    int epoch = 0;
    int patch_id = 0;
    LossBreakdown loss;
};

struct AdaptOutcome {
    std::vector<int> selected;
    std::vector<TrainLogRow> log;
};

// Algorithm: per epoch, run the tailored forward on every selected patch
// core, accumulate the unsupervised loss, and take one Adam step on phi with
// the patch-sum gradient normalized by M. Patch passes may run concurrently
// (up to min(B, workers)); the gradient reduction always happens in
// ascending patch-index order, so results do not depend on scheduling.
// Ends by freezing the tailor.
AdaptOutcome adapt(const BackboneSplit& net, FeatureTailor& tailor, const PatchGrid& grid,
                   const std::vector<PatchPayload>& payloads, const AdaptConfig& cfg,
                   const MtfKernel& ms_kernel, const MtfKernel& pan_kernel);

// Tailored forward on every rim-padded payload, rim trimmed from the result;
// outputs ordered by patch index and bit-identical for any batch/worker count.
std::vector<RasterImage> infer_all(const BackboneSplit& net, const FeatureTailor& tailor,
                                   const PatchGrid& grid, const std::vector<PatchPayload>& payloads,
                                   int batch, int workers);

// Exact tiling of trimmed cores; every output pixel written exactly once.
RasterImage stitch(const PatchGrid& grid, const std::vector<RasterImage>& cores);

// Rim depth at which stitched output equals full-image inference exactly
// (conv radius, tailor convs, plus the upsample boundary context).
int required_rim(const BackboneSplit& net, bool with_tailor);

// Exact rational p/q, normalized (gcd 1, positive denominator).
struct Rational {
    long long num = 0;
    long long den = 1;
    static Rational make(long long n, long long d);
    bool operator==(const Rational&) const = default;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    std::string str() const;
};

enum class Arch { Cnn, Attention };
enum class Phase { Train, Infer };

struct SpeedupQuery {
    Arch arch = Arch::Cnn;
    Phase phase = Phase::Train;
    std::int64_t n_patches = 0;  // N
    std::int64_t m_selected = 0; // M
    std::int64_t batch = 0;      // B
    std::int64_t full_h = 0, full_w = 0;
    std::int64_t patch_h = 0, patch_w = 0;
};

// Closed-form patch-wise speedups, exact rational arithmetic:
//   cnn       train (N/M)*B    infer B
//   attention train (N^2/M)*B  infer N*B
// The bench's B=1 rows isolate the subset-only effect (N/M resp. N^2/M).
Rational theoretical_speedup(const SpeedupQuery& q);

struct BenchRow {
    Arch arch = Arch::Cnn;
    Phase phase = Phase::Train;
    int image_h = 0, image_w = 0, patch = 0;
    std::int64_t n_patches = 0, m_selected = 0, batch = 0;
    double t_full_ms = 0, t_patch_ms = 0;
    double speedup_measured = 0;
    Rational speedup_theory;
};

// Median-of-5 wall times for full-image vs patch-wise execution of a fixed
// op-count kernel (cnn: small conv stack; attention: dense pairwise token
// mixing), for both phases at each square size.
std::vector<BenchRow> bench(Arch arch, std::span<const int> sizes, int patch, int m_selected,
                            int batch, int workers);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRow& row);

std::string train_log_csv_header();
std::string train_log_csv_row(const TrainLogRow& row);

} // namespace erft
