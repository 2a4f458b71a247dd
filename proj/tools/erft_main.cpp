#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "erft/config.hpp"
#include "erft/metrics.hpp"
#include "erft/rng.hpp"

namespace fs = std::filesystem;
using namespace erft;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
    bool print_config = false;
};

void attach_common(CLI::App* cmd, CommonOpts& c) {
    cmd->add_option("--config", c.config_path, "key=value config file");
    cmd->add_option("--set", c.sets, "override a config key (key=value, repeatable)");
    cmd->add_flag("--print-config", c.print_config, "print the resolved configuration and exit");
}

RunConfig resolve(const CommonOpts& c) {
    RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
    for (const auto& kv : c.sets) apply_override(cfg, kv);
    return cfg;
}

double ms_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), ErrorKind::Io, "cannot write '" + path.string() + "'");
    f << text;
    require(f.good(), ErrorKind::Io, "short write to '" + path.string() + "'");
}

std::vector<float> parse_triplet(const std::string& s, const char* what) {
    std::vector<float> vals;
    std::string cur;
    for (char ch : s + ",") {
        if (ch == ',') {
            char* end = nullptr;
            vals.push_back(std::strtof(cur.c_str(), &end));
            require(end != nullptr && *end == '\0' && !cur.empty(), ErrorKind::Config,
                    std::string(what) + ": expected g,o,gamma, got '" + s + "'");
            cur.clear();
        } else {
            cur += ch;
        }
    }
    require(vals.size() == 3, ErrorKind::Config,
            std::string(what) + ": expected three comma-separated values, got '" + s + "'");
    return vals;
}

// --- simulate ----------------------------------------------------------------

int cmd_simulate(const RunConfig& cfg, std::uint64_t seed, int scenes, int test_scenes, int bands,
                 int size, const std::string& out_dir, const std::string& shift_spec, bool force) {
    require(scenes >= 1, ErrorKind::Config, "simulate: need at least one scene");
    require(bands >= 1 && bands <= 8, ErrorKind::Config, "simulate: bands must be in 1..8");
    require(!out_dir.empty(), ErrorKind::Config, "simulate: --out is required");
    const fs::path dir(out_dir);
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        require(force, ErrorKind::Io,
                "simulate: '" + out_dir + "' exists and is not empty (use --force)");
    }
    fs::create_directories(dir);

    std::optional<SensorShift> shift_ms;
    std::optional<SensorShift> shift_pan;
    if (!shift_spec.empty()) {
        const auto v = parse_triplet(shift_spec, "--shift");
        shift_ms = SensorShift::uniform(bands, v[0], v[1], v[2]);
        shift_pan = SensorShift::uniform(1, v[0], v[1], v[2]);
    }

    const MtfKernel ms_k = ms_kernel_of(cfg, bands);
    const MtfKernel pan_k = pan_kernel_of(cfg);
    std::vector<SceneEntry> entries;
    const int total = scenes + test_scenes;
    for (int i = 0; i < total; ++i) {
        const bool is_test = i >= scenes;
        SceneImages scene =
            synth_scene(derive_seed(seed, "scene", static_cast<std::uint64_t>(i)), bands, size,
                        size, cfg.ratio);
        if (is_test && shift_ms) {
            scene.gt_ms = apply_sensor_shift(scene.gt_ms, *shift_ms);
            scene.pan_hr = apply_sensor_shift(scene.pan_hr, *shift_pan);
        }
        const WaldTriple triple = wald_simulate(scene.gt_ms, scene.pan_hr, ms_k, pan_k, cfg.ratio);
        char id[32];
        std::snprintf(id, sizeof(id), "scene_%03d", i);
        SceneEntry e;
        e.id = id;
        e.split = is_test ? "test" : "train";
        e.gt = std::string(id) + "_gt.erft";
        e.pan = std::string(id) + "_pan.erft";
        e.lrms = std::string(id) + "_lrms.erft";
        write_raster(triple.gt, dir / e.gt);
        write_raster(triple.pair.pan, dir / e.pan);
        write_raster(triple.pair.lrms, dir / e.lrms);
        entries.push_back(std::move(e));
    }
    write_manifest(dir, entries);
    std::cerr << "simulate: wrote " << total << " scenes (" << scenes << " train, " << test_scenes
              << " test) to " << out_dir << "\n";
    return 0;
}

// --- pretrain ----------------------------------------------------------------

int cmd_pretrain(const RunConfig& cfg, const std::string& data_dir, const std::string& out_path,
                 std::string log_path) {
    require(!data_dir.empty(), ErrorKind::Config, "pretrain: --data is required");
    require(!out_path.empty(), ErrorKind::Config, "pretrain: --out is required");
    const auto entries = read_manifest(data_dir);
    std::vector<PretrainSample> samples;
    for (const auto& e : entries) {
        if (e.split != "train") continue;
        PretrainSample s;
        s.gt = read_raster(fs::path(data_dir) / e.gt);
        s.pan = read_raster(fs::path(data_dir) / e.pan);
        s.lrms = read_raster(fs::path(data_dir) / e.lrms);
        samples.push_back(std::move(s));
    }
    require(!samples.empty(), ErrorKind::Config, "pretrain: dataset has no train scenes");

    BackboneSplit net = build_backbone(samples[0].lrms.c, cfg.feature_width, cfg.blocks, cfg.ratio,
                                       cfg.seed);
    const auto log = pretrain(net, samples, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.weight_decay,
                              cfg.patch, cfg.pretrain_batch, cfg.seed, resolve_workers(cfg));
    write_weights(backbone_to_archive(net), out_path);

    if (log_path.empty()) log_path = out_path + ".loss.csv";
    std::string csv = "epoch,step,l1\n";
    for (const auto& row : log) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%d,%.9g\n", row.epoch, row.step,
                      static_cast<double>(row.l1));
        csv += buf;
    }
    write_text(log_path, csv);
    std::printf("final_l1=%.6f\n", static_cast<double>(log.back().l1));
    return 0;
}

// --- adapt ---------------------------------------------------------------------

int cmd_adapt(const RunConfig& cfg, const std::vector<std::string>& pair_paths,
              const std::string& weights_path, const std::string& out_path, std::string ft_path,
              std::string log_path, bool no_ft) {
    require(pair_paths.size() == 2, ErrorKind::Config, "adapt: --pair needs PAN and LRMS paths");
    require(!weights_path.empty(), ErrorKind::Config, "adapt: --weights is required");
    require(!out_path.empty(), ErrorKind::Config, "adapt: --out is required");

    const ImagePair pair =
        validate_pair(read_raster(pair_paths[0]), read_raster(pair_paths[1]), cfg.ratio);
    BackboneSplit net = backbone_from_archive(read_weights(weights_path));
    require(net.bands == pair.lrms.c, ErrorKind::Geometry,
            "adapt: weights expect " + std::to_string(net.bands) + " bands, pair has " +
                std::to_string(pair.lrms.c));
    require(net.ratio == cfg.ratio, ErrorKind::Config,
            "adapt: weights were trained at ratio " + std::to_string(net.ratio));

    const int workers = resolve_workers(cfg);
    const AdaptConfig acfg = adapt_config_of(cfg);
    const MtfKernel ms_k = ms_kernel_of(cfg, net.bands);
    const MtfKernel pan_k = pan_kernel_of(cfg);

    if (cfg.rim < required_rim(net, true)) {
        std::cerr << "adapt: rim " << cfg.rim << " is below the exact-equivalence depth "
                  << required_rim(net, true)
                  << "; stitched output may differ from full-image inference near seams\n";
    }

    auto t0 = std::chrono::steady_clock::now();
    SplitResult sp = split(pair, cfg.patch, cfg.rim);
    const double t_split = ms_since(t0);

    FeatureTailor tailor = no_ft ? build_tailor(net.width, FtInit::He, cfg.seed, 0.0f)
                                 : build_tailor(net.width, acfg.init, cfg.seed, acfg.init_gain);
    std::string log_csv = train_log_csv_header() + "\n";
    t0 = std::chrono::steady_clock::now();
    if (no_ft || cfg.epochs == 0) {
        freeze(tailor);
    } else {
        const AdaptOutcome outcome = adapt(net, tailor, sp.grid, sp.payloads, acfg, ms_k, pan_k);
        for (const auto& row : outcome.log) log_csv += train_log_csv_row(row) + "\n";
    }
    const double t_adapt = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    const auto cores = infer_all(net, tailor, sp.grid, sp.payloads, cfg.batch, workers);
    const double t_infer = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    const RasterImage hrms = stitch(sp.grid, cores);
    const double t_stitch = ms_since(t0);

    write_raster(hrms, out_path);
    if (ft_path.empty()) ft_path = out_path + ".ft.erfw";
    write_weights(tailor_to_archive(tailor), ft_path);
    if (log_path.empty()) log_path = out_path + ".train.csv";
    write_text(log_path, log_csv);

    std::fprintf(stderr, "timing_ms split=%.3f adapt=%.3f infer=%.3f stitch=%.3f total=%.3f\n",
                 t_split, t_adapt, t_infer, t_stitch, t_split + t_adapt + t_infer + t_stitch);
    return 0;
}

// --- eval ------------------------------------------------------------------------

int cmd_eval(const RunConfig& cfg, const std::string& fused_path,
             const std::vector<std::string>& pair_paths, const std::string& gt_path,
             const std::string& out_path, std::string image_id) {
    require(!fused_path.empty(), ErrorKind::Config, "eval: --fused is required");
    require(pair_paths.size() == 2, ErrorKind::Config, "eval: --pair needs PAN and LRMS paths");
    const RasterImage fused = read_raster(fused_path);
    const ImagePair pair =
        validate_pair(read_raster(pair_paths[0]), read_raster(pair_paths[1]), cfg.ratio);
    std::optional<RasterImage> gt;
    if (!gt_path.empty()) gt = read_raster(gt_path);

    const auto t0 = std::chrono::steady_clock::now();
    MetricReport rep = evaluate_report(fused, pair, gt ? &*gt : nullptr,
                                       ms_kernel_of(cfg, fused.c), pan_kernel_of(cfg),
                                       cfg.metric_window);
    rep.wall_time_s = ms_since(t0) / 1000.0;

    if (image_id.empty()) image_id = fs::path(fused_path).stem().string();
    const std::string csv = metric_csv_header() + "\n" + metric_csv_row(image_id, rep) + "\n";
    std::fputs(csv.c_str(), stdout);
    if (!out_path.empty()) write_text(out_path, csv);
    return 0;
}

// --- bench ------------------------------------------------------------------------

int cmd_bench(const RunConfig& cfg, const std::string& arch_name, const std::string& sizes_spec,
              const std::string& out_path) {
    Arch arch;
    if (arch_name == "cnn") {
        arch = Arch::Cnn;
    } else if (arch_name == "attention-toy") {
        arch = Arch::Attention;
    } else {
        raise(ErrorKind::Config, "bench: --arch must be cnn or attention-toy");
    }
    std::vector<int> sizes;
    std::string cur;
    for (char ch : sizes_spec + ",") {
        if (ch == ',') {
            if (!cur.empty()) sizes.push_back(std::atoi(cur.c_str()));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    require(!sizes.empty(), ErrorKind::Config, "bench: --sizes must list at least one size");

    const auto rows =
        bench(arch, sizes, cfg.patch, cfg.train_patches, cfg.batch, resolve_workers(cfg));
    std::string csv = bench_csv_header() + "\n";
    for (const auto& row : rows) csv += bench_csv_row(row) + "\n";
    std::fputs(csv.c_str(), stdout);
    if (!out_path.empty()) write_text(out_path, csv);
    return 0;
}

int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Geometry:
        return 3;
    case ErrorKind::Io:
    case ErrorKind::Format:
        return 4;
    default:
        return 2;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ERFT pansharpening test-time-adaptation toolkit"};
    app.require_subcommand(1);

    CommonOpts sim_c, pre_c, ada_c, eva_c, ben_c;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
    attach_common(sim, sim_c);
    std::uint64_t sim_seed = 0;
    bool sim_seed_given = false;
    int sim_scenes = 4, sim_test = 0, sim_bands = 8, sim_size = 256;
    std::string sim_out, sim_shift;
    bool sim_force = false;
    sim->add_option("--seed", sim_seed, "scene seed (defaults to the config seed)")
        ->each([&](const std::string&) { sim_seed_given = true; });
    sim->add_option("--scenes", sim_scenes, "number of train scenes");
    sim->add_option("--test-scenes", sim_test, "number of test scenes");
    sim->add_option("--bands", sim_bands, "MS band count (<= 8)");
    sim->add_option("--size", sim_size, "PAN size of each scene");
    sim->add_option("--out", sim_out, "output dataset directory");
    sim->add_option("--shift", sim_shift, "sensor shift g,o,gamma applied to test scenes");
    sim->add_flag("--force", sim_force, "overwrite a non-empty output directory");

    auto* pre = app.add_subcommand("pretrain", "supervised backbone pretraining");
    attach_common(pre, pre_c);
    std::string pre_data, pre_out, pre_log;
    pre->add_option("--data", pre_data, "dataset directory (from simulate)");
    pre->add_option("--out", pre_out, "output weight archive");
    pre->add_option("--log", pre_log, "loss curve CSV (default <out>.loss.csv)");

    auto* ada = app.add_subcommand("adapt", "patch-wise test-time adaptation + inference");
    attach_common(ada, ada_c);
    std::vector<std::string> ada_pair;
    std::string ada_weights, ada_out, ada_ft, ada_log;
    bool ada_noft = false;
    ada->add_option("--pair", ada_pair, "PAN and LRMS rasters")->expected(2);
    ada->add_option("--weights", ada_weights, "pretrained backbone archive");
    ada->add_option("--out", ada_out, "output HRMS raster");
    ada->add_option("--out-ft", ada_ft, "adapted tailor archive (default <out>.ft.erfw)");
    ada->add_option("--log", ada_log, "training log CSV (default <out>.train.csv)");
    ada->add_flag("--no-ft", ada_noft, "frozen baseline: skip the feature tailor");

    auto* eva = app.add_subcommand("eval", "fusion quality metrics");
    attach_common(eva, eva_c);
    std::vector<std::string> eva_pair;
    std::string eva_fused, eva_gt, eva_out, eva_id;
    eva->add_option("--fused", eva_fused, "fused HRMS raster");
    eva->add_option("--pair", eva_pair, "PAN and LRMS rasters")->expected(2);
    eva->add_option("--gt", eva_gt, "ground truth for reduced-resolution metrics");
    eva->add_option("--out", eva_out, "also write the CSV here");
    eva->add_option("--id", eva_id, "image id column (default: fused file stem)");

    auto* ben = app.add_subcommand("bench", "patch-wise speedup measurements");
    attach_common(ben, ben_c);
    std::string ben_arch = "cnn", ben_sizes = "128", ben_out;
    ben->add_option("--arch", ben_arch, "cnn | attention-toy");
    ben->add_option("--sizes", ben_sizes, "comma-separated square image sizes");
    ben->add_option("--out", ben_out, "also write the CSV here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const CommonOpts& common = sim->parsed()   ? sim_c
                                   : pre->parsed() ? pre_c
                                   : ada->parsed() ? ada_c
                                   : eva->parsed() ? eva_c
                                                   : ben_c;
        RunConfig cfg = resolve(common);
        if (common.print_config) {
            std::fputs(print_config(cfg).c_str(), stdout);
            return 0;
        }
        if (sim->parsed())
            return cmd_simulate(cfg, sim_seed_given ? sim_seed : cfg.seed, sim_scenes, sim_test,
                                sim_bands, sim_size, sim_out, sim_shift, sim_force);
        if (pre->parsed()) return cmd_pretrain(cfg, pre_data, pre_out, pre_log);
        if (ada->parsed())
            return cmd_adapt(cfg, ada_pair, ada_weights, ada_out, ada_ft, ada_log, ada_noft);
        if (eva->parsed()) return cmd_eval(cfg, eva_fused, eva_pair, eva_gt, eva_out, eva_id);
        if (ben->parsed()) return cmd_bench(cfg, ben_arch, ben_sizes, ben_out);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
