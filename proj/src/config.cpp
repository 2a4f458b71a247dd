#include "erft/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace erft {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    require(end != nullptr && *end == '\0' && !v.empty(), ErrorKind::Config,
            "config: '" + key + "' expects an integer, got '" + v + "'");
    return x;
}

float parse_float(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const float x = std::strtof(v.c_str(), &end);
    require(end != nullptr && *end == '\0' && !v.empty(), ErrorKind::Config,
            "config: '" + key + "' expects a number, got '" + v + "'");
    return x;
}

std::string fmt(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

void set_key(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "ratio") c.ratio = static_cast<int>(parse_int(key, value));
    else if (key == "patch") c.patch = static_cast<int>(parse_int(key, value));
    else if (key == "rim") c.rim = static_cast<int>(parse_int(key, value));
    else if (key == "train_patches") c.train_patches = static_cast<int>(parse_int(key, value));
    else if (key == "batch") c.batch = static_cast<int>(parse_int(key, value));
    else if (key == "epochs") c.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "lr") c.lr = parse_float(key, value);
    else if (key == "weight_decay") c.weight_decay = parse_float(key, value);
    else if (key == "eta_spectral") c.eta_spectral = parse_float(key, value);
    else if (key == "eta_spatial") c.eta_spatial = parse_float(key, value);
    else if (key == "eta_consistency") c.eta_consistency = parse_float(key, value);
    else if (key == "mtf_gain_ms") c.mtf_gain_ms = parse_float(key, value);
    else if (key == "mtf_gain_pan") c.mtf_gain_pan = parse_float(key, value);
    else if (key == "feature_width") c.feature_width = static_cast<int>(parse_int(key, value));
    else if (key == "blocks") c.blocks = static_cast<int>(parse_int(key, value));
    else if (key == "init_mode") {
        require(value == "he" || value == "zero_first", ErrorKind::Config,
                "config: init_mode must be 'he' or 'zero_first', got '" + value + "'");
        c.init_mode = value;
    } else if (key == "ft_init_gain") c.ft_init_gain = parse_float(key, value);
    else if (key == "workers") c.workers = static_cast<int>(parse_int(key, value));
    else if (key == "pretrain_epochs") c.pretrain_epochs = static_cast<int>(parse_int(key, value));
    else if (key == "pretrain_lr") c.pretrain_lr = parse_float(key, value);
    else if (key == "pretrain_batch") c.pretrain_batch = static_cast<int>(parse_int(key, value));
    else if (key == "metric_window") c.metric_window = static_cast<int>(parse_int(key, value));
    else raise(ErrorKind::Config, "config: unknown key '" + key + "'");
}

} // namespace

void apply_override(RunConfig& cfg, const std::string& kv) {
    const std::size_t eq = kv.find('=');
    require(eq != std::string::npos, ErrorKind::Config,
            "config: expected key=value, got '" + kv + "'");
    set_key(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        require(line.find('=') != std::string::npos, ErrorKind::Config,
                "config line " + std::to_string(lineno) + ": expected key=value");
        apply_override(cfg, line);
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::Io, "cannot read config '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string print_config(const RunConfig& c) {
    std::string s;
    s += "ratio=" + std::to_string(c.ratio) + "\n";
    s += "patch=" + std::to_string(c.patch) + "\n";
    s += "rim=" + std::to_string(c.rim) + "\n";
    s += "train_patches=" + std::to_string(c.train_patches) + "\n";
    s += "batch=" + std::to_string(c.batch) + "\n";
    s += "epochs=" + std::to_string(c.epochs) + "\n";
    s += "seed=" + std::to_string(c.seed) + "\n";
    s += "lr=" + fmt(c.lr) + "\n";
    s += "weight_decay=" + fmt(c.weight_decay) + "\n";
    s += "eta_spectral=" + fmt(c.eta_spectral) + "\n";
    s += "eta_spatial=" + fmt(c.eta_spatial) + "\n";
    s += "eta_consistency=" + fmt(c.eta_consistency) + "\n";
    s += "mtf_gain_ms=" + fmt(c.mtf_gain_ms) + "\n";
    s += "mtf_gain_pan=" + fmt(c.mtf_gain_pan) + "\n";
    s += "feature_width=" + std::to_string(c.feature_width) + "\n";
    s += "blocks=" + std::to_string(c.blocks) + "\n";
    s += "init_mode=" + c.init_mode + "\n";
    s += "ft_init_gain=" + fmt(c.ft_init_gain) + "\n";
    s += "workers=" + std::to_string(c.workers) + "\n";
    s += "pretrain_epochs=" + std::to_string(c.pretrain_epochs) + "\n";
    s += "pretrain_lr=" + fmt(c.pretrain_lr) + "\n";
    s += "pretrain_batch=" + std::to_string(c.pretrain_batch) + "\n";
    s += "metric_window=" + std::to_string(c.metric_window) + "\n";
    return s;
}

int resolve_workers(const RunConfig& cfg) {
    if (cfg.workers > 0) return cfg.workers;
    if (const char* env = std::getenv("ERFT_WORKERS")) {
        const int w = std::atoi(env);
        if (w > 0) return w;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

FtInit init_mode_of(const RunConfig& cfg) {
    return cfg.init_mode == "zero_first" ? FtInit::ZeroFirst : FtInit::He;
}

LossWeights loss_weights_of(const RunConfig& cfg) {
    return LossWeights{cfg.eta_spectral, cfg.eta_spatial, cfg.eta_consistency};
}

AdaptConfig adapt_config_of(const RunConfig& cfg) {
    AdaptConfig a;
    a.train_patches = cfg.train_patches;
    a.batch = cfg.batch;
    a.epochs = cfg.epochs;
    a.seed = cfg.seed;
    a.lr = cfg.lr;
    a.weight_decay = cfg.weight_decay;
    a.weights = loss_weights_of(cfg);
    a.init = init_mode_of(cfg);
    a.init_gain = cfg.ft_init_gain;
    a.workers = resolve_workers(cfg);
    return a;
}

MtfKernel ms_kernel_of(const RunConfig& cfg, int bands) {
    return build_mtf_kernel(cfg.ratio, std::vector<float>(static_cast<std::size_t>(bands), cfg.mtf_gain_ms));
}

MtfKernel pan_kernel_of(const RunConfig& cfg) {
    return build_mtf_kernel(cfg.ratio, {cfg.mtf_gain_pan});
}

void write_manifest(const std::filesystem::path& dir, const std::vector<SceneEntry>& entries) {
    std::ofstream f(dir / "manifest.tsv", std::ios::binary);
    require(f.good(), ErrorKind::Io, "cannot write manifest in '" + dir.string() + "'");
    f << "id\tsplit\tgt\tpan\tlrms\n";
    for (const auto& e : entries)
        f << e.id << '\t' << e.split << '\t' << e.gt << '\t' << e.pan << '\t' << e.lrms << '\n';
    require(f.good(), ErrorKind::Io, "short write to manifest");
}

std::vector<SceneEntry> read_manifest(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.tsv");
    require(f.good(), ErrorKind::Io, "cannot read manifest in '" + dir.string() + "'");
    std::string line;
    std::getline(f, line); // header
    std::vector<SceneEntry> out;
    while (std::getline(f, line)) {
        if (trim(line).empty()) continue;
        SceneEntry e;
        std::istringstream ls(line);
        require(static_cast<bool>(std::getline(ls, e.id, '\t')) &&
                    static_cast<bool>(std::getline(ls, e.split, '\t')) &&
                    static_cast<bool>(std::getline(ls, e.gt, '\t')) &&
                    static_cast<bool>(std::getline(ls, e.pan, '\t')) &&
                    static_cast<bool>(std::getline(ls, e.lrms, '\t')),
                ErrorKind::Format, "manifest line is malformed: '" + line + "'");
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace erft
