#include "depthmatch/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "depthmatch/common.hpp"

namespace dm {
namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::pair<std::string, std::string>> parse_kv_lines(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::set<std::string> seen;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            fail(strfmt("config line %d: expected 'key = value', got '%s'", lineno, t.c_str()));
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty()) fail(strfmt("config line %d: empty key", lineno));
        if (val.empty()) fail(strfmt("config line %d: empty value for key '%s'", lineno, key.c_str()));
        if (!seen.insert(key).second)
            fail(strfmt("config line %d: duplicate key '%s'", lineno, key.c_str()));
        out.emplace_back(std::move(key), std::move(val));
    }
    return out;
}

double to_double(const std::string& key, const std::string& val) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(val, &pos);
    } catch (const std::exception&) {
        fail(strfmt("config key '%s': '%s' is not a number", key.c_str(), val.c_str()));
    }
    if (pos != val.size())
        fail(strfmt("config key '%s': trailing characters in '%s'", key.c_str(), val.c_str()));
    if (!std::isfinite(v)) fail(strfmt("config key '%s': value must be finite", key.c_str()));
    return v;
}

int to_int(const std::string& key, const std::string& val) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(val, &pos);
    } catch (const std::exception&) {
        fail(strfmt("config key '%s': '%s' is not an integer", key.c_str(), val.c_str()));
    }
    if (pos != val.size())
        fail(strfmt("config key '%s': trailing characters in '%s'", key.c_str(), val.c_str()));
    if (v < -(1LL << 31) || v > (1LL << 31) - 1)
        fail(strfmt("config key '%s': value out of range", key.c_str()));
    return static_cast<int>(v);
}

std::uint64_t to_u64(const std::string& key, const std::string& val) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(val, &pos);
    } catch (const std::exception&) {
        fail(strfmt("config key '%s': '%s' is not an unsigned integer", key.c_str(), val.c_str()));
    }
    if (pos != val.size())
        fail(strfmt("config key '%s': trailing characters in '%s'", key.c_str(), val.c_str()));
    return static_cast<std::uint64_t>(v);
}

bool to_bool(const std::string& key, const std::string& val) {
    if (val == "true" || val == "1") return true;
    if (val == "false" || val == "0") return false;
    fail(strfmt("config key '%s': expected true/false, got '%s'", key.c_str(), val.c_str()));
}

std::string fmt_double(double v) {
    // round-trippable, stable text for hashing
    std::string s = strfmt("%.17g", v);
    return s;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& train_setters() {
    static const std::map<std::string, Setter> m = {
        {"tau", [](TrainConfig& c, const std::string& k, const std::string& v) { c.tau = to_double(k, v); }},
        {"lambda_u", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lambda_u = to_double(k, v); }},
        {"masking_ratio", [](TrainConfig& c, const std::string& k, const std::string& v) { c.masking_ratio = to_double(k, v); }},
        {"cpma_patch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cpma_patch_size = to_int(k, v); }},
        {"cpma_on_labeled", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cpma_on_labeled = to_bool(k, v); }},
        {"batch_labeled", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_labeled = to_int(k, v); }},
        {"batch_unlabeled", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_unlabeled = to_int(k, v); }},
        {"epochs", [](TrainConfig& c, const std::string& k, const std::string& v) { c.epochs = to_int(k, v); }},
        {"ema_momentum", [](TrainConfig& c, const std::string& k, const std::string& v) { c.ema_momentum = to_double(k, v); }},
        {"lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr = to_double(k, v); }},
        {"weight_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.weight_decay = to_double(k, v); }},
        {"beta1", [](TrainConfig& c, const std::string& k, const std::string& v) { c.beta1 = to_double(k, v); }},
        {"beta2", [](TrainConfig& c, const std::string& k, const std::string& v) { c.beta2 = to_double(k, v); }},
        {"eps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.eps = to_double(k, v); }},
        {"poly_power", [](TrainConfig& c, const std::string& k, const std::string& v) { c.poly_power = to_double(k, v); }},
        {"backbone_lr_multiplier", [](TrainConfig& c, const std::string& k, const std::string& v) { c.backbone_lr_multiplier = to_double(k, v); }},
        {"patch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.patch_size = to_int(k, v); }},
        {"embed_dim", [](TrainConfig& c, const std::string& k, const std::string& v) { c.embed_dim = to_int(k, v); }},
        {"encoder_blocks", [](TrainConfig& c, const std::string& k, const std::string& v) { c.encoder_blocks = to_int(k, v); }},
        {"num_heads", [](TrainConfig& c, const std::string& k, const std::string& v) { c.num_heads = to_int(k, v); }},
        {"pos_grid", [](TrainConfig& c, const std::string& k, const std::string& v) { c.pos_grid = to_int(k, v); }},
        {"use_lspi", [](TrainConfig& c, const std::string& k, const std::string& v) { c.use_lspi = to_bool(k, v); }},
        {"use_cpma", [](TrainConfig& c, const std::string& k, const std::string& v) { c.use_cpma = to_bool(k, v); }},
        {"use_dgbl", [](TrainConfig& c, const std::string& k, const std::string& v) { c.use_dgbl = to_bool(k, v); }},
        {"rgb_only", [](TrainConfig& c, const std::string& k, const std::string& v) { c.rgb_only = to_bool(k, v); }},
        {"dgbl_soft_mode", [](TrainConfig& c, const std::string& k, const std::string& v) { c.dgbl_soft_mode = to_bool(k, v); }},
        {"lspi_stages", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lspi_stages = to_int(k, v); }},
        {"flip_prob", [](TrainConfig& c, const std::string& k, const std::string& v) { c.flip_prob = to_double(k, v); }},
        {"scale_min", [](TrainConfig& c, const std::string& k, const std::string& v) { c.scale_min = to_double(k, v); }},
        {"scale_max", [](TrainConfig& c, const std::string& k, const std::string& v) { c.scale_max = to_double(k, v); }},
        {"jitter_prob", [](TrainConfig& c, const std::string& k, const std::string& v) { c.jitter_prob = to_double(k, v); }},
        {"grayscale_prob", [](TrainConfig& c, const std::string& k, const std::string& v) { c.grayscale_prob = to_double(k, v); }},
        {"blur_prob", [](TrainConfig& c, const std::string& k, const std::string& v) { c.blur_prob = to_double(k, v); }},
        {"boundary_threshold", [](TrainConfig& c, const std::string& k, const std::string& v) { c.boundary_threshold = to_double(k, v); }},
        {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
    };
    return m;
}

void check_prob(const char* name, double v) {
    if (v < 0.0 || v > 1.0) fail(strfmt("config key '%s': must lie in [0,1], got %g", name, v));
}

}  // namespace

ModelConfig TrainConfig::model_config(int num_classes) const {
    ModelConfig mc;
    mc.patch_size = patch_size;
    mc.embed_dim = embed_dim;
    mc.encoder_blocks = encoder_blocks;
    mc.num_heads = num_heads;
    mc.num_classes = num_classes;
    mc.pos_grid = pos_grid;
    mc.rgb_only = rgb_only;
    mc.use_lspi = use_lspi;
    mc.lspi_stages = lspi_stages;
    return mc;
}

OptimConfig TrainConfig::optim_config(std::int64_t total_steps) const {
    OptimConfig oc;
    oc.base_lr = lr;
    oc.weight_decay = weight_decay;
    oc.beta1 = beta1;
    oc.beta2 = beta2;
    oc.eps = eps;
    oc.poly_power = poly_power;
    oc.total_steps = total_steps;
    oc.group_multipliers = {{"enc.", backbone_lr_multiplier}, {"embed.", backbone_lr_multiplier}};
    return oc;
}

void TrainConfig::validate() const {
    check_prob("tau", tau);
    if (lambda_u < 0.0) fail(strfmt("config key 'lambda_u': must be >= 0, got %g", lambda_u));
    if (masking_ratio < 0.0 || masking_ratio >= 1.0)
        fail(strfmt("config key 'masking_ratio': must lie in [0,1), got %g", masking_ratio));
    if (cpma_patch_size <= 0) fail("config key 'cpma_patch_size': must be positive");
    if (batch_labeled <= 0) fail("config key 'batch_labeled': must be positive");
    if (batch_unlabeled <= 0) fail("config key 'batch_unlabeled': must be positive");
    if (epochs <= 0) fail("config key 'epochs': must be positive");
    if (ema_momentum < 0.0 || ema_momentum >= 1.0)
        fail(strfmt("config key 'ema_momentum': must lie in [0,1), got %g", ema_momentum));
    if (lr <= 0.0) fail("config key 'lr': must be positive");
    if (weight_decay < 0.0) fail("config key 'weight_decay': must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0) fail("config key 'beta1': must lie in [0,1)");
    if (beta2 < 0.0 || beta2 >= 1.0) fail("config key 'beta2': must lie in [0,1)");
    if (eps <= 0.0) fail("config key 'eps': must be positive");
    if (poly_power < 0.0) fail("config key 'poly_power': must be >= 0");
    if (backbone_lr_multiplier <= 0.0)
        fail("config key 'backbone_lr_multiplier': must be positive");
    check_prob("flip_prob", flip_prob);
    check_prob("jitter_prob", jitter_prob);
    check_prob("grayscale_prob", grayscale_prob);
    check_prob("blur_prob", blur_prob);
    if (scale_min <= 0.0 || scale_max < scale_min)
        fail(strfmt("config: need 0 < scale_min <= scale_max, got [%g, %g]", scale_min, scale_max));
    if (boundary_threshold <= 0.0 || boundary_threshold >= 1.0)
        fail(strfmt("config key 'boundary_threshold': must lie in (0,1), got %g", boundary_threshold));
    // model-side constraints checked with a placeholder class count
    model_config(2).validate();
}

TrainConfig parse_train_config_text(const std::string& text) {
    TrainConfig cfg;
    const auto& setters = train_setters();
    for (const auto& [key, val] : parse_kv_lines(text)) {
        auto it = setters.find(key);
        if (it == setters.end()) fail(strfmt("config: unknown key '%s'", key.c_str()));
        it->second(cfg, key, val);
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(strfmt("cannot open config file %s", path.string().c_str()));
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_train_config_text(buf.str());
}

std::string resolved_config_text(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "tau = " << fmt_double(cfg.tau) << "\n";
    os << "lambda_u = " << fmt_double(cfg.lambda_u) << "\n";
    os << "masking_ratio = " << fmt_double(cfg.masking_ratio) << "\n";
    os << "cpma_patch_size = " << cfg.cpma_patch_size << "\n";
    os << "cpma_on_labeled = " << (cfg.cpma_on_labeled ? "true" : "false") << "\n";
    os << "batch_labeled = " << cfg.batch_labeled << "\n";
    os << "batch_unlabeled = " << cfg.batch_unlabeled << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "ema_momentum = " << fmt_double(cfg.ema_momentum) << "\n";
    os << "lr = " << fmt_double(cfg.lr) << "\n";
    os << "weight_decay = " << fmt_double(cfg.weight_decay) << "\n";
    os << "beta1 = " << fmt_double(cfg.beta1) << "\n";
    os << "beta2 = " << fmt_double(cfg.beta2) << "\n";
    os << "eps = " << fmt_double(cfg.eps) << "\n";
    os << "poly_power = " << fmt_double(cfg.poly_power) << "\n";
    os << "backbone_lr_multiplier = " << fmt_double(cfg.backbone_lr_multiplier) << "\n";
    os << "patch_size = " << cfg.patch_size << "\n";
    os << "embed_dim = " << cfg.embed_dim << "\n";
    os << "encoder_blocks = " << cfg.encoder_blocks << "\n";
    os << "num_heads = " << cfg.num_heads << "\n";
    os << "pos_grid = " << cfg.pos_grid << "\n";
    os << "use_lspi = " << (cfg.use_lspi ? "true" : "false") << "\n";
    os << "use_cpma = " << (cfg.use_cpma ? "true" : "false") << "\n";
    os << "use_dgbl = " << (cfg.use_dgbl ? "true" : "false") << "\n";
    os << "rgb_only = " << (cfg.rgb_only ? "true" : "false") << "\n";
    os << "dgbl_soft_mode = " << (cfg.dgbl_soft_mode ? "true" : "false") << "\n";
    os << "lspi_stages = " << cfg.lspi_stages << "\n";
    os << "flip_prob = " << fmt_double(cfg.flip_prob) << "\n";
    os << "scale_min = " << fmt_double(cfg.scale_min) << "\n";
    os << "scale_max = " << fmt_double(cfg.scale_max) << "\n";
    os << "jitter_prob = " << fmt_double(cfg.jitter_prob) << "\n";
    os << "grayscale_prob = " << fmt_double(cfg.grayscale_prob) << "\n";
    os << "blur_prob = " << fmt_double(cfg.blur_prob) << "\n";
    os << "boundary_threshold = " << fmt_double(cfg.boundary_threshold) << "\n";
    os << "seed = " << cfg.seed << "\n";
    return os.str();
}

std::uint64_t config_hash(const TrainConfig& cfg) {
    return fnv1a(resolved_config_text(cfg));
}

SyntheticSceneSpec parse_scene_spec_text(const std::string& text) {
    SyntheticSceneSpec spec;
    using SpecSetter = std::function<void(SyntheticSceneSpec&, const std::string&, const std::string&)>;
    static const std::map<std::string, SpecSetter> setters = {
        {"height", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.height = to_int(k, v); }},
        {"width", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.width = to_int(k, v); }},
        {"num_classes", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.num_classes = to_int(k, v); }},
        {"shapes_min", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.shapes_min = to_int(k, v); }},
        {"shapes_max", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.shapes_max = to_int(k, v); }},
        {"color_ambiguity", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.color_ambiguity = to_double(k, v); }},
        {"noise_std", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.noise_std = to_double(k, v); }},
        {"depth_noise_std", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.depth_noise_std = to_double(k, v); }},
        {"seed", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.seed = to_u64(k, v); }},
        {"labeled_fraction", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.labeled_fraction = to_double(k, v); }},
        {"split_seed", [](SyntheticSceneSpec& s, const std::string& k, const std::string& v) { s.split_seed = to_u64(k, v); }},
    };
    for (const auto& [key, val] : parse_kv_lines(text)) {
        auto it = setters.find(key);
        if (it == setters.end()) fail(strfmt("scene spec: unknown key '%s'", key.c_str()));
        it->second(spec, key, val);
    }
    spec.validate();
    return spec;
}

SyntheticSceneSpec parse_scene_spec(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) fail(strfmt("cannot open scene spec file %s", path.string().c_str()));
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_scene_spec_text(buf.str());
}

}  // namespace dm
