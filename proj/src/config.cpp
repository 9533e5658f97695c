// SPDX-License-Identifier: Apache-2.0
#include "di2/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>

#include "di2/error.hpp"

namespace di2 {

namespace {

struct Field {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) throw ConfigError("config: bad value for '" + key + "': " + text);
    return value;
}

std::string format_float(float v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "1" || text == "true") return true;
    if (text == "0" || text == "false") return false;
    throw ConfigError("config: bad boolean for '" + key + "': " + text);
}

#define DI2_SIZE_FIELD(name)                                                              \
    {#name, {[](const ExperimentConfig& c) { return std::to_string(c.name); },            \
             [](ExperimentConfig& c, const std::string& v) { c.name = parse_number<std::size_t>(#name, v); }}}
#define DI2_FLOAT_FIELD(name)                                                             \
    {#name, {[](const ExperimentConfig& c) { return format_float(c.name); },              \
             [](ExperimentConfig& c, const std::string& v) { c.name = parse_number<float>(#name, v); }}}

// Ordered so that to_text() output is stable.
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        DI2_SIZE_FIELD(encoder_dim),
        DI2_SIZE_FIELD(token_dim),
        DI2_SIZE_FIELD(dcm_layers),
        DI2_SIZE_FIELD(ffn_mult),
        DI2_SIZE_FIELD(policy_hidden),
        DI2_SIZE_FIELD(policy_queries),
        DI2_SIZE_FIELD(mlp_hidden),
        DI2_FLOAT_FIELD(position_scale),
        DI2_SIZE_FIELD(codebook_size),
        DI2_SIZE_FIELD(alt_codebook_size),
        DI2_FLOAT_FIELD(codebook_lambda),
        DI2_FLOAT_FIELD(codebook_lr),
        {"codebook_revival",
         {[](const ExperimentConfig& c) { return std::string(c.codebook_revival ? "1" : "0"); },
          [](ExperimentConfig& c, const std::string& v) { c.codebook_revival = parse_bool("codebook_revival", v); }}},
        DI2_SIZE_FIELD(dataset_size),
        DI2_SIZE_FIELD(batch_size),
        DI2_FLOAT_FIELD(momentum),
        DI2_SIZE_FIELD(warmup_epochs),
        DI2_FLOAT_FIELD(warmup_lr),
        DI2_SIZE_FIELD(align_epochs),
        DI2_FLOAT_FIELD(align_lr),
        DI2_FLOAT_FIELD(align_clip),
        DI2_SIZE_FIELD(codebook_epochs),
        DI2_SIZE_FIELD(finetune_epochs),
        DI2_FLOAT_FIELD(finetune_lr),
        {"depth_predictor",
         {[](const ExperimentConfig& c) { return to_string(c.depth_predictor); },
          [](ExperimentConfig& c, const std::string& v) {
              if (v == "dcm") c.depth_predictor = DepthPredictor::Dcm;
              else if (v == "mlp") c.depth_predictor = DepthPredictor::Mlp;
              else throw ConfigError("config: depth_predictor must be dcm or mlp, got " + v);
          }}},
        {"stage_order",
         {[](const ExperimentConfig& c) { return to_string(c.stage_order); },
          [](ExperimentConfig& c, const std::string& v) {
              if (v == "align_first") c.stage_order = StageOrder::AlignFirst;
              else if (v == "codebook_first") c.stage_order = StageOrder::CodebookFirst;
              else throw ConfigError("config: stage_order must be align_first or codebook_first, got " + v);
          }}},
        DI2_SIZE_FIELD(eval_episodes),
        {"seed",
         {[](const ExperimentConfig& c) { return std::to_string(c.seed); },
          [](ExperimentConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }}},
    };
    return table;
}

#undef DI2_SIZE_FIELD
#undef DI2_FLOAT_FIELD

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(DepthPredictor p) { return p == DepthPredictor::Dcm ? "dcm" : "mlp"; }
std::string to_string(StageOrder s) { return s == StageOrder::AlignFirst ? "align_first" : "codebook_first"; }

ExperimentConfig ExperimentConfig::reference_preset() {
    ExperimentConfig c;
    c.codebook_size = 512;
    c.codebook_lambda = 0.99f;
    return c;
}

std::vector<std::string> ExperimentConfig::keys() {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& [k, f] : fields()) out += k + "=" + f.get(*this) + "\n";
    return out;
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    std::map<std::string, const Field*> index;
    for (const auto& [k, f] : fields()) index.emplace(k, &f);
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto it = index.find(key);
        if (it == index.end()) throw ConfigError("config: unknown key '" + key + "'");
        it->second->set(cfg, value);
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_text(text);
}

void ExperimentConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("config: " + what);
    };
    require(encoder_dim > 0 && token_dim > 0, "dimensions must be positive");
    require(token_dim >= 16, "token_dim must be at least the token count (16) for position tags");
    require(dcm_layers > 0 && ffn_mult > 0, "dcm_layers and ffn_mult must be positive");
    require(policy_hidden > 0 && mlp_hidden > 0, "hidden widths must be positive");
    require(policy_queries > 0, "policy_queries must be positive");
    require(codebook_size > 0, "codebook_size must be positive");
    require(codebook_lambda > 0.f && codebook_lambda < 1.f, "codebook_lambda must lie in (0, 1)");
    require(batch_size > 0, "batch_size must be positive");
    require(momentum >= 0.f && momentum < 1.f, "momentum must lie in [0, 1)");
    require(warmup_lr > 0.f && align_lr > 0.f && codebook_lr > 0.f && finetune_lr > 0.f,
            "learning rates must be positive");
    require(align_clip >= 0.f, "align_clip must be nonnegative");
    require(eval_episodes > 0, "eval_episodes must be positive");
}

}  // namespace di2
