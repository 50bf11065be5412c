#include "stmoe/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stmoe {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const char* want, const std::string& got) {
    throw std::invalid_argument("config: key '" + key + "' expects " + want + ", got '" + got +
                                "'");
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, "an integer", v);
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, "a number", v);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    bad_value(key, "true or false", v);
}

std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    if (trim(v).empty()) return out;  // empty list is legal (uniform weights)
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
    return out;
}

std::string fmt(long long v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
std::string fmt(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += fmt(v[i]);
    }
    return out;
}

// Field accessors stay one-liners via these macros; the schema table below is
// the single source of truth for names and docs.
#define KEY_INT(name, doc, field)                                                      \
    {name, doc, [](RunConfig& rc, const std::string& v) {                              \
         rc.field = static_cast<decltype(rc.field)>(parse_int(name, v));               \
     },                                                                                \
     [](const RunConfig& rc) { return fmt(static_cast<long long>(rc.field)); }}
#define KEY_DOUBLE(name, doc, field)                                                          \
    {name, doc, [](RunConfig& rc, const std::string& v) { rc.field = parse_double(name, v); }, \
     [](const RunConfig& rc) { return fmt(rc.field); }}
#define KEY_BOOL(name, doc, field)                                                          \
    {name, doc, [](RunConfig& rc, const std::string& v) { rc.field = parse_bool(name, v); }, \
     [](const RunConfig& rc) { return fmt(rc.field); }}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema = {
        KEY_INT("model.grid", "grid side G (classes = G*G)", model.G),
        KEY_INT("model.seq_len", "input window length in slots", model.seq_len),
        KEY_INT("model.e_day", "day-index embedding width", model.e_day),
        KEY_INT("model.e_time", "time-slot embedding width", model.e_time),
        KEY_INT("model.e_dow", "day-of-week embedding width", model.e_dow),
        KEY_INT("model.e_wk", "weekend-flag embedding width", model.e_wk),
        KEY_INT("model.e_loc", "location embedding width", model.e_loc),
        KEY_INT("model.layers", "encoder blocks", model.layers),
        KEY_INT("model.hidden", "encoder hidden width H", model.hidden),
        KEY_INT("model.heads", "attention heads (divides H)", model.heads),
        KEY_INT("model.ffn", "encoder feed-forward width", model.ffn),
        KEY_DOUBLE("model.dropout", "dropout probability in [0,1)", model.dropout),
        KEY_BOOL("model.post_norm", "post-norm residual blocks (original BERT)",
                 model.post_norm),
        KEY_INT("model.experts", "MoE expert count K", model.experts),
        KEY_INT("model.top_k", "experts kept per token", model.top_k),
        KEY_INT("model.expert_ffn", "expert feed-forward width", model.expert_ffn),
        KEY_BOOL("model.moe_residual", "skip connection around the MoE mixture",
                 model.moe_residual),
        KEY_DOUBLE("model.moe_aux_weight", "importance-balancing loss coefficient",
                   model.moe_aux_weight),
        KEY_DOUBLE("train.base_lr", "learning rate for the main group", train.base_lr),
        KEY_DOUBLE("train.loc_emb_lr", "location-embedding LR; 0 = single group",
                   train.loc_emb_lr),
        KEY_DOUBLE("train.weight_decay", "decoupled weight decay", train.weight_decay),
        KEY_INT("train.batch_size", "examples per optimizer step", train.batch_size),
        KEY_INT("train.epochs", "training epochs", train.epochs),
        KEY_INT("train.seed", "master RNG seed", train.seed),
        KEY_DOUBLE("train.clip_norm", "global gradient-norm clip", train.clip_norm),
        KEY_DOUBLE("train.mask_ratio", "MLM masking fraction (pretrain)", train.mask_ratio),
        KEY_INT("train.mlm_stride", "MLM window stride in slots (pretrain)",
                train.mlm_stride),
        KEY_INT("train.warmup_steps", "linear LR warmup steps; 0 = constant",
                train.warmup_steps),
        KEY_BOOL("train.reset_loc_emb", "reinitialize location embeddings before finetune",
                 train.reset_loc_emb),
        KEY_BOOL("train.history_from_test", "let forecast history include earlier test days",
                 train.history_from_test),
        KEY_INT("train.min_target_obs", "min observed slots for a forecast window",
                train.min_target_obs),
        KEY_DOUBLE("eval.geo_bleu_beta", "GEO-BLEU similarity decay", geo_bleu.beta),
        KEY_INT("eval.geo_bleu_max_n", "largest GEO-BLEU n-gram order", geo_bleu.max_n),
        {"eval.geo_bleu_weights", "comma-separated n-gram weights; empty = uniform",
         [](RunConfig& rc, const std::string& v) {
             rc.geo_bleu.weights = parse_double_list("eval.geo_bleu_weights", v);
         },
         [](const RunConfig& rc) { return fmt(rc.geo_bleu.weights); }},
    };
    return schema;
}

#undef KEY_INT
#undef KEY_DOUBLE
#undef KEY_BOOL

void apply_setting(RunConfig& rc, const std::string& key, const std::string& value) {
    for (const auto& def : config_schema()) {
        if (key == def.name) {
            def.set(rc, value);
            return;
        }
    }
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

void apply_config_file(RunConfig& rc, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot read " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                        ": expected key=value, got '" + line + "'");
        }
        try {
            apply_setting(rc, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::string dump_run_config(const RunConfig& rc) {
    std::string out;
    for (const auto& def : config_schema()) {
        out += def.name;
        out += " = ";
        out += def.get(rc);
        out += '\n';
    }
    return out;
}

std::string config_help() {
    std::string out = "Config file keys (key = value, one per line, # comments):\n";
    for (const auto& def : config_schema()) {
        const std::string name(def.name);
        out += "  " + name;
        out.append(name.size() < 26 ? 26 - name.size() : 1, ' ');
        out += def.doc;
        out += '\n';
    }
    return out;
}

}  // namespace stmoe
