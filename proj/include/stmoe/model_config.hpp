#pragma once

#include <stdexcept>
#include <string>

namespace stmoe {

/// Dimensions for the full pipeline. `desk_config` is the laptop-scale default
/// used by the fixtures; `paper_config` is the full-scale geometry.
struct ModelConfig {
    int G = 40;
    int seq_len = 240;

    // st-embedding table widths
    int e_day = 16;
    int e_time = 16;
    int e_dow = 16;
    int e_wk = 8;
    int e_loc = 64;

    // encoder
    int layers = 2;
    int hidden = 64;
    int heads = 4;
    int ffn = 256;  // 4H
    double dropout = 0.1;
    bool post_norm = false;

    // moe head
    int experts = 4;
    int top_k = 2;
    int expert_ffn = 256;  // 4H
    bool moe_residual = true;
    double moe_aux_weight = 0.0;

    int head_dim() const { return hidden / heads; }
    int concat_width() const { return e_day + e_time + e_dow + e_wk + e_loc; }
    int n_classes() const { return G * G; }

    void validate() const {
        const auto bad = [](const std::string& why) {
            throw std::invalid_argument("ModelConfig: " + why);
        };
        if (G < 2) bad("grid side must be >= 2");
        if (seq_len < 1) bad("seq_len must be positive");
        if (e_day < 1 || e_time < 1 || e_dow < 1 || e_wk < 1 || e_loc < 1) {
            bad("embedding sizes must be positive");
        }
        if (layers < 1) bad("layers must be >= 1");
        if (hidden < 1 || heads < 1) bad("hidden and heads must be positive");
        if (hidden % heads != 0) {
            bad("hidden (" + std::to_string(hidden) + ") not divisible by heads (" +
                std::to_string(heads) + ")");
        }
        if (ffn < 1 || expert_ffn < 1) bad("FFN widths must be positive");
        if (dropout < 0.0 || dropout >= 1.0) bad("dropout must be in [0,1)");
        if (experts < 1) bad("experts must be >= 1");
        if (top_k < 1 || top_k > experts) bad("top_k must be in [1, experts]");
        if (moe_aux_weight < 0.0) bad("moe_aux_weight must be >= 0");
    }
};

inline ModelConfig desk_config() { return ModelConfig{}; }

inline ModelConfig paper_config() {
    ModelConfig c;
    c.G = 200;
    c.e_day = 64;
    c.e_time = 64;
    c.e_dow = 64;
    c.e_wk = 32;
    c.e_loc = 256;
    c.layers = 12;
    c.hidden = 768;
    c.heads = 16;
    c.ffn = 3072;
    c.experts = 8;
    c.top_k = 2;
    c.expert_ffn = 3072;
    return c;
}

/// MoE-less ablation: the head degenerates to one always-selected FFN.
inline ModelConfig naive_bert_config(ModelConfig base) {
    base.experts = 1;
    base.top_k = 1;
    return base;
}

}  // namespace stmoe
