#pragma once

#include "stmoe/model_config.hpp"
#include "stmoe/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stmoe {

struct ExpertParams {
    TensorPtr w1, b1;  // hidden × expert_ffn, expert_ffn
    TensorPtr w2, b2;  // expert_ffn × hidden, hidden
};

struct MoEParams {
    TensorPtr gate_w;  // experts × hidden (row k = w_k)
    TensorPtr gate_b;  // experts
    std::vector<ExpertParams> experts;
    TensorPtr head_w;  // hidden × G²
    TensorPtr head_b;  // G²

    static MoEParams init(const ModelConfig& cfg, std::uint64_t seed);
    void register_params(std::map<std::string, TensorPtr>& reg) const;
};

/// softmax(x W_gᵀ + b_g) per row: the dense gate distribution.
TensorPtr gate_probs(const TensorPtr& x, const MoEParams& p);

/// Sparse mixture: per row keep the top_k gate probabilities (ties to the
/// lowest expert index), renormalize, and sum the kept experts' outputs.
/// Only kept experts receive gradient. `top1`, when given, receives each
/// row's winning expert for load diagnostics.
TensorPtr moe_forward(const TensorPtr& x, const MoEParams& p, int top_k,
                      std::vector<int>* top1 = nullptr);

/// hidden (+ residual MoE output) through the final linear head → G² logits.
TensorPtr predict_logits(const TensorPtr& hidden, const MoEParams& p, const ModelConfig& cfg,
                         std::vector<int>* top1 = nullptr);

/// Top-1 assignment counts per expert over a batch of routed positions.
std::vector<int> expert_load(const TensorPtr& x, const MoEParams& p);

/// Optional balancing term: squared coefficient of variation of per-expert
/// mean gate probability (0 when perfectly uniform).
TensorPtr importance_loss(const TensorPtr& x, const MoEParams& p);

}  // namespace stmoe
