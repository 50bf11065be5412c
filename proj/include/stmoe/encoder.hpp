#pragma once

#include "stmoe/model_config.hpp"
#include "stmoe/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace stmoe {

struct AttentionHead {
    TensorPtr wq, bq;  // hidden × head_dim, head_dim
    TensorPtr wk, bk;
    TensorPtr wv, bv;
};

struct EncoderLayerParams {
    std::vector<AttentionHead> heads;
    TensorPtr wo, bo;  // hidden × hidden, hidden
    TensorPtr ln1_g, ln1_b;
    TensorPtr ln2_g, ln2_b;
    TensorPtr ffn_w1, ffn_b1;  // hidden × ffn, ffn
    TensorPtr ffn_w2, ffn_b2;  // ffn × hidden, hidden
};

struct EncoderParams {
    std::vector<EncoderLayerParams> layers;
    TensorPtr final_g, final_b;  // closing layer norm (pre-norm variant)

    static EncoderParams init(const ModelConfig& cfg, std::uint64_t seed);
    void register_params(std::map<std::string, TensorPtr>& reg) const;
};

/// Multi-head self-attention over one sequence. PAD key columns (mask 0) get
/// exactly zero weight; when the whole mask is zero the output is zero.
/// `weights_out`, when given, receives each head's T×T attention matrix.
TensorPtr attention(const TensorPtr& x, const std::vector<std::uint8_t>& attn_mask,
                    const EncoderLayerParams& layer, const ModelConfig& cfg,
                    std::vector<TensorPtr>* weights_out = nullptr);

/// L residual blocks (attention, FFN). Pre-norm by default with a closing
/// layer norm; `post_norm` switches to the original arrangement. Dropout is
/// applied to sub-block outputs in train mode, seeded per call.
TensorPtr encode(const TensorPtr& embedded, const std::vector<std::uint8_t>& attn_mask,
                 const EncoderParams& p, const ModelConfig& cfg, bool train,
                 std::uint64_t seed);

/// Optional CLS mode: length T becomes T+1 with the given embedded CLS row at
/// index 0, which never carries a loss target.
std::pair<TensorPtr, std::vector<std::uint8_t>> prepend_cls(
    const TensorPtr& embedded, const std::vector<std::uint8_t>& attn_mask,
    const TensorPtr& cls_row);

}  // namespace stmoe
