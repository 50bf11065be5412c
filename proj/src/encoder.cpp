#include "stmoe/encoder.hpp"

#include "stmoe/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace stmoe {

namespace {

constexpr double kInitStd = 0.02;

TensorPtr ffn_forward(const TensorPtr& x, const EncoderLayerParams& l) {
    auto h = ops::gelu(ops::add_rowvec(ops::matmul(x, l.ffn_w1), l.ffn_b1));
    return ops::add_rowvec(ops::matmul(h, l.ffn_w2), l.ffn_b2);
}

}  // namespace

EncoderParams EncoderParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::uint64_t k = 0;
    const auto next = [&] { return mix_seed(seed, k++); };
    const int H = cfg.hidden, D = cfg.head_dim(), F = cfg.ffn;

    EncoderParams p;
    p.layers.resize(cfg.layers);
    for (auto& l : p.layers) {
        l.heads.resize(cfg.heads);
        for (auto& h : l.heads) {
            h.wq = Tensor::randn({H, D}, kInitStd, next(), true);
            h.bq = Tensor::zeros({D}, true);
            h.wk = Tensor::randn({H, D}, kInitStd, next(), true);
            h.bk = Tensor::zeros({D}, true);
            h.wv = Tensor::randn({H, D}, kInitStd, next(), true);
            h.bv = Tensor::zeros({D}, true);
        }
        l.wo = Tensor::randn({H, H}, kInitStd, next(), true);
        l.bo = Tensor::zeros({H}, true);
        l.ln1_g = Tensor::full({H}, 1.0, true);
        l.ln1_b = Tensor::zeros({H}, true);
        l.ln2_g = Tensor::full({H}, 1.0, true);
        l.ln2_b = Tensor::zeros({H}, true);
        l.ffn_w1 = Tensor::randn({H, F}, kInitStd, next(), true);
        l.ffn_b1 = Tensor::zeros({F}, true);
        l.ffn_w2 = Tensor::randn({F, H}, kInitStd, next(), true);
        l.ffn_b2 = Tensor::zeros({H}, true);
    }
    p.final_g = Tensor::full({H}, 1.0, true);
    p.final_b = Tensor::zeros({H}, true);
    return p;
}

void EncoderParams::register_params(std::map<std::string, TensorPtr>& reg) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const std::string base = "enc." + std::to_string(i) + ".";
        for (std::size_t h = 0; h < l.heads.size(); ++h) {
            const std::string hb = base + "h" + std::to_string(h) + ".";
            reg[hb + "wq"] = l.heads[h].wq;
            reg[hb + "bq"] = l.heads[h].bq;
            reg[hb + "wk"] = l.heads[h].wk;
            reg[hb + "bk"] = l.heads[h].bk;
            reg[hb + "wv"] = l.heads[h].wv;
            reg[hb + "bv"] = l.heads[h].bv;
        }
        reg[base + "wo"] = l.wo;
        reg[base + "bo"] = l.bo;
        reg[base + "ln1.g"] = l.ln1_g;
        reg[base + "ln1.b"] = l.ln1_b;
        reg[base + "ln2.g"] = l.ln2_g;
        reg[base + "ln2.b"] = l.ln2_b;
        reg[base + "ffn.w1"] = l.ffn_w1;
        reg[base + "ffn.b1"] = l.ffn_b1;
        reg[base + "ffn.w2"] = l.ffn_w2;
        reg[base + "ffn.b2"] = l.ffn_b2;
    }
    reg["enc.final_ln.g"] = final_g;
    reg["enc.final_ln.b"] = final_b;
}

TensorPtr attention(const TensorPtr& x, const std::vector<std::uint8_t>& attn_mask,
                    const EncoderLayerParams& layer, const ModelConfig& cfg,
                    std::vector<TensorPtr>* weights_out) {
    const int T = x->rows();
    if (static_cast<int>(attn_mask.size()) != T) {
        throw std::invalid_argument("attention: mask length must equal sequence length");
    }
    bool any = false;
    for (auto m : attn_mask) any = any || (m != 0);
    if (!any) return Tensor::zeros({T, cfg.hidden});  // every key masked: zero by contract

    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    std::vector<TensorPtr> head_outs;
    head_outs.reserve(layer.heads.size());
    for (const auto& h : layer.heads) {
        auto q = ops::add_rowvec(ops::matmul(x, h.wq), h.bq);
        auto k = ops::add_rowvec(ops::matmul(x, h.wk), h.bk);
        auto v = ops::add_rowvec(ops::matmul(x, h.wv), h.bv);
        auto scores = ops::scale(ops::matmul_nt(q, k), inv_sqrt_dk);
        auto weights = ops::masked_softmax_rows(scores, attn_mask);
        if (weights_out) weights_out->push_back(weights);
        head_outs.push_back(ops::matmul(weights, v));
    }
    auto cat = head_outs.size() == 1 ? head_outs[0] : ops::concat_cols(head_outs);
    return ops::add_rowvec(ops::matmul(cat, layer.wo), layer.bo);
}

TensorPtr encode(const TensorPtr& embedded, const std::vector<std::uint8_t>& attn_mask,
                 const EncoderParams& p, const ModelConfig& cfg, bool train,
                 std::uint64_t seed) {
    auto h = embedded;
    std::uint64_t salt = 0;
    const auto drop = [&](const TensorPtr& t) {
        if (!train || cfg.dropout == 0.0) return t;
        return ops::dropout(t, cfg.dropout, mix_seed(seed, salt++));
    };

    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const auto& l = p.layers[i];
        if (cfg.post_norm) {
            auto a = drop(attention(h, attn_mask, l, cfg));
            h = ops::layer_norm(ops::add(h, a), l.ln1_g, l.ln1_b);
            auto f = drop(ffn_forward(h, l));
            h = ops::layer_norm(ops::add(h, f), l.ln2_g, l.ln2_b);
        } else {
            auto a = drop(attention(ops::layer_norm(h, l.ln1_g, l.ln1_b), attn_mask, l, cfg));
            h = ops::add(h, a);
            auto f = drop(ffn_forward(ops::layer_norm(h, l.ln2_g, l.ln2_b), l));
            h = ops::add(h, f);
        }
        if (!h->all_finite()) {
            throw std::runtime_error("encode: non-finite values after block " +
                                     std::to_string(i));
        }
    }
    return cfg.post_norm ? h : ops::layer_norm(h, p.final_g, p.final_b);
}

std::pair<TensorPtr, std::vector<std::uint8_t>> prepend_cls(
    const TensorPtr& embedded, const std::vector<std::uint8_t>& attn_mask,
    const TensorPtr& cls_row) {
    if (cls_row->rows() != 1 || cls_row->cols() != embedded->cols()) {
        throw std::invalid_argument("prepend_cls: cls_row must be 1 x hidden");
    }
    auto out = ops::concat_rows({cls_row, embedded});
    std::vector<std::uint8_t> mask;
    mask.reserve(attn_mask.size() + 1);
    mask.push_back(1);
    mask.insert(mask.end(), attn_mask.begin(), attn_mask.end());
    return {out, std::move(mask)};
}

}  // namespace stmoe
