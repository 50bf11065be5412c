#include "stmoe/model.hpp"

#include "stmoe/grid.hpp"
#include "stmoe/ops.hpp"

#include <stdexcept>

namespace stmoe {

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.embed = EmbedParams::init(cfg, mix_seed(seed, 0xE3BEDu));
    m.encoder = EncoderParams::init(cfg, mix_seed(seed, 0xE2C0DEu));
    m.moe = MoEParams::init(cfg, mix_seed(seed, 0x30Eu));
    return m;
}

std::map<std::string, TensorPtr> Model::named_params() const {
    std::map<std::string, TensorPtr> reg;
    embed.register_params(reg);
    encoder.register_params(reg);
    moe.register_params(reg);
    return reg;
}

std::vector<TensorPtr> Model::parameters() const {
    std::vector<TensorPtr> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

std::int64_t Model::parameter_count() const {
    std::int64_t n = 0;
    for (auto& t : parameters()) n += t->numel();
    return n;
}

TensorPtr Model::encode_example(const SequenceExample& ex, bool train,
                                std::uint64_t seed) const {
    auto x = embed_sequence(ex, embed, cfg);
    return encode(x, ex.attn, encoder, cfg, train, seed);
}

TensorPtr Model::full_logits(const SequenceExample& ex, std::vector<int>* top1) const {
    auto hidden = encode_example(ex, false, 0);
    return predict_logits(hidden, moe, cfg, top1);
}

TensorPtr Model::logits_at(const TensorPtr& hidden, const std::vector<int>& rows,
                           std::vector<int>* top1) const {
    return predict_logits(ops::gather_rows(hidden, rows), moe, cfg, top1);
}

TensorPtr Model::example_loss(const SequenceExample& ex, bool train, std::uint64_t seed,
                              std::vector<int>* top1) const {
    const auto rows = loss_rows(ex);
    if (rows.empty()) throw std::invalid_argument("example_loss: empty loss mask");
    std::vector<int> targets;
    targets.reserve(rows.size());
    for (int r : rows) targets.push_back(ex.target[r]);

    auto hidden = encode_example(ex, train, seed);
    auto at = ops::gather_rows(hidden, rows);
    auto logits = predict_logits(at, moe, cfg, top1);
    auto ce = ops::cross_entropy(logits, targets,
                                 std::vector<std::uint8_t>(targets.size(), 0));
    if (cfg.moe_aux_weight > 0.0) {
        ce = ops::add(ce, ops::scale(importance_loss(at, moe), cfg.moe_aux_weight));
    }
    return ce;
}

void Model::zero_pad_grad() const {
    auto& loc = *embed.loc;
    if (loc.grad.empty()) return;
    const int e = cfg.e_loc;
    double* row = loc.grad.data() + static_cast<std::size_t>(pad_id(cfg.G)) * e;
    for (int j = 0; j < e; ++j) row[j] = 0.0;
}

std::vector<int> loss_rows(const SequenceExample& ex) {
    std::vector<int> rows;
    for (int i = 0; i < ex.length(); ++i) {
        if (ex.loss[i]) rows.push_back(i);
    }
    return rows;
}

TensorPtr loss_forecast(const TensorPtr& logits, const SequenceExample& ex) {
    const auto rows = loss_rows(ex);
    if (rows.empty()) throw std::invalid_argument("loss_forecast: empty loss mask");
    std::vector<int> targets;
    targets.reserve(rows.size());
    for (int r : rows) targets.push_back(ex.target[r]);
    return ops::cross_entropy(ops::gather_rows(logits, rows), targets,
                              std::vector<std::uint8_t>(targets.size(), 0));
}

}  // namespace stmoe
