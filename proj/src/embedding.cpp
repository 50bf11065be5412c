#include "stmoe/embedding.hpp"

#include "stmoe/grid.hpp"
#include "stmoe/ops.hpp"

#include <stdexcept>

namespace stmoe {

namespace {

constexpr double kInitStd = 0.02;

void check_ids(const std::vector<int>& ids, int limit, const char* field) {
    for (int id : ids) {
        if (id < 0 || id >= limit) {
            throw std::out_of_range(std::string("embed_sequence: field '") + field +
                                    "' index " + std::to_string(id) + " outside [0," +
                                    std::to_string(limit) + ")");
        }
    }
}

}  // namespace

EmbedParams EmbedParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::uint64_t k = 0;
    const auto next = [&] { return mix_seed(seed, k++); };
    EmbedParams p;
    p.day = Tensor::randn({kTotalDays, cfg.e_day}, kInitStd, next(), true);
    p.slot = Tensor::randn({kSlotsPerDay, cfg.e_time}, kInitStd, next(), true);
    p.dow = Tensor::randn({7, cfg.e_dow}, kInitStd, next(), true);
    p.weekend = Tensor::randn({2, cfg.e_wk}, kInitStd, next(), true);
    p.loc = Tensor::randn({location_vocab(cfg.G), cfg.e_loc}, kInitStd, next(), true);
    for (int j = 0; j < cfg.e_loc; ++j) {
        p.loc->data[static_cast<std::size_t>(pad_id(cfg.G)) * cfg.e_loc + j] = 0.0;
    }
    p.proj_w = Tensor::randn({cfg.concat_width(), cfg.hidden}, kInitStd, next(), true);
    p.proj_b = Tensor::zeros({cfg.hidden}, true);
    return p;
}

void EmbedParams::register_params(std::map<std::string, TensorPtr>& reg) const {
    reg["embed.day"] = day;
    reg["embed.slot"] = slot;
    reg["embed.dow"] = dow;
    reg["embed.weekend"] = weekend;
    reg["embed.loc"] = loc;
    reg["embed.proj_w"] = proj_w;
    reg["embed.proj_b"] = proj_b;
}

TensorPtr embed_sequence(const SequenceExample& ex, const EmbedParams& p,
                         const ModelConfig& cfg) {
    check_ids(ex.token, location_vocab(cfg.G), "token");
    check_ids(ex.day, kTotalDays, "day");
    check_ids(ex.slot, kSlotsPerDay, "slot");
    check_ids(ex.dow, 7, "day_of_week");
    check_ids(ex.weekend, 2, "weekend");

    auto cat = ops::concat_cols({ops::gather_rows(p.day, ex.day),
                                 ops::gather_rows(p.slot, ex.slot),
                                 ops::gather_rows(p.dow, ex.dow),
                                 ops::gather_rows(p.weekend, ex.weekend),
                                 ops::gather_rows(p.loc, ex.token)});
    return ops::add_rowvec(ops::matmul(cat, p.proj_w), p.proj_b);
}

}  // namespace stmoe
