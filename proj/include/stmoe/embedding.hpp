#pragma once

#include "stmoe/data.hpp"
#include "stmoe/model_config.hpp"
#include "stmoe/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace stmoe {

/// Five lookup tables plus the input projection bridging the concatenated
/// embedding width to the encoder hidden size.
struct EmbedParams {
    TensorPtr day;      // 75 × e_day
    TensorPtr slot;     // 48 × e_time
    TensorPtr dow;      // 7 × e_dow
    TensorPtr weekend;  // 2 × e_wk
    TensorPtr loc;      // (G²+3) × e_loc, PAD row pinned to zero
    TensorPtr proj_w;   // concat_width × hidden
    TensorPtr proj_b;   // hidden

    static EmbedParams init(const ModelConfig& cfg, std::uint64_t seed);
    void register_params(std::map<std::string, TensorPtr>& reg) const;
};

/// Per position: concatenate the five table rows, then project to hidden.
TensorPtr embed_sequence(const SequenceExample& ex, const EmbedParams& p,
                         const ModelConfig& cfg);

}  // namespace stmoe
