#pragma once

#include "stmoe/data.hpp"
#include "stmoe/embedding.hpp"
#include "stmoe/encoder.hpp"
#include "stmoe/model_config.hpp"
#include "stmoe/moe.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stmoe {

/// The full ST-MoE-BERT stack with a flat, name-addressable parameter view
/// (used by the optimizer groups and the checkpoint format).
struct Model {
    ModelConfig cfg;
    EmbedParams embed;
    EncoderParams encoder;
    MoEParams moe;

    static Model init(const ModelConfig& cfg, std::uint64_t seed);

    std::map<std::string, TensorPtr> named_params() const;
    std::vector<TensorPtr> parameters() const;  // values of named_params, name order
    std::int64_t parameter_count() const;

    TensorPtr encode_example(const SequenceExample& ex, bool train, std::uint64_t seed) const;

    /// Logits for every position: [seq_len × G²]. Evaluation path.
    TensorPtr full_logits(const SequenceExample& ex, std::vector<int>* top1 = nullptr) const;

    /// MoE head applied to selected hidden rows only (the training fast path —
    /// identical numbers to slicing full_logits at those rows).
    TensorPtr logits_at(const TensorPtr& hidden, const std::vector<int>& rows,
                        std::vector<int>* top1 = nullptr) const;

    /// Mean cross-entropy at the loss-masked positions (+ optional gate
    /// balancing term). Throws on an empty loss mask.
    TensorPtr example_loss(const SequenceExample& ex, bool train, std::uint64_t seed,
                           std::vector<int>* top1 = nullptr) const;

    /// The PAD location row never learns: call between backward and step.
    void zero_pad_grad() const;
};

std::vector<int> loss_rows(const SequenceExample& ex);

/// Spec-shaped loss: mean cross-entropy of full-sequence logits at the
/// loss-masked positions of `ex`.
TensorPtr loss_forecast(const TensorPtr& logits, const SequenceExample& ex);

}  // namespace stmoe
