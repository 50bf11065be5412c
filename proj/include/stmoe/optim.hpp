#pragma once

#include "stmoe/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stmoe {

struct ParamGroup {
    std::string name;  // "base" or "loc_emb"
    double lr = 0.0;
    std::vector<std::string> param_names;
    std::vector<TensorPtr> params;
};

/// Decoupled-weight-decay adaptive-moment optimizer, the update rule pinned by
/// the training contract: m ← β₁m+(1−β₁)g, v ← β₂v+(1−β₂)g², bias-corrected,
/// p ← p − lr·( m̂/(√v̂+ε) + wd·p ).
class AdamW {
public:
    AdamW(std::vector<ParamGroup> groups, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();

    std::int64_t step_count() const { return step_; }
    const std::vector<ParamGroup>& groups() const { return groups_; }
    double weight_decay() const { return weight_decay_; }
    void set_lr(std::size_t group, double lr);

    /// Moment accumulators keyed by parameter name ("m."/"v." prefixes added
    /// by the checkpoint layer).
    std::map<std::string, std::vector<double>> moments() const;
    void restore(const std::map<std::string, std::vector<double>>& moments,
                 std::int64_t step_count);

private:
    std::vector<ParamGroup> groups_;
    double weight_decay_, beta1_, beta2_, eps_;
    std::int64_t step_ = 0;
    std::vector<std::vector<std::vector<double>>> m_, v_;  // [group][param][element]
};

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
double clip_global_norm(const std::vector<TensorPtr>& params, double max_norm);

}  // namespace stmoe
