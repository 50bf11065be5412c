#pragma once

#include "stmoe/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stmoe {

struct GradCheckOptions {
    double step = 2e-5;         // outer Richardson step; the inner one is step/2
    double denom_floor = 1e-5;  // relative-error denominator floor (see gradcheck.cpp)
    int random_probes = 2;      // extra probed elements per tensor, seeded
    std::uint64_t probe_seed = 9;
};

struct GradCheckReport {
    struct TensorStat {
        std::string name;
        double max_rel_err = 0.0;
    };
    std::vector<TensorStat> tensors;  // one entry per parameter tensor
    double max_rel_err = 0.0;
    int probes = 0;  // central-difference probes performed (2 evals each)
};

/// Compare every parameter tensor's backward gradient against central finite
/// differences of the eval-mode example loss on a small synthetic window.
/// Probes the max-|gradient| element of each tensor plus `random_probes`
/// seeded extras, so cost is O(tensors), not O(parameters).
GradCheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed,
                                const GradCheckOptions& opt = {});

}  // namespace stmoe
