#pragma once

#include "stmoe/model.hpp"
#include "stmoe/optim.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace stmoe {

/// On-disk model state. Little-endian binary: magic "STMB", u32 version,
/// length-prefixed UTF-8 metadata (key=value lines), then per-tensor records
/// (u32 name length, name, u32 rank, u32 dims, raw f64 data) sorted by name.
struct Checkpoint {
    std::uint32_t version = 1;
    std::map<std::string, std::string> metadata;
    std::map<std::string, TensorPtr> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// Snapshot model parameters (+ optimizer moments when `opt` is given) with
/// the model config embedded in metadata. `extra` adds run bookkeeping keys.
Checkpoint snapshot(const Model& model, const AdamW* opt,
                    std::map<std::string, std::string> extra = {});

/// Rebuild a model from a checkpoint's embedded config and tensors.
Model model_from_checkpoint(const Checkpoint& ck);

/// Copy checkpoint tensors into an existing model. Architecture mismatches
/// raise an error listing every differing dimension.
void load_params(Model& model, const Checkpoint& ck);

ModelConfig config_from_metadata(const std::map<std::string, std::string>& meta);
std::map<std::string, std::string> metadata_from_config(const ModelConfig& cfg);

}  // namespace stmoe
