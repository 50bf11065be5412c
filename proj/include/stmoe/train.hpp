#pragma once

#include "stmoe/checkpoint.hpp"
#include "stmoe/data.hpp"
#include "stmoe/model.hpp"
#include "stmoe/optim.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stmoe {

struct TrainConfig {
    std::string phase = "pretrain";  // pretrain | finetune | scratch
    double base_lr = 3e-4;
    double loc_emb_lr = 0.0;  // > 0 → dedicated location-embedding group (finetune)
    double weight_decay = 1e-3;
    int batch_size = 32;
    int epochs = 10;
    std::uint64_t seed = 1;
    double clip_norm = 1.0;
    double mask_ratio = 0.15;  // pretrain only
    int mlm_stride = 48;       // pretrain only
    int warmup_steps = 0;      // 0 → constant LR
    bool reset_loc_emb = false;
    bool history_from_test = true;
    int min_target_obs = 1;

    static TrainConfig pretrain_defaults();
    static TrainConfig finetune_defaults();  // base 5e-5, loc 5e-4 (the 10× rule)
    static TrainConfig scratch_defaults();

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    std::vector<long> expert_top1;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    std::string final_checkpoint;
    std::string best_checkpoint;  // the `best` symlink path
    int best_epoch = -1;
};

/// Two groups ({embed.loc} at loc_emb_lr, rest at base_lr) when loc_emb_lr>0,
/// otherwise one group holding everything.
AdamW make_optimizer(const Model& model, const TrainConfig& tc);

/// One optimizer update over a batch of examples: mean loss, backward with
/// 1/B scaling, PAD-row gradient zeroing, global-norm clip, AdamW step.
/// Returns the mean batch loss. `top1_counts`, when given, accumulates
/// routing statistics.
double train_step(Model& model, AdamW& opt, const std::vector<const SequenceExample*>& batch,
                  const TrainConfig& tc, std::uint64_t step_seed, int batch_id,
                  std::vector<long>* top1_counts = nullptr);

/// Mean example loss in eval mode (no dropout, no grads).
double evaluate_loss(const Model& model, const std::vector<SequenceExample>& windows);

/// Full training run: per-epoch checkpoints in `out_dir` (epoch_N.ckpt), a
/// `best.ckpt` symlink by held-out loss (last 10% of training days), a
/// train_log.csv (`epoch,step,phase,loss,lr_base,lr_loc`) and routing.csv
/// (`epoch,expert,top1_count`). `resume_path` continues an interrupted run
/// from its epoch boundary, bit-exactly.
TrainResult train(Model& model, const CityData& city, const TrainConfig& tc,
                  const std::string& out_dir, const std::string& resume_path = "");

}  // namespace stmoe
