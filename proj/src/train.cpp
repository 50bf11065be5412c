#include "stmoe/train.hpp"

#include "stmoe/ops.hpp"
#include "stmoe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace fs = std::filesystem;

namespace stmoe {

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Held-out boundary: the last 10% of training days (at least one) are never
/// touched by optimization and drive best-checkpoint selection.
int holdout_start(int train_days) { return train_days - std::max(1, train_days / 10); }

std::vector<Record> records_before(const std::vector<Record>& recs, int day_end) {
    std::vector<Record> out;
    for (const auto& r : recs)
        if (r.day < day_end) out.push_back(r);
    return out;
}

std::vector<Record> records_in(const std::vector<Record>& recs, int day_begin, int day_end) {
    std::vector<Record> out;
    for (const auto& r : recs)
        if (r.day >= day_begin && r.day < day_end) out.push_back(r);
    return out;
}

std::vector<SequenceExample> mlm_windows(const CityData& city, const TrainConfig& tc, int seq_len,
                                         int day_begin, int day_end, std::uint64_t seed) {
    std::vector<SequenceExample> out;
    for (const auto& [uid, recs] : city.users) {
        auto part = day_begin == 0 ? records_before(recs, day_end) : records_in(recs, day_begin, day_end);
        if (part.empty()) continue;
        auto w = build_mlm_windows(part, city.G, tc.mask_ratio, seed, seq_len, tc.mlm_stride);
        out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    return out;
}

std::vector<SequenceExample> forecast_day_windows(const CityData& city, const WindowConfig& wcfg,
                                                  int day_begin, int day_end) {
    std::vector<SequenceExample> out;
    for (const auto& [uid, recs] : city.users) {
        for (int day = day_begin; day < day_end; ++day) {
            if (auto w = forecast_window(recs, city.G, wcfg, day)) out.push_back(std::move(*w));
        }
    }
    return out;
}

double example_max_logit(const Model& model, const SequenceExample& ex) {
    try {
        NoGradGuard ng;
        auto logits = model.full_logits(ex);
        double mx = -std::numeric_limits<double>::infinity();
        for (double v : logits->data) mx = std::max(mx, v);
        return mx;
    } catch (const std::exception&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

void point_best_symlink(const fs::path& dir, const std::string& target) {
    const fs::path link = dir / "best.ckpt";
    std::error_code ec;
    fs::remove(link, ec);
    fs::create_symlink(target, link);
}

}  // namespace

TrainConfig TrainConfig::pretrain_defaults() {
    TrainConfig tc;
    tc.phase = "pretrain";
    tc.base_lr = 3e-4;
    tc.epochs = 10;
    return tc;
}

TrainConfig TrainConfig::finetune_defaults() {
    TrainConfig tc;
    tc.phase = "finetune";
    tc.base_lr = 5e-5;
    tc.loc_emb_lr = 5e-4;
    tc.epochs = 5;
    return tc;
}

TrainConfig TrainConfig::scratch_defaults() {
    TrainConfig tc;
    tc.phase = "scratch";
    tc.base_lr = 3e-4;
    tc.epochs = 10;
    return tc;
}

void TrainConfig::validate() const {
    if (phase != "pretrain" && phase != "finetune" && phase != "scratch")
        throw std::invalid_argument("TrainConfig: unknown phase '" + phase + "'");
    if (!(base_lr > 0)) throw std::invalid_argument("TrainConfig: base_lr must be positive");
    if (loc_emb_lr < 0) throw std::invalid_argument("TrainConfig: loc_emb_lr must be nonnegative");
    if (!(weight_decay >= 0)) throw std::invalid_argument("TrainConfig: weight_decay must be nonnegative");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be at least 1");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be nonnegative");
    if (!(clip_norm > 0)) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
    if (warmup_steps < 0) throw std::invalid_argument("TrainConfig: warmup_steps must be nonnegative");
    if (phase == "pretrain") {
        if (!(mask_ratio > 0)) throw std::invalid_argument("TrainConfig: mask ratio must be positive");
        if (!(mask_ratio < 1)) throw std::invalid_argument("TrainConfig: mask ratio must be below 1");
        if (mlm_stride < 1) throw std::invalid_argument("TrainConfig: mlm_stride must be at least 1");
    }
}

AdamW make_optimizer(const Model& model, const TrainConfig& tc) {
    const auto named = model.named_params();
    if (tc.loc_emb_lr > 0) {
        ParamGroup base{"base", tc.base_lr, {}, {}};
        ParamGroup loc{"loc_emb", tc.loc_emb_lr, {}, {}};
        for (const auto& [name, p] : named) {
            auto& grp = (name == "embed.loc") ? loc : base;
            grp.param_names.push_back(name);
            grp.params.push_back(p);
        }
        if (loc.params.empty()) throw std::logic_error("make_optimizer: no location embedding table");
        return AdamW({base, loc}, tc.weight_decay);
    }
    ParamGroup all{"base", tc.base_lr, {}, {}};
    for (const auto& [name, p] : named) {
        all.param_names.push_back(name);
        all.params.push_back(p);
    }
    return AdamW({all}, tc.weight_decay);
}

double train_step(Model& model, AdamW& opt, const std::vector<const SequenceExample*>& batch,
                  const TrainConfig& tc, std::uint64_t step_seed, int batch_id,
                  std::vector<long>* top1_counts) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    opt.zero_grad();
    const double inv = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        std::vector<int> top1;
        TensorPtr loss;
        try {
            loss = model.example_loss(*batch[i], /*train=*/true, mix_seed(step_seed, i),
                                      top1_counts ? &top1 : nullptr);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("train_step: forward failed in batch " +
                                     std::to_string(batch_id) + ": " + e.what());
        }
        const double value = loss->item();
        if (!std::isfinite(value)) {
            throw std::runtime_error("train_step: non-finite loss in batch " + std::to_string(batch_id) +
                                     " (max logit " + fmt17(example_max_logit(model, *batch[i])) + ")");
        }
        total += value;
        backward(ops::scale(loss, inv), /*accumulate=*/true);
        if (top1_counts)
            for (int e : top1) ++(*top1_counts)[static_cast<std::size_t>(e)];
    }
    model.zero_pad_grad();
    clip_global_norm(model.parameters(), tc.clip_norm);
    if (tc.warmup_steps > 0) {
        const double f = std::min(1.0, static_cast<double>(opt.step_count() + 1) / tc.warmup_steps);
        opt.set_lr(0, tc.base_lr * f);
        if (opt.groups().size() > 1) opt.set_lr(1, tc.loc_emb_lr * f);
    }
    opt.step();
    opt.zero_grad();
    return total * inv;
}

double evaluate_loss(const Model& model, const std::vector<SequenceExample>& windows) {
    if (windows.empty()) throw std::invalid_argument("evaluate_loss: no windows");
    NoGradGuard ng;
    double total = 0.0;
    for (const auto& w : windows) total += model.example_loss(w, /*train=*/false, 0)->item();
    return total / static_cast<double>(windows.size());
}

TrainResult train(Model& model, const CityData& city, const TrainConfig& tc,
                  const std::string& out_dir, const std::string& resume_path) {
    tc.validate();
    if (city.users.empty()) throw std::invalid_argument("train: empty city");
    const fs::path dir(out_dir);
    fs::create_directories(dir);

    WindowConfig wcfg;
    wcfg.seq_len = model.cfg.seq_len;
    wcfg.min_target_obs = tc.min_target_obs;
    wcfg.history_from_test = tc.history_from_test;
    const int val_start = holdout_start(wcfg.train_days);
    const bool is_mlm = tc.phase == "pretrain";

    AdamW opt = make_optimizer(model, tc);
    int start_epoch = 1;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();

    if (!resume_path.empty()) {
        const Checkpoint ck = load_checkpoint(resume_path);
        if (auto it = ck.metadata.find("train.phase");
            it != ck.metadata.end() && it->second != tc.phase)
            throw std::runtime_error("train: resume checkpoint is from phase '" + it->second + "'");
        if (auto it = ck.metadata.find("train.seed");
            it != ck.metadata.end() && it->second != std::to_string(tc.seed))
            throw std::runtime_error("train: resume seed mismatch (checkpoint has " + it->second + ")");
        load_params(model, ck);
        std::map<std::string, std::vector<double>> moments;
        for (const auto& [name, t] : ck.tensors) {
            if (name.rfind("opt.", 0) == 0) moments[name.substr(4)] = t->data;
        }
        if (!moments.empty()) opt.restore(moments, std::stoll(ck.metadata.at("opt.step")));
        start_epoch = std::stoi(ck.metadata.at("train.epoch")) + 1;
        best_epoch = std::stoi(ck.metadata.at("train.best_epoch"));
        best_val = std::stod(ck.metadata.at("train.best_val"));
    } else if (tc.reset_loc_emb) {
        const int vocab = location_vocab(model.cfg.G);
        auto fresh = Tensor::randn({vocab, model.cfg.e_loc}, 0.02, mix_seed(tc.seed, 0x10CEu), true);
        std::copy(fresh->data.begin(), fresh->data.end(), model.embed.loc->data.begin());
        std::fill_n(model.embed.loc->data.begin() + static_cast<std::size_t>(pad_id(model.cfg.G)) * model.cfg.e_loc,
                    model.cfg.e_loc, 0.0);
    }

    // Fixed validation set: last 10% of training days, masks frozen across epochs.
    std::vector<SequenceExample> val_windows =
        is_mlm ? mlm_windows(city, tc, wcfg.seq_len, val_start, wcfg.train_days, mix_seed(tc.seed, 0xBADDu))
               : forecast_day_windows(city, wcfg, val_start, wcfg.train_days);

    std::vector<SequenceExample> static_train;
    if (!is_mlm) {
        static_train = forecast_day_windows(city, wcfg, 1, val_start);
        if (static_train.empty()) throw std::runtime_error("train: no training windows");
    }

    const bool fresh_run = resume_path.empty();
    std::ofstream log(dir / "train_log.csv", fresh_run ? std::ios::trunc : std::ios::app);
    std::ofstream routing(dir / "routing.csv", fresh_run ? std::ios::trunc : std::ios::app);
    if (!log || !routing) throw std::runtime_error("train: cannot open log files in " + out_dir);
    if (fresh_run) {
        log << "epoch,step,phase,loss,lr_base,lr_loc\n";
        routing << "epoch,expert,top1_count\n";
    }

    TrainResult result;
    result.best_epoch = best_epoch;

    if (tc.epochs == 0) {
        save_checkpoint((dir / "init.ckpt").string(),
                        snapshot(model, &opt,
                                 {{"train.phase", tc.phase},
                                  {"train.epoch", "0"},
                                  {"train.seed", std::to_string(tc.seed)},
                                  {"train.val_loss", "nan"},
                                  {"train.best_epoch", "0"},
                                  {"train.best_val", "inf"}}));
        point_best_symlink(dir, "init.ckpt");
        result.final_checkpoint = (dir / "init.ckpt").string();
        result.best_checkpoint = (dir / "best.ckpt").string();
        result.best_epoch = 0;
        return result;
    }

    for (int epoch = start_epoch; epoch <= tc.epochs; ++epoch) {
        std::vector<SequenceExample> epoch_mlm;
        const std::vector<SequenceExample>* pool = &static_train;
        if (is_mlm) {
            // Re-masking every epoch: fresh corruption positions, same records.
            epoch_mlm = mlm_windows(city, tc, wcfg.seq_len, 0, val_start,
                                    mix_seed(tc.seed, 0xA000u + static_cast<std::uint64_t>(epoch)));
            if (epoch_mlm.empty()) throw std::runtime_error("train: no training windows");
            pool = &epoch_mlm;
        }

        std::vector<int> order(pool->size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::mt19937_64 shuffle_rng(mix_seed(tc.seed, 0xE900u + static_cast<std::uint64_t>(epoch)));
        shuffle_vec(order, shuffle_rng);

        std::vector<long> expert_counts(static_cast<std::size_t>(model.cfg.experts), 0);
        double loss_sum = 0.0;
        int batch_id = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += tc.batch_size, ++batch_id) {
            const std::size_t end = std::min(order.size(), pos + tc.batch_size);
            std::vector<const SequenceExample*> batch;
            batch.reserve(end - pos);
            for (std::size_t i = pos; i < end; ++i) batch.push_back(&(*pool)[order[i]]);
            const std::uint64_t step_seed =
                mix_seed(mix_seed(tc.seed, 0xD000u + static_cast<std::uint64_t>(epoch)), batch_id);
            const double mean_loss = train_step(model, opt, batch, tc, step_seed, batch_id, &expert_counts);
            loss_sum += mean_loss * static_cast<double>(end - pos);
            const auto& grps = opt.groups();
            const double lr_base = grps[0].lr;
            const double lr_loc = grps.size() > 1 ? grps[1].lr : grps[0].lr;
            log << epoch << ',' << opt.step_count() << ',' << tc.phase << ',' << fmt17(mean_loss)
                << ',' << fmt17(lr_base) << ',' << fmt17(lr_loc) << '\n';
        }
        for (int e = 0; e < model.cfg.experts; ++e)
            routing << epoch << ',' << e << ',' << expert_counts[static_cast<std::size_t>(e)] << '\n';
        log.flush();
        routing.flush();

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(pool->size());
        stats.val_loss = val_windows.empty() ? stats.train_loss : evaluate_loss(model, val_windows);
        stats.expert_top1 = expert_counts;

        if (stats.val_loss < best_val) {
            best_val = stats.val_loss;
            best_epoch = epoch;
        }
        const std::string fname = "epoch_" + std::to_string(epoch) + ".ckpt";
        save_checkpoint((dir / fname).string(),
                        snapshot(model, &opt,
                                 {{"train.phase", tc.phase},
                                  {"train.epoch", std::to_string(epoch)},
                                  {"train.seed", std::to_string(tc.seed)},
                                  {"train.val_loss", fmt17(stats.val_loss)},
                                  {"train.best_epoch", std::to_string(best_epoch)},
                                  {"train.best_val", fmt17(best_val)}}));
        point_best_symlink(dir, "epoch_" + std::to_string(best_epoch) + ".ckpt");
        result.epochs.push_back(std::move(stats));
        result.final_checkpoint = (dir / fname).string();
    }

    result.best_checkpoint = (dir / "best.ckpt").string();
    result.best_epoch = best_epoch;
    return result;
}

}  // namespace stmoe
