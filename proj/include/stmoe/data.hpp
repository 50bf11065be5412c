#pragma once

#include "stmoe/grid.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stmoe {

/// One observed stay: user `uid` was in `cell` during half-hour `slot` of `day`.
struct Record {
    int uid = 0;
    int day = 0;   // [0, kTotalDays)
    int slot = 0;  // [0, kSlotsPerDay)
    GridCell cell;
};

/// Fixed-length model input. Position i is either PAD (attn 0), an observed
/// history token, or a MASK query. Loss-masked positions carry the class id to
/// recover in `target`; everywhere else target is -1.
struct SequenceExample {
    int uid = -1;
    int target_day = -1;  // forecast windows only; -1 for MLM windows
    std::vector<int> token;
    std::vector<int> day;
    std::vector<int> slot;
    std::vector<int> dow;
    std::vector<int> weekend;
    std::vector<int> target;
    std::vector<std::uint8_t> attn;
    std::vector<std::uint8_t> loss;

    int length() const { return static_cast<int>(token.size()); }
    int loss_count() const;
};

/// Throws std::logic_error if `ex` violates any SequenceExample invariant.
void check_example(const SequenceExample& ex, int G);

struct CityData {
    int G = 0;
    std::map<int, std::vector<Record>> users;  // per uid, sorted by (day, slot)
};

/// Parse `uid,d,t,x,y` CSV (1-based x,y). Sorted by (uid, day, slot);
/// duplicate (uid,day,slot) rows keep the first occurrence.
CityData load_city(const std::string& path, int G);

struct SplitRecords {
    std::vector<Record> train;  // days [0, train_days)
    std::vector<Record> test;   // days [train_days, ...)
};
SplitRecords split_train_test(const std::vector<Record>& records, int train_days = kTrainDays);

struct WindowConfig {
    int seq_len = 240;
    int horizon = 48;
    int train_days = kTrainDays;
    int total_days = kTotalDays;
    int min_target_obs = 1;       // drop windows with fewer observed target slots
    bool history_from_test = true;  // may history include earlier test-period days
};

/// Window predicting day `day` of one user from the most recent seq_len-horizon
/// observed records before it. nullopt when the day has too few observations.
std::optional<SequenceExample> forecast_window(const std::vector<Record>& recs, int G,
                                               const WindowConfig& cfg, int day);

/// One window per test day in [train_days, total_days).
std::vector<SequenceExample> build_forecast_windows(const std::vector<Record>& recs, int G,
                                                    const WindowConfig& cfg);

/// Fine-tuning windows: one per train-period day in [1, train_days).
std::vector<SequenceExample> build_train_windows(const std::vector<Record>& recs, int G,
                                                 const WindowConfig& cfg);

/// MLM pretraining windows over one user's training records: seq_len-record
/// slices advanced by `stride`, left-padded when short. floor(mask_ratio *
/// n_real) positions per window are replaced by MASK; selection is seeded by
/// (seed, uid, window start) so batches are reproducible in isolation.
std::vector<SequenceExample> build_mlm_windows(const std::vector<Record>& recs, int G,
                                               double mask_ratio, std::uint64_t seed,
                                               int seq_len = 240, int stride = 48);

}  // namespace stmoe
