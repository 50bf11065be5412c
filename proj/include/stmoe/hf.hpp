#pragma once

#include "stmoe/data.hpp"

#include <map>
#include <utility>
#include <vector>

namespace stmoe {

/// Historical Frequency baseline: per-user visit counts keyed by
/// (day type, slot), with graceful fallbacks for unseen keys.
class FrequencyTable {
public:
    /// Day type granularity. Dow keys each weekday separately (the finest
    /// reading of "time and weekday"); Weekend collapses to a 2-way flag.
    enum class DayKey { Dow, Weekend };

    static FrequencyTable fit(const CityData& city, int train_days = kTrainDays,
                              DayKey key = DayKey::Dow);

    /// Mode of (uid, day type, slot); falls back to (uid, slot), then the
    /// user's global mode, then the city's. Ties take the smaller class id.
    int predict(int uid, int day, int slot) const;

    bool empty() const { return city_counts_.empty(); }

private:
    using Counts = std::map<int, long>;  // class id → occurrences

    static int mode(const Counts& counts);

    struct UserTable {
        std::map<std::pair<int, int>, Counts> by_key_slot;  // (day type, slot)
        std::map<int, Counts> by_slot;
        Counts global;
    };

    int day_type(int day) const;

    DayKey key_ = DayKey::Dow;
    std::map<int, UserTable> users_;
    Counts city_counts_;
};

}  // namespace stmoe
