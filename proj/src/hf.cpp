#include "stmoe/hf.hpp"

#include <stdexcept>

namespace stmoe {

int FrequencyTable::day_type(int day) const {
    const int dow = day_of_week(day);
    return key_ == DayKey::Dow ? dow : (is_weekend(day) ? 1 : 0);
}

FrequencyTable FrequencyTable::fit(const CityData& city, int train_days, DayKey key) {
    FrequencyTable table;
    table.key_ = key;
    for (const auto& [uid, recs] : city.users) {
        for (const auto& r : recs) {
            if (r.day >= train_days) continue;
            const int cls = cell_to_class(r.cell, city.G);
            auto& user = table.users_[uid];
            ++user.by_key_slot[{table.day_type(r.day), r.slot}][cls];
            ++user.by_slot[r.slot][cls];
            ++user.global[cls];
            ++table.city_counts_[cls];
        }
    }
    return table;
}

int FrequencyTable::mode(const Counts& counts) {
    long best = 0;
    int cls = -1;
    for (const auto& [c, n] : counts) {  // ascending class id → ties keep the smaller
        if (n > best) {
            best = n;
            cls = c;
        }
    }
    return cls;
}

int FrequencyTable::predict(int uid, int day, int slot) const {
    if (city_counts_.empty()) throw std::logic_error("FrequencyTable::predict: empty table");
    const auto uit = users_.find(uid);
    if (uit != users_.end()) {
        const auto& user = uit->second;
        if (auto it = user.by_key_slot.find({day_type(day), slot}); it != user.by_key_slot.end())
            return mode(it->second);
        if (auto it = user.by_slot.find(slot); it != user.by_slot.end()) return mode(it->second);
        return mode(user.global);
    }
    return mode(city_counts_);
}

}  // namespace stmoe
