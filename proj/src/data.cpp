#include "stmoe/data.hpp"

#include "stmoe/rng.hpp"
#include "stmoe/tensor.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <stdexcept>

namespace stmoe {

namespace {

int parse_int(std::string_view field, const std::string& path, std::size_t line,
              const char* name) {
    int value = 0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) {
        throw std::runtime_error(path + " line " + std::to_string(line) + ": field '" + name +
                                 "' is not an integer: '" + std::string(field) + "'");
    }
    return value;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

void fill_position(SequenceExample& ex, int pos, int token, int day, int slot, bool attend) {
    ex.token[pos] = token;
    ex.day[pos] = day;
    ex.slot[pos] = slot;
    ex.dow[pos] = day_of_week(day);
    ex.weekend[pos] = is_weekend(day) ? 1 : 0;
    ex.attn[pos] = attend ? 1 : 0;
}

SequenceExample blank_example(int uid, int len, int G) {
    SequenceExample ex;
    ex.uid = uid;
    ex.token.assign(len, pad_id(G));
    ex.day.assign(len, 0);
    ex.slot.assign(len, 0);
    ex.dow.assign(len, 0);
    ex.weekend.assign(len, 0);
    ex.target.assign(len, -1);
    ex.attn.assign(len, 0);
    ex.loss.assign(len, 0);
    return ex;
}

}  // namespace

int SequenceExample::loss_count() const {
    int n = 0;
    for (auto v : loss) n += v;
    return n;
}

void check_example(const SequenceExample& ex, int G) {
    const auto fail = [&](const std::string& why) {
        throw std::logic_error("SequenceExample(uid " + std::to_string(ex.uid) + "): " + why);
    };
    const std::size_t n = ex.token.size();
    if (ex.day.size() != n || ex.slot.size() != n || ex.dow.size() != n ||
        ex.weekend.size() != n || ex.target.size() != n || ex.attn.size() != n ||
        ex.loss.size() != n) {
        fail("field lengths disagree");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (ex.token[i] < 0 || ex.token[i] >= location_vocab(G)) fail("token out of vocabulary");
        if (ex.day[i] < 0 || ex.day[i] >= kTotalDays) fail("day out of range");
        if (ex.slot[i] < 0 || ex.slot[i] >= kSlotsPerDay) fail("slot out of range");
        if (ex.dow[i] != ex.day[i] % 7) fail("day_of_week != day mod 7");
        if (ex.weekend[i] != ((ex.dow[i] >= 5) ? 1 : 0)) fail("weekend flag inconsistent");
        if (ex.loss[i] && !ex.attn[i]) fail("loss mask outside attention mask");
        if (ex.loss[i] && ex.token[i] != mask_id(G)) fail("loss-masked position is not MASK");
        if (ex.loss[i] && (ex.target[i] < 0 || ex.target[i] >= G * G)) {
            fail("loss-masked position lacks a real target class");
        }
        if (!ex.loss[i] && ex.target[i] != -1) fail("target set outside the loss mask");
        if ((ex.token[i] == pad_id(G)) != (ex.attn[i] == 0)) {
            fail("attention mask must be 0 exactly at PAD positions");
        }
    }
}

CityData load_city(const std::string& path, int G) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_city: cannot open " + path);

    CityData city;
    city.G = G;
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(in, line)) throw std::runtime_error("load_city: " + path + " is empty");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "uid,d,t,x,y") {
        throw std::runtime_error(path + " line 1: expected header 'uid,d,t,x,y', got '" + line +
                                 "'");
    }

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 5) {
            throw std::runtime_error(path + " line " + std::to_string(lineno) +
                                     ": expected 5 fields, got " + std::to_string(fields.size()));
        }
        Record r;
        r.uid = parse_int(fields[0], path, lineno, "uid");
        r.day = parse_int(fields[1], path, lineno, "d");
        r.slot = parse_int(fields[2], path, lineno, "t");
        const int x = parse_int(fields[3], path, lineno, "x");
        const int y = parse_int(fields[4], path, lineno, "y");
        const auto bad = [&](const char* what) {
            throw std::runtime_error(path + " line " + std::to_string(lineno) + ": " + what +
                                     " out of range");
        };
        if (r.uid < 0) bad("uid");
        if (r.day < 0 || r.day >= kTotalDays) bad("d");
        if (r.slot < 0 || r.slot >= kSlotsPerDay) bad("t");
        if (x < 1 || x > G) bad("x");
        if (y < 1 || y > G) bad("y");
        r.cell = GridCell{x - 1, y - 1};
        city.users[r.uid].push_back(r);
    }

    for (auto& [uid, recs] : city.users) {
        std::stable_sort(recs.begin(), recs.end(), [](const Record& a, const Record& b) {
            return a.day != b.day ? a.day < b.day : a.slot < b.slot;
        });
        recs.erase(std::unique(recs.begin(), recs.end(),
                               [](const Record& a, const Record& b) {
                                   return a.day == b.day && a.slot == b.slot;
                               }),
                   recs.end());
    }
    return city;
}

SplitRecords split_train_test(const std::vector<Record>& records, int train_days) {
    SplitRecords out;
    for (const Record& r : records) {
        (r.day < train_days ? out.train : out.test).push_back(r);
    }
    return out;
}

std::optional<SequenceExample> forecast_window(const std::vector<Record>& recs, int G,
                                               const WindowConfig& cfg, int day) {
    const auto day_lt = [](const Record& r, int d) { return r.day < d; };
    const auto begin_day = std::lower_bound(recs.begin(), recs.end(), day, day_lt);
    const auto end_day = std::lower_bound(recs.begin(), recs.end(), day + 1, day_lt);
    const int n_target = static_cast<int>(end_day - begin_day);
    if (n_target < std::max(cfg.min_target_obs, 1)) return std::nullopt;

    int history_cutoff = day;
    if (!cfg.history_from_test) history_cutoff = std::min(day, cfg.train_days);
    const auto hist_end = std::lower_bound(recs.begin(), recs.end(), history_cutoff, day_lt);
    const int hist_cap = cfg.seq_len - cfg.horizon;
    const int n_hist = std::min<int>(hist_cap, static_cast<int>(hist_end - recs.begin()));
    const auto hist_begin = hist_end - n_hist;

    SequenceExample ex = blank_example(recs.empty() ? -1 : recs.front().uid, cfg.seq_len, G);
    ex.target_day = day;
    int pos = hist_cap - n_hist;  // PAD fills [0, pos)
    for (auto it = hist_begin; it != hist_end; ++it, ++pos) {
        fill_position(ex, pos, cell_to_class(it->cell, G), it->day, it->slot, true);
    }
    auto obs = begin_day;
    for (int s = 0; s < cfg.horizon; ++s) {
        const int p = hist_cap + s;
        fill_position(ex, p, mask_id(G), day, s, true);
        if (obs != end_day && obs->slot == s) {
            ex.loss[p] = 1;
            ex.target[p] = cell_to_class(obs->cell, G);
            ++obs;
        }
    }
    return ex;
}

std::vector<SequenceExample> build_forecast_windows(const std::vector<Record>& recs, int G,
                                                    const WindowConfig& cfg) {
    std::vector<SequenceExample> out;
    for (int day = cfg.train_days; day < cfg.total_days; ++day) {
        if (auto ex = forecast_window(recs, G, cfg, day)) out.push_back(std::move(*ex));
    }
    return out;
}

std::vector<SequenceExample> build_train_windows(const std::vector<Record>& recs, int G,
                                                 const WindowConfig& cfg) {
    std::vector<SequenceExample> out;
    for (int day = 1; day < cfg.train_days; ++day) {
        if (auto ex = forecast_window(recs, G, cfg, day)) out.push_back(std::move(*ex));
    }
    return out;
}

std::vector<SequenceExample> build_mlm_windows(const std::vector<Record>& recs, int G,
                                               double mask_ratio, std::uint64_t seed,
                                               int seq_len, int stride) {
    if (mask_ratio <= 0.0) throw std::invalid_argument("mask ratio must be positive");
    if (mask_ratio >= 1.0) throw std::invalid_argument("mask ratio must be below 1");
    std::vector<SequenceExample> out;
    const int n = static_cast<int>(recs.size());
    if (n == 0) return out;
    const int uid = recs.front().uid;

    std::vector<int> starts;
    for (int s = 0; s + seq_len <= n; s += stride) starts.push_back(s);
    if (starts.empty()) {
        starts.push_back(0);  // short user: one left-padded window
    } else if (starts.back() + seq_len < n) {
        starts.push_back(n - seq_len);  // cover the tail
    }

    for (int start : starts) {
        const int n_real = std::min(seq_len, n - start);
        const int n_mask = static_cast<int>(mask_ratio * n_real);
        if (n_mask < 1) continue;

        SequenceExample ex = blank_example(uid, seq_len, G);
        const int offset = seq_len - n_real;  // PAD fills [0, offset)
        for (int i = 0; i < n_real; ++i) {
            const Record& r = recs[start + i];
            fill_position(ex, offset + i, cell_to_class(r.cell, G), r.day, r.slot, true);
        }
        std::mt19937_64 rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(uid)),
                                     static_cast<std::uint64_t>(start)));
        for (int i : sample_indices(n_real, n_mask, rng)) {
            const int p = offset + i;
            ex.target[p] = ex.token[p];
            ex.token[p] = mask_id(G);
            ex.loss[p] = 1;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace stmoe
