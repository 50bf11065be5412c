#include "stmoe/synth.hpp"

#include "stmoe/rng.hpp"
#include "stmoe/tensor.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace stmoe {

namespace {

constexpr int kWorkBandLo = 16;  // 8:00
constexpr int kWorkBandHi = 36;  // 18:00

int clamp_coord(int v, int G) { return std::clamp(v, 0, G - 1); }

GridCell jitter(GridCell base, int radius, int G, std::mt19937_64& rng) {
    const int span = 2 * radius + 1;
    const int dx = static_cast<int>(bounded(rng, span)) - radius;
    const int dy = static_cast<int>(bounded(rng, span)) - radius;
    return GridCell{clamp_coord(base.x + dx, G), clamp_coord(base.y + dy, G)};
}

}  // namespace

std::vector<Record> synthesize_city(const SynthParams& p) {
    if (p.users < 1) throw std::invalid_argument("synthesize_city: users must be >= 1");
    if (p.G < 8) throw std::invalid_argument("synthesize_city: grid side must be >= 8");

    // City geography: cluster centers kept away from the border so that
    // excursion boxes rarely clamp.
    std::mt19937_64 city_rng(mix_seed(p.seed, 0xC171u));
    const int margin = std::min(p.G / 4, p.cluster_spread + p.excursion_radius + 1);
    const int span = p.G - 2 * margin;
    auto center = [&] {
        return GridCell{margin + static_cast<int>(bounded(city_rng, span)),
                        margin + static_cast<int>(bounded(city_rng, span))};
    };
    std::vector<GridCell> homes_c(p.home_clusters), works_c(p.work_clusters), leisure_c(6);
    for (auto& c : homes_c) c = center();
    for (auto& c : works_c) c = center();
    for (auto& c : leisure_c) c = center();

    std::vector<Record> out;
    out.reserve(static_cast<std::size_t>(p.users) * p.days * 16);
    for (int u = 0; u < p.users; ++u) {
        std::mt19937_64 rng(mix_seed(mix_seed(p.seed, 0x5EEDu), static_cast<std::uint64_t>(u)));
        const GridCell home =
            jitter(homes_c[bounded(rng, homes_c.size())], p.cluster_spread, p.G, rng);
        const GridCell work =
            jitter(works_c[bounded(rng, works_c.size())], p.cluster_spread, p.G, rng);
        const int n_leisure = static_cast<int>(bounded(rng, 3));
        GridCell leisure[2] = {home, home};
        for (int i = 0; i < n_leisure; ++i) {
            leisure[i] = jitter(leisure_c[bounded(rng, leisure_c.size())], p.cluster_spread,
                                p.G, rng);
        }
        const int work_start = 14 + static_cast<int>(bounded(rng, 3));  // covers slot 16
        const int work_end = 36 + static_cast<int>(bounded(rng, 3));    // covers slot 36
        const int leisure_start = 20 + static_cast<int>(bounded(rng, 6));
        const int leisure_end = leisure_start + 6 + static_cast<int>(bounded(rng, 6));

        const auto scheduled = [&](int day, int slot) -> GridCell {
            if (is_weekend(day)) {
                if (n_leisure > 0 && slot >= leisure_start && slot <= leisure_end) {
                    return leisure[(day_of_week(day) - 5) % n_leisure];
                }
                return home;
            }
            if (slot >= work_start && slot <= work_end) return work;
            return home;
        };

        for (int day = 0; day < p.days; ++day) {
            const bool weekday = !is_weekend(day);
            for (int slot = 0; slot < kSlotsPerDay; ++slot) {
                const bool work_band = weekday && slot >= kWorkBandLo && slot <= kWorkBandHi;
                const double presence = work_band ? p.presence_work : p.presence_off;
                if (uniform01(rng) >= presence) continue;
                GridCell cell = scheduled(day, slot);
                if (p.eps > 0.0 && uniform01(rng) < p.eps) {
                    cell = jitter(cell, p.excursion_radius, p.G, rng);
                }
                out.push_back(Record{u, day, slot, cell});
            }
        }
    }
    return out;
}

void write_city_csv(const std::string& path, const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_city_csv: cannot open " + path + " for writing");
    out << "uid,d,t,x,y\n";
    char buf[80];
    for (const Record& r : records) {
        const int n = std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%d\n", r.uid, r.day, r.slot,
                                    r.cell.x + 1, r.cell.y + 1);
        out.write(buf, n);
    }
    if (!out) throw std::runtime_error("write_city_csv: write failed for " + path);
}

void write_sidecar(const std::string& path, const SynthParams& p) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_sidecar: cannot open " + path + " for writing");
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "users=%d\ngrid=%d\ndays=%d\nseed=%llu\neps=%.10g\npresence_work=%.10g\n"
                  "presence_off=%.10g\nexcursion_radius=%d\nhome_clusters=%d\n"
                  "work_clusters=%d\ncluster_spread=%d\n",
                  p.users, p.G, p.days, static_cast<unsigned long long>(p.seed), p.eps,
                  p.presence_work, p.presence_off, p.excursion_radius, p.home_clusters,
                  p.work_clusters, p.cluster_spread);
    out << buf;
}

SynthParams read_synth_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_synth_params: cannot open " + path);
    SynthParams p;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const auto fail = [&](const std::string& why) {
            throw std::invalid_argument("read_synth_params: " + path + ":" +
                                        std::to_string(lineno) + ": " + why);
        };
        if (eq == std::string::npos) fail("expected key=value, got '" + line + "'");
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        int* iptr = key == "users"              ? &p.users
                    : key == "grid"             ? &p.G
                    : key == "days"             ? &p.days
                    : key == "excursion_radius" ? &p.excursion_radius
                    : key == "home_clusters"    ? &p.home_clusters
                    : key == "work_clusters"    ? &p.work_clusters
                    : key == "cluster_spread"   ? &p.cluster_spread
                                                : nullptr;
        double* dptr = key == "eps"             ? &p.eps
                       : key == "presence_work" ? &p.presence_work
                       : key == "presence_off"  ? &p.presence_off
                                                : nullptr;
        if (!iptr && !dptr && key != "seed") fail("unknown key '" + key + "'");
        try {
            if (iptr) *iptr = std::stoi(val);
            else if (dptr) *dptr = std::stod(val);
            else p.seed = std::stoull(val);
        } catch (const std::exception&) {
            fail("bad value '" + val + "' for key '" + key + "'");
        }
    }
    return p;
}

}  // namespace stmoe
