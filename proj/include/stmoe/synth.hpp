#pragma once

#include "stmoe/data.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stmoe {

/// Commuter-model generator knobs. Defaults make a city whose schedules are
/// near-deterministic: ideal for learnability fixtures.
struct SynthParams {
    int users = 50;
    int G = 40;
    int days = kTotalDays;
    std::uint64_t seed = 7;
    double eps = 0.02;           // probability an emitted record is an excursion
    double presence_work = 0.6;  // weekday emission probability, slots 16..36
    double presence_off = 0.25;  // emission probability everywhere else
    int excursion_radius = 3;    // excursions stay in this box around the scheduled cell
    int home_clusters = 4;
    int work_clusters = 3;
    int cluster_spread = 3;
};

/// Each user commutes home → work on weekdays (work block covers slots 16–36),
/// stays home or visits a fixed leisure cell on weekends. Presence is sampled
/// per slot; ε-excursions displace the recorded cell inside a small box.
/// Deterministic in (seed, params); records come out sorted by (uid, day, slot).
std::vector<Record> synthesize_city(const SynthParams& p);

/// `uid,d,t,x,y` with 1-based coordinates, LF line endings.
void write_city_csv(const std::string& path, const std::vector<Record>& records);

/// key=value dump of the generating parameters next to the CSV.
void write_sidecar(const std::string& path, const SynthParams& p);

/// Parse a sidecar-format params file. Unknown keys are fatal.
SynthParams read_synth_params(const std::string& path);

}  // namespace stmoe
