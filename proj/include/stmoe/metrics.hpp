#pragma once

#include "stmoe/data.hpp"
#include "stmoe/grid.hpp"

#include <functional>
#include <string>
#include <vector>

namespace stmoe {

/// Fraction of positions where pred and ref coincide. Lengths must match.
double accuracy(const std::vector<GridCell>& pred, const std::vector<GridCell>& ref);

/// Classic dynamic-time-warping distance with Euclidean cell cost and steps
/// {(i-1,j), (i,j-1), (i-1,j-1)}. Unnormalized: the sum of costs along the
/// cheapest monotone alignment path.
double dtw(const std::vector<GridCell>& pred, const std::vector<GridCell>& ref);

struct GeoBleuConfig {
    int max_n = 3;                // capped at min(len(pred), len(ref))
    double beta = 0.5;            // n-gram similarity decay exp(-beta * mean cell distance)
    std::vector<double> weights;  // per-n weights; empty → uniform 1/N
};

/// BLEU-flavoured spatial score in [0, 1]: geometric mean of n-gram precisions
/// built from greedy maximal-similarity matching without replacement, times a
/// brevity penalty.
double geo_bleu(const std::vector<GridCell>& pred, const std::vector<GridCell>& ref,
                const GeoBleuConfig& cfg = {});

struct WindowScore {
    int uid = -1;
    int day = -1;
    double accuracy = 0.0;
    double geo_bleu = 0.0;
    double dtw = 0.0;
};

struct EvalReport {
    std::vector<WindowScore> windows;
    double mean_accuracy = 0.0;
    double mean_geo_bleu = 0.0;
    double mean_dtw = 0.0;
    int window_count = 0;
};

/// Predicted class id per loss-masked slot of the window, in slot order.
using Predictor = std::function<std::vector<int>(const SequenceExample&)>;

/// Score a predictor over forecast windows. Slots absent from the ground
/// truth are skipped; per-window metrics are aggregated as unweighted means.
EvalReport evaluate_windows(const Predictor& predict, const std::vector<SequenceExample>& windows,
                            int G, const GeoBleuConfig& gb = {});

/// CSV report: `city,uid,day,accuracy,geo_bleu,dtw` per window plus one
/// summary row per city, preceded by an aggregation note.
void write_report_csv(const std::string& path, const std::string& city_name, const EvalReport& r);

/// Single-line machine-readable summary (key=value pairs).
std::string report_summary_line(const std::string& city_name, const EvalReport& r);

}  // namespace stmoe
