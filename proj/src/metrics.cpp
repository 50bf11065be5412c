#include "stmoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace stmoe {

namespace {

std::string fmt12(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

double accuracy(const std::vector<GridCell>& pred, const std::vector<GridCell>& ref) {
    if (pred.size() != ref.size()) throw std::invalid_argument("accuracy: length mismatch");
    if (pred.empty()) throw std::invalid_argument("accuracy: empty sequences");
    int hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == ref[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double dtw(const std::vector<GridCell>& pred, const std::vector<GridCell>& ref) {
    const std::size_t n = pred.size(), m = ref.size();
    if (n == 0 || m == 0) throw std::invalid_argument("dtw: empty sequences");
    // Rolling single row of the DP table; D[i][j] accumulates the path cost
    // left-to-right so sums fold in the same order as an explicit path walk.
    std::vector<double> prev(m), cur(m);
    for (std::size_t j = 0; j < m; ++j)
        prev[j] = (j == 0 ? 0.0 : prev[j - 1]) + cell_distance(pred[0], ref[j]);
    for (std::size_t i = 1; i < n; ++i) {
        cur[0] = prev[0] + cell_distance(pred[i], ref[0]);
        for (std::size_t j = 1; j < m; ++j) {
            const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
            cur[j] = best + cell_distance(pred[i], ref[j]);
        }
        std::swap(prev, cur);
    }
    return prev[m - 1];
}

double geo_bleu(const std::vector<GridCell>& pred, const std::vector<GridCell>& ref,
                const GeoBleuConfig& cfg) {
    if (pred.empty() || ref.empty()) throw std::invalid_argument("geo_bleu: empty sequences");
    if (!(cfg.beta > 0)) throw std::invalid_argument("geo_bleu: beta must be positive");
    if (cfg.max_n < 1) throw std::invalid_argument("geo_bleu: max_n must be at least 1");

    const int N = std::min<int>(cfg.max_n, static_cast<int>(std::min(pred.size(), ref.size())));
    if (!cfg.weights.empty() && static_cast<int>(cfg.weights.size()) < N)
        throw std::invalid_argument("geo_bleu: need a weight per n-gram order");

    double log_sum = 0.0;
    for (int n = 1; n <= N; ++n) {
        const double w = cfg.weights.empty() ? 1.0 / static_cast<double>(N) : cfg.weights[n - 1];
        const int cp = static_cast<int>(pred.size()) - n + 1;
        const int cr = static_cast<int>(ref.size()) - n + 1;
        // Greedy matching without replacement: repeatedly take the most
        // similar unmatched (pred n-gram, ref n-gram) pair. Ties resolve to
        // the earliest pair in (pred index, ref index) order.
        std::vector<double> sim(static_cast<std::size_t>(cp) * cr);
        for (int ip = 0; ip < cp; ++ip) {
            for (int ir = 0; ir < cr; ++ir) {
                double dist = 0.0;
                for (int t = 0; t < n; ++t) dist += cell_distance(pred[ip + t], ref[ir + t]);
                sim[static_cast<std::size_t>(ip) * cr + ir] = std::exp(-cfg.beta * dist / n);
            }
        }
        std::vector<char> used_p(cp, 0), used_r(cr, 0);
        const int matches = std::min(cp, cr);
        double sim_sum = 0.0;
        for (int k = 0; k < matches; ++k) {
            double best = -1.0;
            int bp = -1, br = -1;
            for (int ip = 0; ip < cp; ++ip) {
                if (used_p[ip]) continue;
                for (int ir = 0; ir < cr; ++ir) {
                    if (used_r[ir]) continue;
                    const double s = sim[static_cast<std::size_t>(ip) * cr + ir];
                    if (s > best) {
                        best = s;
                        bp = ip;
                        br = ir;
                    }
                }
            }
            used_p[bp] = used_r[br] = 1;
            sim_sum += best;
        }
        const double q = sim_sum / static_cast<double>(std::max(cp, cr));
        if (q <= 0.0) return 0.0;
        log_sum += w * std::log(q);
    }
    const double bp = pred.size() >= ref.size()
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(ref.size()) / pred.size());
    return bp * std::exp(log_sum);
}

EvalReport evaluate_windows(const Predictor& predict, const std::vector<SequenceExample>& windows,
                            int G, const GeoBleuConfig& gb) {
    if (windows.empty()) throw std::invalid_argument("evaluate_windows: no windows");
    EvalReport report;
    for (const auto& ex : windows) {
        const std::vector<int> pred_classes = predict(ex);
        std::vector<GridCell> ref;
        for (int i = 0; i < ex.length(); ++i)
            if (ex.loss[i]) ref.push_back(class_to_cell(ex.target[i], G));
        if (pred_classes.size() != ref.size())
            throw std::logic_error("evaluate_windows: predictor returned " +
                                   std::to_string(pred_classes.size()) + " cells for " +
                                   std::to_string(ref.size()) + " observed slots");
        std::vector<GridCell> pred;
        pred.reserve(pred_classes.size());
        for (int c : pred_classes) pred.push_back(class_to_cell(c, G));

        WindowScore s;
        s.uid = ex.uid;
        s.day = ex.target_day;
        s.accuracy = accuracy(pred, ref);
        s.geo_bleu = geo_bleu(pred, ref, gb);
        s.dtw = dtw(pred, ref);
        report.windows.push_back(s);
        report.mean_accuracy += s.accuracy;
        report.mean_geo_bleu += s.geo_bleu;
        report.mean_dtw += s.dtw;
    }
    report.window_count = static_cast<int>(report.windows.size());
    report.mean_accuracy /= report.window_count;
    report.mean_geo_bleu /= report.window_count;
    report.mean_dtw /= report.window_count;
    return report;
}

void write_report_csv(const std::string& path, const std::string& city_name, const EvalReport& r) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_report_csv: cannot open " + path);
    out << "# aggregation: unweighted mean over windows\n";
    out << "city,uid,day,accuracy,geo_bleu,dtw\n";
    for (const auto& w : r.windows) {
        out << city_name << ',' << w.uid << ',' << w.day << ',' << fmt12(w.accuracy) << ','
            << fmt12(w.geo_bleu) << ',' << fmt12(w.dtw) << '\n';
    }
    out << city_name << ",summary," << r.window_count << ',' << fmt12(r.mean_accuracy) << ','
        << fmt12(r.mean_geo_bleu) << ',' << fmt12(r.mean_dtw) << '\n';
    if (!out.flush()) throw std::runtime_error("write_report_csv: write failed for " + path);
}

std::string report_summary_line(const std::string& city_name, const EvalReport& r) {
    std::string line = "city=" + city_name;
    line += " windows=" + std::to_string(r.window_count);
    line += " accuracy=" + fmt12(r.mean_accuracy);
    line += " geo_bleu=" + fmt12(r.mean_geo_bleu);
    line += " dtw=" + fmt12(r.mean_dtw);
    return line;
}

}  // namespace stmoe
