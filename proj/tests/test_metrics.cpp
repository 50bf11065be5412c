#include "doctest.h"
#include "stmoe/metrics.hpp"
#include "stmoe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <vector>

using namespace stmoe;
namespace fs = std::filesystem;

namespace {

std::vector<GridCell> random_traj(int len, int G, std::mt19937_64& rng) {
    std::vector<GridCell> out;
    for (int i = 0; i < len; ++i)
        out.push_back({static_cast<int>(bounded(rng, G)), static_cast<int>(bounded(rng, G))});
    return out;
}

/// Every monotone alignment path, cost folded start-to-finish exactly like
/// the DP does, so equality can be exact.
double dtw_brute(const std::vector<GridCell>& a, const std::vector<GridCell>& b) {
    const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
    double best = std::numeric_limits<double>::infinity();
    std::function<void(int, int, double)> go = [&](int i, int j, double acc) {
        acc += cell_distance(a[i], b[j]);
        if (i == n - 1 && j == m - 1) {
            best = std::min(best, acc);
            return;
        }
        if (i + 1 < n) go(i + 1, j, acc);
        if (j + 1 < m) go(i, j + 1, acc);
        if (i + 1 < n && j + 1 < m) go(i + 1, j + 1, acc);
    };
    go(0, 0, 0.0);
    return best;
}

SequenceExample eval_window(int uid, int day, const std::vector<int>& targets, int G) {
    SequenceExample ex;
    ex.uid = uid;
    ex.target_day = day;
    const int T = static_cast<int>(targets.size());
    for (int i = 0; i < T; ++i) {
        ex.token.push_back(targets[i] >= 0 ? mask_id(G) : 0);
        ex.day.push_back(day);
        ex.slot.push_back(i % kSlotsPerDay);
        ex.dow.push_back(day_of_week(day));
        ex.weekend.push_back(is_weekend(day) ? 1 : 0);
        ex.target.push_back(targets[i]);
        ex.attn.push_back(1);
        ex.loss.push_back(targets[i] >= 0 ? 1 : 0);
    }
    return ex;
}

}  // namespace

TEST_SUITE("accuracy") {
    TEST_CASE("hand values") {
        std::vector<GridCell> a{{1, 2}, {3, 4}, {5, 6}};
        CHECK(accuracy(a, a) == 1.0);
        std::vector<GridCell> b{{0, 0}, {0, 1}, {0, 2}};
        CHECK(accuracy(a, b) == 0.0);

        std::vector<GridCell> pred(48, {1, 1}), ref(48, {1, 1});
        for (int i = 12; i < 48; ++i) ref[i] = {2, 2};
        CHECK(accuracy(pred, ref) == 0.25);
    }

    TEST_CASE("equals the Hamming-complement oracle on random pairs") {
        std::mt19937_64 rng(101);
        for (int trial = 0; trial < 1000; ++trial) {
            const int len = 1 + static_cast<int>(bounded(rng, 60));
            auto a = random_traj(len, 4, rng);
            auto b = random_traj(len, 4, rng);
            int mismatches = 0;
            for (int i = 0; i < len; ++i)
                if (!(a[i] == b[i])) ++mismatches;
            // same division the implementation performs, so equality is exact
            CHECK(accuracy(a, b) == static_cast<double>(len - mismatches) / len);
        }
    }

    TEST_CASE("errors") {
        std::vector<GridCell> a{{0, 0}}, b{{0, 0}, {1, 1}}, e;
        CHECK_THROWS_AS(accuracy(a, b), std::invalid_argument);
        CHECK_THROWS_AS(accuracy(e, e), std::invalid_argument);
    }
}

TEST_SUITE("dtw") {
    TEST_CASE("identity and the single-pair distance") {
        std::mt19937_64 rng(102);
        for (int trial = 0; trial < 20; ++trial) {
            auto x = random_traj(1 + static_cast<int>(bounded(rng, 20)), 12, rng);
            CHECK(dtw(x, x) == 0.0);
        }
        CHECK(dtw({{0, 0}}, {{3, 4}}) == 5.0);
    }

    TEST_CASE("matches exhaustive path enumeration exactly (n,m <= 6)") {
        std::mt19937_64 rng(103);
        for (int trial = 0; trial < 300; ++trial) {
            const int n = 1 + static_cast<int>(bounded(rng, 6));
            const int m = 1 + static_cast<int>(bounded(rng, 6));
            auto a = random_traj(n, 8, rng);
            auto b = random_traj(m, 8, rng);
            CHECK(dtw(a, b) == dtw_brute(a, b));  // identical fold order → exact
        }
    }

    TEST_CASE("symmetry and nonnegativity") {
        std::mt19937_64 rng(104);
        for (int trial = 0; trial < 100; ++trial) {
            auto a = random_traj(1 + static_cast<int>(bounded(rng, 10)), 10, rng);
            auto b = random_traj(1 + static_cast<int>(bounded(rng, 10)), 10, rng);
            const double d = dtw(a, b);
            CHECK(d >= 0.0);
            CHECK(d == dtw(b, a));
        }
    }

    TEST_CASE("errors on empty input") {
        std::vector<GridCell> e, x{{1, 1}};
        CHECK_THROWS_AS(dtw(e, x), std::invalid_argument);
        CHECK_THROWS_AS(dtw(x, e), std::invalid_argument);
    }
}

TEST_SUITE("geo_bleu") {
    TEST_CASE("identical sequences score exactly 1") {
        std::mt19937_64 rng(105);
        for (int trial = 0; trial < 20; ++trial) {
            auto x = random_traj(3 + static_cast<int>(bounded(rng, 20)), 9, rng);
            CHECK(geo_bleu(x, x) == 1.0);
        }
    }

    TEST_CASE("single unigram at distance 1") {
        GeoBleuConfig cfg;
        cfg.max_n = 1;
        const double got = geo_bleu({{0, 0}}, {{0, 1}}, cfg);
        CHECK(got == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
        CHECK(got == doctest::Approx(0.606531).epsilon(1e-6));
    }

    TEST_CASE("stays within [0,1] on random pairs") {
        std::mt19937_64 rng(106);
        for (int trial = 0; trial < 200; ++trial) {
            auto a = random_traj(1 + static_cast<int>(bounded(rng, 15)), 10, rng);
            auto b = random_traj(1 + static_cast<int>(bounded(rng, 15)), 10, rng);
            const double s = geo_bleu(a, b);
            CHECK(s >= 0.0);
            CHECK(s <= 1.0);
        }
    }

    TEST_CASE("monotone: moving every prediction farther lowers the 1-gram score") {
        GeoBleuConfig cfg;
        cfg.max_n = 1;
        std::vector<GridCell> ref(10, {5, 5});
        double prev = 1.1;
        for (int d = 0; d <= 6; ++d) {
            std::vector<GridCell> pred(10, {5 + d, 5});
            const double s = geo_bleu(pred, ref, cfg);
            CHECK(s < prev);
            CHECK(s == doctest::Approx(std::exp(-0.5 * d)).epsilon(1e-12));
            prev = s;
        }
    }

    TEST_CASE("short predictions pay the brevity penalty (hand computation)") {
        std::vector<GridCell> pred(2, {3, 3}), ref(4, {3, 3});
        // q1 = 2 matches / max(2,4); q2 = 1 match / max(1,3); BP = exp(1-4/2)
        const double expect =
            std::exp(1.0 - 2.0) * std::exp(0.5 * (std::log(0.5) + std::log(1.0 / 3.0)));
        CHECK(geo_bleu(pred, ref) == doctest::Approx(expect).epsilon(1e-12));

        // equal lengths → BP = 1: score of identical constants is 1 again
        std::vector<GridCell> same(4, {3, 3});
        CHECK(geo_bleu(same, ref) == 1.0);
    }

    TEST_CASE("n-gram cap: max_n beyond the sequence length degrades gracefully") {
        GeoBleuConfig cfg;
        cfg.max_n = 3;
        // length-2 sequences use n = 1..2 only; identical → exactly 1
        std::vector<GridCell> x{{1, 1}, {2, 2}};
        CHECK(geo_bleu(x, x, cfg) == 1.0);
    }

    TEST_CASE("custom weights are honored") {
        GeoBleuConfig cfg;
        cfg.max_n = 2;
        cfg.weights = {1.0, 0.0};  // unigram only, though bigrams exist
        std::vector<GridCell> ref(6, {4, 4}), pred(6, {4, 6});
        CHECK(geo_bleu(pred, ref, cfg) == doctest::Approx(std::exp(-0.5 * 2.0)).epsilon(1e-12));

        cfg.weights = {1.0};  // too short for N=2
        CHECK_THROWS_AS(geo_bleu(pred, ref, cfg), std::invalid_argument);
    }

    TEST_CASE("errors") {
        std::vector<GridCell> e, x{{1, 1}};
        CHECK_THROWS_AS(geo_bleu(e, x), std::invalid_argument);
        GeoBleuConfig bad;
        bad.beta = 0.0;
        CHECK_THROWS_AS(geo_bleu(x, x, bad), std::invalid_argument);
        bad.beta = 0.5;
        bad.max_n = 0;
        CHECK_THROWS_AS(geo_bleu(x, x, bad), std::invalid_argument);
    }
}

TEST_SUITE("evaluate") {
    TEST_CASE("perfect predictor sweeps all three metrics") {
        const int G = 40;
        std::vector<SequenceExample> windows;
        std::mt19937_64 rng(107);
        for (int day = 60; day < 63; ++day) {
            std::vector<int> targets(48, -1);
            for (int i = 0; i < 48; ++i)
                if (bounded(rng, 4) != 0) targets[i] = static_cast<int>(bounded(rng, G * G));
            if (std::all_of(targets.begin(), targets.end(), [](int t) { return t < 0; }))
                targets[0] = 7;
            windows.push_back(eval_window(1, day, targets, G));
        }

        Predictor perfect = [](const SequenceExample& ex) {
            std::vector<int> out;
            for (int i = 0; i < ex.length(); ++i)
                if (ex.loss[i]) out.push_back(ex.target[i]);
            return out;
        };
        auto report = evaluate_windows(perfect, windows, G);
        CHECK(report.window_count == 3);
        CHECK(report.mean_accuracy == 1.0);
        CHECK(report.mean_geo_bleu == 1.0);
        CHECK(report.mean_dtw == 0.0);
    }

    TEST_CASE("constant offset of 5 cells for 48 slots costs DTW 240") {
        const int G = 40;
        const int truth = cell_to_class({2, 3}, G);
        const int guess = cell_to_class({7, 3}, G);
        std::vector<SequenceExample> windows{
            eval_window(4, 61, std::vector<int>(48, truth), G)};
        Predictor constant = [&](const SequenceExample& ex) {
            return std::vector<int>(static_cast<std::size_t>(ex.loss_count()), guess);
        };
        auto report = evaluate_windows(constant, windows, G);
        CHECK(report.mean_dtw == 240.0);
        CHECK(report.mean_accuracy == 0.0);
        CHECK(report.mean_geo_bleu == doctest::Approx(std::exp(-2.5)).epsilon(1e-12));
    }

    TEST_CASE("window bookkeeping, report CSV, and the summary line") {
        const int G = 8;
        std::vector<SequenceExample> windows;
        for (int day = 60; day < 65; ++day)
            windows.push_back(eval_window(2, day, std::vector<int>(10, 5), G));
        Predictor perfect = [](const SequenceExample& ex) {
            std::vector<int> out;
            for (int i = 0; i < ex.length(); ++i)
                if (ex.loss[i]) out.push_back(ex.target[i]);
            return out;
        };
        auto report = evaluate_windows(perfect, windows, G);
        CHECK(report.window_count == 5);
        CHECK(report.windows.size() == 5);
        CHECK(report.windows[0].uid == 2);
        CHECK(report.windows[0].day == 60);

        auto dir = fs::temp_directory_path() / "stmoe_metrics_tests";
        fs::create_directories(dir);
        const auto path = dir / "report.csv";
        write_report_csv(path.string(), "cityX", report);

        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        CHECK(line.rfind("#", 0) == 0);  // aggregation note
        std::getline(in, line);
        CHECK(line == "city,uid,day,accuracy,geo_bleu,dtw");
        int rows = 0;
        std::string last;
        while (std::getline(in, line))
            if (!line.empty()) {
                ++rows;
                last = line;
            }
        CHECK(rows == 6);  // 5 windows + summary
        CHECK(last == "cityX,summary,5,1,1,0");

        const auto summary = report_summary_line("cityX", report);
        CHECK(summary == "city=cityX windows=5 accuracy=1 geo_bleu=1 dtw=0");
    }

    TEST_CASE("a predictor returning the wrong count is rejected") {
        const int G = 8;
        std::vector<SequenceExample> windows{eval_window(1, 60, std::vector<int>(6, 2), G)};
        Predictor broken = [](const SequenceExample&) { return std::vector<int>{1}; };
        CHECK_THROWS_AS(evaluate_windows(broken, windows, G), std::logic_error);
        CHECK_THROWS_AS(evaluate_windows(broken, {}, G), std::invalid_argument);
    }
}
