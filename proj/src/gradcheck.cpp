#include "stmoe/gradcheck.hpp"

#include "stmoe/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

namespace stmoe {

namespace {

/// A window mixing PAD, observed history, and loss-masked queries, so every
/// parameter participates in the checked loss.
SequenceExample probe_example(const ModelConfig& cfg, std::uint64_t seed) {
    const int T = cfg.seq_len;
    if (T < 6) throw std::invalid_argument("gradcheck: seq_len too short for a probe window");
    std::mt19937_64 rng(mix_seed(seed, 0x6C0DE));
    const int n_pad = 2;
    const int n_mask = std::max(2, T / 4);
    const int n_hist = T - n_pad - n_mask;

    SequenceExample ex;
    ex.uid = 1;
    ex.target_day = 60;
    auto push = [&](int token, int day, int slot, int target, int attn, int loss) {
        ex.token.push_back(token);
        ex.day.push_back(day);
        ex.slot.push_back(slot);
        ex.dow.push_back(day % 7);
        ex.weekend.push_back(day % 7 >= 5 ? 1 : 0);
        ex.target.push_back(target);
        ex.attn.push_back(static_cast<std::uint8_t>(attn));
        ex.loss.push_back(static_cast<std::uint8_t>(loss));
    };
    for (int i = 0; i < n_pad; ++i) push(pad_id(cfg.G), 0, 0, -1, 0, 0);
    for (int i = 0; i < n_hist; ++i) {
        const int day = 57 + i / kSlotsPerDay;
        push(static_cast<int>(bounded(rng, cfg.n_classes())), day, i % kSlotsPerDay, -1, 1, 0);
    }
    for (int i = 0; i < n_mask; ++i) {
        push(mask_id(cfg.G), 60, i, static_cast<int>(bounded(rng, cfg.n_classes())), 1, 1);
    }
    check_example(ex, cfg.G);
    return ex;
}

double loss_value(const Model& model, const SequenceExample& ex) {
    NoGradGuard off;
    return model.example_loss(ex, /*train=*/false, /*seed=*/0)->item();
}

}  // namespace

GradCheckReport gradcheck_model(const ModelConfig& cfg, std::uint64_t seed,
                                const GradCheckOptions& opt) {
    cfg.validate();
    Model model = Model::init(cfg, seed);
    const SequenceExample ex = probe_example(cfg, mix_seed(seed, 0xEA));

    for (const auto& p : model.parameters()) p->zero_grad();
    backward(model.example_loss(ex, /*train=*/false, /*seed=*/0));

    // Central differences bottom out near |loss| * machine-eps / (2h) in
    // absolute terms, so tiny true gradients would dominate a bare relative
    // error. The denominator floor keeps the comparison meaningful: a wrong
    // backward still shows up orders of magnitude above it.
    std::mt19937_64 probe_rng(opt.probe_seed);
    GradCheckReport report;
    for (const auto& [name, param] : model.named_params()) {
        std::set<std::int64_t> idx;
        const auto& g = param->grad;
        if (!g.empty()) {
            idx.insert(std::max_element(g.begin(), g.end(),
                                        [](double a, double b) {
                                            return std::abs(a) < std::abs(b);
                                        }) -
                       g.begin());
        }
        for (int r = 0; r < opt.random_probes; ++r)
            idx.insert(static_cast<std::int64_t>(bounded(probe_rng, param->numel())));

        GradCheckReport::TensorStat stat;
        stat.name = name;
        for (const auto i : idx) {
            const double saved = param->data[i];
            const auto slope = [&](double h) {
                param->data[i] = saved + h;
                const double up = loss_value(model, ex);
                param->data[i] = saved - h;
                const double down = loss_value(model, ex);
                param->data[i] = saved;
                return (up - down) / (2.0 * h);
            };
            // Richardson extrapolation of the central difference: the h^2
            // truncation term cancels, which matters at small hidden widths
            // where LayerNorm curvature is extreme. A backward bug survives
            // any step size, so this cannot mask one.
            const double fd = (4.0 * slope(opt.step / 2) - slope(opt.step)) / 3.0;
            const double an = g.empty() ? 0.0 : g[i];
            const double denom = std::max({std::abs(fd), std::abs(an), opt.denom_floor});
            stat.max_rel_err = std::max(stat.max_rel_err, std::abs(fd - an) / denom);
            ++report.probes;
        }
        report.max_rel_err = std::max(report.max_rel_err, stat.max_rel_err);
        report.tensors.push_back(std::move(stat));
    }
    return report;
}

}  // namespace stmoe
