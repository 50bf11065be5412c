#include "stmoe/moe.hpp"

#include "stmoe/ops.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace stmoe {

namespace {

constexpr double kInitStd = 0.02;

TensorPtr expert_forward(const TensorPtr& x, const ExpertParams& e) {
    auto h = ops::gelu(ops::add_rowvec(ops::matmul(x, e.w1), e.b1));
    return ops::add_rowvec(ops::matmul(h, e.w2), e.b2);
}

TensorPtr raw_gate_logits(const TensorPtr& x, const MoEParams& p) {
    return ops::add_rowvec(ops::matmul_nt(x, p.gate_w), p.gate_b);
}

/// Row-wise top-k expert ids by logit, ties to the lowest index.
std::vector<int> select_top_k(const Tensor& logits, int top_k) {
    const int n = logits.rows(), k_all = logits.cols();
    std::vector<int> kept(static_cast<std::size_t>(n) * top_k);
    std::vector<int> idx(k_all);
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data.data() + static_cast<std::size_t>(i) * k_all;
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [row](int a, int b) { return row[a] > row[b]; });
        std::copy(idx.begin(), idx.begin() + top_k, kept.begin() + static_cast<std::size_t>(i) * top_k);
    }
    return kept;
}

}  // namespace

MoEParams MoEParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::uint64_t k = 0;
    const auto next = [&] { return mix_seed(seed, k++); };
    const int H = cfg.hidden, F = cfg.expert_ffn;

    MoEParams p;
    p.gate_w = Tensor::randn({cfg.experts, H}, kInitStd, next(), true);
    p.gate_b = Tensor::zeros({cfg.experts}, true);
    p.experts.resize(cfg.experts);
    for (auto& e : p.experts) {
        e.w1 = Tensor::randn({H, F}, kInitStd, next(), true);
        e.b1 = Tensor::zeros({F}, true);
        e.w2 = Tensor::randn({F, H}, kInitStd, next(), true);
        e.b2 = Tensor::zeros({H}, true);
    }
    p.head_w = Tensor::randn({H, cfg.n_classes()}, kInitStd, next(), true);
    p.head_b = Tensor::zeros({cfg.n_classes()}, true);
    return p;
}

void MoEParams::register_params(std::map<std::string, TensorPtr>& reg) const {
    reg["moe.gate.w"] = gate_w;
    reg["moe.gate.b"] = gate_b;
    for (std::size_t k = 0; k < experts.size(); ++k) {
        const std::string base = "moe.e" + std::to_string(k) + ".";
        reg[base + "w1"] = experts[k].w1;
        reg[base + "b1"] = experts[k].b1;
        reg[base + "w2"] = experts[k].w2;
        reg[base + "b2"] = experts[k].b2;
    }
    reg["head.w"] = head_w;
    reg["head.b"] = head_b;
}

TensorPtr gate_probs(const TensorPtr& x, const MoEParams& p) {
    return ops::softmax_rows(raw_gate_logits(x, p));
}

TensorPtr moe_forward(const TensorPtr& x, const MoEParams& p, int top_k,
                      std::vector<int>* top1) {
    const int n = x->rows();
    const int k_all = static_cast<int>(p.experts.size());
    if (n < 1) throw std::invalid_argument("moe_forward: no routed positions");
    if (top_k < 1 || top_k > k_all) {
        throw std::invalid_argument("moe_forward: top_k outside [1, experts]");
    }

    auto logits = raw_gate_logits(x, p);
    const std::vector<int> kept = select_top_k(*logits, top_k);
    if (top1) {
        top1->resize(n);
        for (int i = 0; i < n; ++i) (*top1)[i] = kept[static_cast<std::size_t>(i) * top_k];
    }

    // Renormalizing the kept probabilities is a softmax over the kept logits.
    auto gates = ops::softmax_rows(ops::gather_cols(logits, kept, top_k));

    TensorPtr acc;  // merged expert-index-ascending for a fixed accumulation order
    for (int e = 0; e < k_all; ++e) {
        std::vector<int> rows, slots;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < top_k; ++j) {
                if (kept[static_cast<std::size_t>(i) * top_k + j] == e) {
                    rows.push_back(i);
                    slots.push_back(j);
                }
            }
        }
        if (rows.empty()) continue;
        auto xe = ops::gather_rows(x, rows);
        auto ge = ops::gather_elems(gates, rows, slots);
        auto ye = ops::scatter_rows(ops::scale_rows(expert_forward(xe, p.experts[e]), ge),
                                    rows, n);
        acc = acc ? ops::add(acc, ye) : ye;
    }
    return acc;
}

TensorPtr predict_logits(const TensorPtr& hidden, const MoEParams& p, const ModelConfig& cfg,
                         std::vector<int>* top1) {
    auto y = moe_forward(hidden, p, cfg.top_k, top1);
    auto z = cfg.moe_residual ? ops::add(hidden, y) : y;
    return ops::add_rowvec(ops::matmul(z, p.head_w), p.head_b);
}

std::vector<int> expert_load(const TensorPtr& x, const MoEParams& p) {
    if (x->rows() < 1) throw std::invalid_argument("expert_load: no routed positions");
    NoGradGuard ng;
    auto logits = raw_gate_logits(x, p);
    const std::vector<int> kept = select_top_k(*logits, 1);
    std::vector<int> counts(p.experts.size(), 0);
    for (int id : kept) ++counts[id];
    return counts;
}

TensorPtr importance_loss(const TensorPtr& x, const MoEParams& p) {
    const int k_all = static_cast<int>(p.experts.size());
    auto imp = ops::mean_over_rows(gate_probs(x, p));
    auto centered = ops::add_scalar(imp, -1.0 / k_all);
    return ops::scale(ops::sum_all(ops::mul(centered, centered)), k_all);
}

}  // namespace stmoe
