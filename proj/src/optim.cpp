#include "stmoe/optim.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace stmoe {

AdamW::AdamW(std::vector<ParamGroup> groups, double weight_decay, double beta1, double beta2,
             double eps)
    : groups_(std::move(groups)),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {
    std::set<std::string> seen;
    m_.resize(groups_.size());
    v_.resize(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        auto& grp = groups_[g];
        if (grp.params.size() != grp.param_names.size()) {
            throw std::invalid_argument("AdamW: group '" + grp.name +
                                        "' names and params disagree");
        }
        for (const auto& name : grp.param_names) {
            if (!seen.insert(name).second) {
                throw std::invalid_argument("AdamW: parameter '" + name +
                                            "' appears in more than one group");
            }
        }
        m_[g].resize(grp.params.size());
        v_[g].resize(grp.params.size());
        for (std::size_t i = 0; i < grp.params.size(); ++i) {
            m_[g][i].assign(grp.params[i]->data.size(), 0.0);
            v_[g][i].assign(grp.params[i]->data.size(), 0.0);
        }
    }
}

void AdamW::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        const double lr = groups_[g].lr;
        for (std::size_t i = 0; i < groups_[g].params.size(); ++i) {
            Tensor& p = *groups_[g].params[i];
            p.ensure_grad();
            auto& m = m_[g][i];
            auto& v = v_[g][i];
            for (std::size_t j = 0; j < p.data.size(); ++j) {
                const double grad = p.grad[j];
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad;
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad * grad;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p.data[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.data[j]);
            }
        }
    }
}

void AdamW::zero_grad() {
    for (auto& grp : groups_) {
        for (auto& p : grp.params) p->zero_grad();
    }
}

void AdamW::set_lr(std::size_t group, double lr) {
    if (group >= groups_.size()) throw std::out_of_range("set_lr: no such group");
    groups_[group].lr = lr;
}

std::map<std::string, std::vector<double>> AdamW::moments() const {
    std::map<std::string, std::vector<double>> out;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (std::size_t i = 0; i < groups_[g].params.size(); ++i) {
            out["m." + groups_[g].param_names[i]] = m_[g][i];
            out["v." + groups_[g].param_names[i]] = v_[g][i];
        }
    }
    return out;
}

void AdamW::restore(const std::map<std::string, std::vector<double>>& moments,
                    std::int64_t step_count) {
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        for (std::size_t i = 0; i < groups_[g].params.size(); ++i) {
            const auto& name = groups_[g].param_names[i];
            const auto im = moments.find("m." + name);
            const auto iv = moments.find("v." + name);
            if (im == moments.end() || iv == moments.end()) {
                throw std::runtime_error("AdamW::restore: missing moments for '" + name + "'");
            }
            if (im->second.size() != m_[g][i].size() || iv->second.size() != v_[g][i].size()) {
                throw std::runtime_error("AdamW::restore: moment size mismatch for '" + name +
                                         "'");
            }
            m_[g][i] = im->second;
            v_[g][i] = iv->second;
        }
    }
    step_ = step_count;
}

double clip_global_norm(const std::vector<TensorPtr>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (p->grad.empty()) continue;
        for (double g : p->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (const auto& p : params) {
            for (double& g : p->grad) g *= scale;
        }
    }
    return norm;
}

}  // namespace stmoe
