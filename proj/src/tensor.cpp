#include "stmoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace stmoe {

namespace {
thread_local bool g_grad_enabled = true;

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("tensor: negative dimension");
        n *= d;
    }
    return n;
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

TensorPtr Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data.assign(static_cast<std::size_t>(shape_numel(t->shape)), 0.0);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    return t;
}

TensorPtr Tensor::from_data(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(t->shape)) {
        throw std::invalid_argument("tensor: data length does not match shape");
    }
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr Tensor::randn(std::vector<int> shape, double stddev, std::uint64_t seed,
                        bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : t->data) x = dist(rng);
    return t;
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

int Tensor::rows() const {
    if (shape.size() != 2) throw std::logic_error("tensor: rows() on non-2D tensor");
    return shape[0];
}

int Tensor::cols() const {
    if (shape.size() != 2) throw std::logic_error("tensor: cols() on non-2D tensor");
    return shape[1];
}

double Tensor::item() const {
    if (!is_scalar()) throw std::logic_error("tensor: item() on non-scalar");
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    } else {
        std::fill(grad.begin(), grad.end(), 0.0);
    }
}

bool Tensor::all_finite() const {
    for (double x : data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

TensorPtr Tensor::detach() const { return from_data(shape, data, false); }

std::vector<Tensor*> topo_order(const TensorPtr& root) {
    std::vector<Tensor*> order;
    std::unordered_set<Tensor*> seen;
    // Iterative post-order DFS; parents land before users.
    struct Frame {
        Tensor* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    if (seen.insert(root.get()).second) stack.push_back({root.get(), 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Tensor* p = f.node->parents[f.next_parent++].get();
            if (seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    return order;
}

void backward(const TensorPtr& loss, bool accumulate) {
    if (!loss) throw std::invalid_argument("backward: null tensor");
    if (!loss->is_scalar()) throw std::invalid_argument("backward: loss must be scalar");
    auto order = topo_order(loss);
    for (Tensor* t : order) {
        if (!t->requires_grad) continue;
        if (accumulate) {
            t->ensure_grad();
        } else {
            t->zero_grad();
        }
    }
    if (!loss->requires_grad) return;  // detached loss: nothing to do
    loss->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor* t = *it;
        if (t->backward_fn && t->requires_grad) t->backward_fn(*t);
    }
}

}  // namespace stmoe
