#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace stmoe {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major f64 tensor with reverse-mode automatic differentiation.
/// Non-leaf tensors record their op name, keep their inputs alive through
/// `parents`, and carry a closure that pushes the output gradient back into
/// them. The graph is a dynamic tape: rebuilt on every forward pass.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // lazily sized to data.size(), zero-filled

    std::string op;  // empty for leaves
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;

    static TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
    static TensorPtr from_data(std::vector<int> shape, std::vector<double> values,
                               bool requires_grad = false);
    /// Entries drawn from N(0, stddev^2) with a dedicated engine seeded by `seed`.
    static TensorPtr randn(std::vector<int> shape, double stddev, std::uint64_t seed,
                           bool requires_grad = false);

    std::int64_t numel() const;
    int rows() const;  // 2-D tensors
    int cols() const;
    bool is_scalar() const { return numel() == 1; }
    double item() const;

    void ensure_grad();
    void zero_grad();
    bool all_finite() const;

    /// Copy of data with no grad tracking and no tape links.
    TensorPtr detach() const;
};

/// Thread-local switch: when disabled, ops run forward-only and record nothing.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Nodes reachable from `root` in topological order (parents before users).
std::vector<Tensor*> topo_order(const TensorPtr& root);

/// Reverse-mode sweep from a scalar loss. Seeds d loss/d loss = 1 and visits
/// each recorded node exactly once. By default the grads of every reachable
/// tensor are reset first; pass accumulate=true to add onto existing leaf
/// grads (used for gradient accumulation across a batch).
void backward(const TensorPtr& loss, bool accumulate = false);

/// SplitMix64 step; used to derive independent sub-seeds from one master seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace stmoe
