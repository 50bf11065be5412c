#include "doctest.h"
#include "fd_check.hpp"
#include "stmoe/ops.hpp"
#include "stmoe/tensor.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

using namespace stmoe;
namespace op = stmoe::ops;
using testutil::fd_grad;
using testutil::max_rel_err;

namespace {

double eval_scalar(const std::function<TensorPtr()>& build) {
    NoGradGuard ng;
    return build()->item();
}

/// Weighted-sum head so downstream gradients are non-degenerate even for ops
/// whose plain sum is constant (softmax rows always sum to 1).
TensorPtr weighted_sum(const TensorPtr& x, std::uint64_t seed) {
    auto w = Tensor::randn(x->shape, 1.0, seed);
    return op::sum_all(op::mul(x, w));
}

}  // namespace

TEST_CASE("matmul identity and orthogonal pick") {
    auto i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    auto out = op::matmul(i2, a);
    CHECK(out->data == std::vector<double>{1, 2, 3, 4});

    auto row = Tensor::from_data({1, 2}, {1, 0});
    auto col = Tensor::from_data({2, 1}, {0, 1});
    CHECK(op::matmul(row, col)->item() == 0.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(op::matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient of sum equals column sums of b, and matches FD") {
    auto a = Tensor::randn({3, 4}, 1.0, 11, true);
    auto b = Tensor::randn({4, 2}, 1.0, 12, true);
    auto loss = op::sum_all(op::matmul(a, b));
    backward(loss);

    // d sum(AB) / dA[i][j] = sum_n B[j][n], independent of i.
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) {
            double colsum = b->data[j * 2] + b->data[j * 2 + 1];
            CHECK(a->grad[i * 4 + j] == doctest::Approx(colsum).epsilon(1e-12));
        }
    }

    auto fd = fd_grad(a, [&] {
        return eval_scalar([&] { return op::sum_all(op::matmul(a, b)); });
    });
    CHECK(max_rel_err(fd, a->grad) < 1e-6);

    auto fdb = fd_grad(b, [&] {
        return eval_scalar([&] { return op::sum_all(op::matmul(a, b)); });
    });
    CHECK(max_rel_err(fdb, b->grad) < 1e-6);
}

TEST_CASE("softmax symmetry, stability, and frozen values") {
    auto sym = op::softmax_rows(Tensor::from_data({1, 2}, {0, 0}));
    CHECK(sym->data[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sym->data[1] == doctest::Approx(0.5).epsilon(1e-15));

    auto big = op::softmax_rows(Tensor::from_data({1, 2}, {1000, 0}));
    CHECK(big->all_finite());
    CHECK(big->data[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(big->data[1] < 1e-300);

    // exp(k)/sum(exp) for k=1,2,3 evaluated at high precision.
    auto s = op::softmax_rows(Tensor::from_data({1, 3}, {1, 2, 3}));
    CHECK(s->data[0] == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(s->data[1] == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(s->data[2] == doctest::Approx(0.66524096).epsilon(1e-7));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    auto x = Tensor::randn({5, 7}, 3.0, 21);
    auto y = op::softmax_rows(x);
    for (int i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 7; ++j) sum += y->data[i * 7 + j];
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }

    auto shifted = op::softmax_rows(op::add_scalar(x, 13.25));
    for (std::size_t i = 0; i < y->data.size(); ++i) {
        CHECK(std::abs(y->data[i] - shifted->data[i]) < 1e-12);
    }
}

TEST_CASE("masked softmax zeroes masked columns and whole rows") {
    auto x = Tensor::from_data({2, 4}, {1, 2, 3, 4, -1, 0, 1, 2});
    auto y = op::masked_softmax_rows(x, {1, 0, 1, 0});
    for (int i = 0; i < 2; ++i) {
        CHECK(y->data[i * 4 + 1] == 0.0);
        CHECK(y->data[i * 4 + 3] == 0.0);
        CHECK(y->data[i * 4] + y->data[i * 4 + 2] == doctest::Approx(1.0).epsilon(1e-12));
    }

    auto z = op::masked_softmax_rows(x, {0, 0, 0, 0});
    for (double v : z->data) CHECK(v == 0.0);
}

TEST_CASE("cross entropy uniform, near-perfect, and LSE oracle") {
    auto zeros = Tensor::zeros({3, 4});
    auto l1 = op::cross_entropy(zeros, {0, 1, 2}, {0, 0, 0});
    CHECK(l1->item() == doctest::Approx(std::log(4.0)).epsilon(1e-9));

    auto hot = Tensor::zeros({2, 5});
    hot->data[0 * 5 + 3] = 100.0;
    hot->data[1 * 5 + 1] = 100.0;
    auto l2 = op::cross_entropy(hot, {3, 1}, {0, 0});
    CHECK(l2->item() < 1e-10);

    // Independent oracle: naive long-double log-sum-exp, no max subtraction.
    auto logits = Tensor::randn({2, 3}, 1.0, 31, true);
    std::vector<int> targets{2, 0};
    auto loss = op::cross_entropy(logits, targets, {0, 0});
    backward(loss);

    long double expect = 0.0L;
    std::vector<double> expect_grad(6, 0.0);
    for (int i = 0; i < 2; ++i) {
        long double z = 0.0L;
        for (int j = 0; j < 3; ++j) z += expl(static_cast<long double>(logits->data[i * 3 + j]));
        expect += logl(z) - static_cast<long double>(logits->data[i * 3 + targets[i]]);
        for (int j = 0; j < 3; ++j) {
            long double p = expl(static_cast<long double>(logits->data[i * 3 + j])) / z;
            expect_grad[i * 3 + j] = static_cast<double>(p) / 2.0;
        }
        expect_grad[i * 3 + targets[i]] -= 0.5;
    }
    CHECK(loss->item() == doctest::Approx(static_cast<double>(expect / 2.0L)).epsilon(1e-10));
    for (int i = 0; i < 6; ++i) {
        CHECK(logits->grad[i] == doctest::Approx(expect_grad[i]).epsilon(1e-10));
    }
}

TEST_CASE("cross entropy honours the ignore mask and rejects empty loss") {
    auto logits = Tensor::randn({3, 4}, 1.0, 41);
    auto some = op::cross_entropy(logits, {1, 0, 2}, {0, 1, 0});

    auto kept = Tensor::from_data(
        {2, 4},
        {logits->data[0], logits->data[1], logits->data[2], logits->data[3],
         logits->data[8], logits->data[9], logits->data[10], logits->data[11]});
    auto direct = op::cross_entropy(kept, {1, 2}, {0, 0});
    CHECK(some->item() == doctest::Approx(direct->item()).epsilon(1e-14));

    CHECK_THROWS_WITH_AS(op::cross_entropy(logits, {0, 0, 0}, {1, 1, 1}),
                         "cross_entropy: empty loss", std::invalid_argument);
}

TEST_CASE("backward of sum of squares and detached graphs") {
    auto x = Tensor::from_data({3}, {1, 2, 3}, true);
    auto loss = op::sum_all(op::mul(x, x));
    backward(loss);
    CHECK(x->grad == std::vector<double>{2, 4, 6});

    auto y = Tensor::from_data({3}, {4, 5, 6}, true);
    backward(op::sum_all(op::mul(y, y)));
    // x took no part in this graph: backward resets only reachable tensors,
    // so x keeps its old grad, and a detached copy never tracks at all.
    auto d = x->detach();
    CHECK_FALSE(d->requires_grad);
    auto loss2 = op::sum_all(op::mul(d, d));
    CHECK_FALSE(loss2->requires_grad);
    x->zero_grad();
    CHECK(x->grad == std::vector<double>{0, 0, 0});
}

TEST_CASE("backward rejects non-scalar roots") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    auto y = op::mul(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("diamond graph accumulates both paths once each") {
    auto x = Tensor::from_data({2}, {3, -2}, true);
    auto sq = op::mul(x, x);           // both parents alias x
    auto sum = op::add(sq, sq);        // diamond join
    backward(op::sum_all(sum));
    CHECK(x->grad[0] == doctest::Approx(4.0 * 3.0).epsilon(1e-14));
    CHECK(x->grad[1] == doctest::Approx(4.0 * -2.0).epsilon(1e-14));
}

TEST_CASE("backward accumulate flag adds onto existing grads") {
    auto x = Tensor::from_data({2}, {1, 2}, true);
    backward(op::sum_all(op::mul(x, x)));
    CHECK(x->grad == std::vector<double>{2, 4});
    backward(op::sum_all(op::mul(x, x)), /*accumulate=*/true);
    CHECK(x->grad == std::vector<double>{4, 8});
    backward(op::sum_all(op::mul(x, x)));
    CHECK(x->grad == std::vector<double>{2, 4});
}

TEST_CASE("topological order places parents before users") {
    auto x = Tensor::randn({2, 2}, 1.0, 51, true);
    auto y = op::gelu(op::matmul(x, x));
    auto loss = op::sum_all(op::add(y, y));
    auto order = topo_order(loss);
    std::unordered_map<const Tensor*, std::size_t> pos;
    for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
    for (auto* node : order) {
        for (const auto& p : node->parents) {
            REQUIRE(pos.count(p.get()) == 1);
            CHECK(pos[p.get()] < pos[node]);
        }
    }
}

TEST_CASE("layer norm frozen cases") {
    auto gain = Tensor::full({4}, 1.0);
    auto bias = Tensor::zeros({4});

    auto flat = op::layer_norm(Tensor::full({1, 4}, 7.5), gain, bias);
    for (double v : flat->data) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

    auto g2 = Tensor::full({2}, 1.0);
    auto b2 = Tensor::zeros({2});
    auto two = op::layer_norm(Tensor::from_data({1, 2}, {1, 3}), g2, b2);
    CHECK(two->data[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(two->data[1] == doctest::Approx(1.0).epsilon(1e-6));

    auto zero_gain = Tensor::zeros({4});
    auto b4 = Tensor::from_data({4}, {0.5, -1, 2, 0});
    auto out = op::layer_norm(Tensor::randn({3, 4}, 2.0, 52), zero_gain, b4);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) CHECK(out->data[i * 4 + j] == b4->data[j]);
    }
}

TEST_CASE("gelu fixed points") {
    auto x = Tensor::from_data({3}, {0.0, 1.0, -1.0});
    auto y = op::gelu(x);
    CHECK(y->data[0] == 0.0);
    // gelu(1) = Phi(1), the standard normal CDF at 1.
    CHECK(y->data[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(y->data[2] == doctest::Approx(-0.15865525393145707).epsilon(1e-12));
}

TEST_CASE("embedding lookup scatters gradients into the table") {
    auto table = Tensor::randn({5, 3}, 1.0, 61, true);
    auto rows = op::gather_rows(table, {4, 1, 4});
    backward(weighted_sum(rows, 62));
    // Row 4 was gathered twice; its grad is the sum of both output-row grads.
    auto w = Tensor::randn({3, 3}, 1.0, 62);
    for (int j = 0; j < 3; ++j) {
        CHECK(table->grad[4 * 3 + j] ==
              doctest::Approx(w->data[0 * 3 + j] + w->data[2 * 3 + j]).epsilon(1e-14));
        CHECK(table->grad[1 * 3 + j] == doctest::Approx(w->data[1 * 3 + j]).epsilon(1e-14));
    }
    for (int r : {0, 2, 3}) {
        for (int j = 0; j < 3; ++j) CHECK(table->grad[r * 3 + j] == 0.0);
    }
    CHECK_THROWS_AS(op::gather_rows(table, {5}), std::out_of_range);
}

TEST_CASE("dropout keeps expectation and is seed deterministic") {
    auto x = Tensor::full({40, 25}, 1.0, true);
    auto a = op::dropout(x, 0.4, 77);
    auto b = op::dropout(x, 0.4, 77);
    CHECK(a->data == b->data);
    auto c = op::dropout(x, 0.4, 78);
    CHECK(a->data != c->data);

    double mean = 0.0;
    int kept = 0;
    for (double v : a->data) {
        mean += v;
        if (v != 0.0) {
            ++kept;
            CHECK(v == doctest::Approx(1.0 / 0.6).epsilon(1e-12));
        }
    }
    mean /= static_cast<double>(a->numel());
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
    CHECK(kept > 500);

    CHECK(op::dropout(x, 0.0, 1) == x);  // p=0 is the identity node
}

TEST_CASE("finite-difference agreement across every differentiable op") {
    constexpr double kTol = 1e-4;

    auto check_op = [&](const char* name, const TensorPtr& leaf,
                        const std::function<TensorPtr()>& build) {
        CAPTURE(name);
        auto loss = build();
        backward(loss);
        std::vector<double> an = leaf->grad;
        auto fd = fd_grad(leaf, [&] { return eval_scalar(build); });
        CHECK(max_rel_err(fd, an) < kTol);
    };

    {
        auto a = Tensor::randn({2, 3}, 1.0, 101, true);
        auto b = Tensor::randn({2, 3}, 1.0, 102, true);
        check_op("add", a, [&] { return weighted_sum(op::add(a, b), 1); });
        check_op("sub", b, [&] { return weighted_sum(op::sub(a, b), 2); });
        check_op("mul", a, [&] { return weighted_sum(op::mul(a, b), 3); });
        check_op("scale", a, [&] { return weighted_sum(op::scale(a, -1.7), 4); });
        check_op("add_scalar", a, [&] { return weighted_sum(op::add_scalar(a, 2.3), 5); });
        check_op("gelu", a, [&] { return weighted_sum(op::gelu(a), 6); });
        check_op("sum_all", a, [&] { return op::sum_all(a); });
        check_op("mean_all", a, [&] { return op::mean_all(a); });
        check_op("mean_over_rows", a, [&] {
            return weighted_sum(op::mean_over_rows(a), 7);
        });
    }
    {
        auto a = Tensor::randn({3, 4}, 1.0, 103, true);
        auto b = Tensor::randn({4, 2}, 1.0, 104, true);
        check_op("matmul.a", a, [&] { return weighted_sum(op::matmul(a, b), 8); });
        check_op("matmul.b", b, [&] { return weighted_sum(op::matmul(a, b), 9); });
        auto bt = Tensor::randn({2, 4}, 1.0, 105, true);
        check_op("matmul_nt.a", a, [&] { return weighted_sum(op::matmul_nt(a, bt), 10); });
        check_op("matmul_nt.b", bt, [&] { return weighted_sum(op::matmul_nt(a, bt), 11); });
    }
    {
        auto x = Tensor::randn({3, 5}, 1.0, 106, true);
        auto bias = Tensor::randn({5}, 1.0, 107, true);
        auto s = Tensor::randn({3}, 1.0, 108, true);
        check_op("add_rowvec.x", x, [&] { return weighted_sum(op::add_rowvec(x, bias), 12); });
        check_op("add_rowvec.b", bias, [&] { return weighted_sum(op::add_rowvec(x, bias), 13); });
        check_op("scale_rows.x", x, [&] { return weighted_sum(op::scale_rows(x, s), 14); });
        check_op("scale_rows.s", s, [&] { return weighted_sum(op::scale_rows(x, s), 15); });
        check_op("softmax", x, [&] { return weighted_sum(op::softmax_rows(x), 16); });
        check_op("masked_softmax", x, [&] {
            return weighted_sum(op::masked_softmax_rows(x, {1, 0, 1, 1, 0}), 17);
        });
        check_op("dropout", x, [&] { return weighted_sum(op::dropout(x, 0.3, 55), 18); });
    }
    {
        auto x = Tensor::randn({4, 6}, 1.0, 109, true);
        auto gain = Tensor::randn({6}, 0.5, 110, true);
        auto bias = Tensor::randn({6}, 0.5, 111, true);
        check_op("layer_norm.x", x, [&] {
            return weighted_sum(op::layer_norm(x, gain, bias), 19);
        });
        check_op("layer_norm.gain", gain, [&] {
            return weighted_sum(op::layer_norm(x, gain, bias), 20);
        });
        check_op("layer_norm.bias", bias, [&] {
            return weighted_sum(op::layer_norm(x, gain, bias), 21);
        });
    }
    {
        auto table = Tensor::randn({6, 3}, 1.0, 112, true);
        check_op("gather_rows", table, [&] {
            return weighted_sum(op::gather_rows(table, {0, 5, 2, 5}), 22);
        });
        auto x = Tensor::randn({4, 3}, 1.0, 113, true);
        check_op("scatter_rows", x, [&] {
            return weighted_sum(op::scatter_rows(x, {1, 3, 1, 0}, 5), 23);
        });
        check_op("gather_cols", x, [&] {
            return weighted_sum(op::gather_cols(x, {0, 2, 1, 1, 2, 0, 0, 1}, 2), 24);
        });
        check_op("gather_elems", x, [&] {
            return weighted_sum(op::gather_elems(x, {0, 1, 3}, {2, 0, 1}), 25);
        });
    }
    {
        auto a = Tensor::randn({2, 3}, 1.0, 114, true);
        auto b = Tensor::randn({2, 2}, 1.0, 115, true);
        auto c = Tensor::randn({3, 3}, 1.0, 116, true);
        check_op("concat_cols", a, [&] {
            return weighted_sum(op::concat_cols({a, b}), 26);
        });
        check_op("concat_rows", c, [&] {
            return weighted_sum(op::concat_rows({a, c}), 27);
        });
    }
    {
        auto logits = Tensor::randn({4, 5}, 1.5, 117, true);
        check_op("cross_entropy", logits, [&] {
            return op::cross_entropy(logits, {2, 0, 4, 1}, {0, 1, 0, 0});
        });
    }
}

TEST_CASE("single-process bit determinism for seeded pipelines") {
    auto run = [] {
        auto x = Tensor::randn({6, 6}, 1.0, 990, true);
        auto w = Tensor::randn({6, 6}, 0.3, 991, true);
        auto h = op::dropout(op::gelu(op::matmul(x, w)), 0.25, 992);
        auto loss = op::mean_all(op::mul(h, h));
        backward(loss);
        std::vector<double> out = loss->data;
        out.insert(out.end(), x->grad.begin(), x->grad.end());
        out.insert(out.end(), w->grad.begin(), w->grad.end());
        return out;
    };
    auto r1 = run();
    auto r2 = run();
    REQUIRE(r1.size() == r2.size());
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("no-grad guard suppresses taping") {
    auto x = Tensor::randn({2, 2}, 1.0, 71, true);
    TensorPtr y;
    {
        NoGradGuard ng;
        y = op::matmul(x, x);
    }
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
    auto z = op::matmul(x, x);
    CHECK(z->requires_grad);
    CHECK(z->parents.size() == 2);
}

TEST_CASE("forward results stay finite on finite inputs") {
    auto x = Tensor::randn({8, 8}, 50.0, 81, true);
    CHECK(op::softmax_rows(x)->all_finite());
    CHECK(op::gelu(x)->all_finite());
    auto gain = Tensor::full({8}, 1.0);
    auto bias = Tensor::zeros({8});
    CHECK(op::layer_norm(x, gain, bias)->all_finite());
}
