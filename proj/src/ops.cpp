#include "stmoe/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace stmoe {
namespace ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat cmap(const Tensor& t) { return CMapMat(t.data.data(), t.rows(), t.cols()); }
CMapMat cmap(const Tensor& t, int r, int c) { return CMapMat(t.data.data(), r, c); }
MapMat gmap(Tensor& t) {
    t.ensure_grad();
    return MapMat(t.grad.data(), t.rows(), t.cols());
}

void require_2d(const TensorPtr& t, const char* op) {
    if (!t || t->shape.size() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected a 2-D tensor");
    }
}

void require_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
    if (a->shape != b->shape) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

bool track(const std::vector<TensorPtr>& parents) {
    if (!grad_enabled()) return false;
    for (const auto& p : parents) {
        if (p->requires_grad) return true;
    }
    return false;
}

/// Attach tape bookkeeping to `out` if any parent is tracked.
template <typename Fn>
void record(const TensorPtr& out, const char* op, std::vector<TensorPtr> parents, Fn&& fn) {
    if (!track(parents)) return;
    out->requires_grad = true;
    out->op = op;
    out->parents = std::move(parents);
    out->backward_fn = std::forward<Fn>(fn);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "add");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    record(out, "add", {a, b}, [](Tensor& o) {
        for (int s = 0; s < 2; ++s) {
            Tensor& p = *o.parents[s];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
        }
    });
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "sub");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    record(out, "sub", {a, b}, [](Tensor& o) {
        Tensor& pa = *o.parents[0];
        Tensor& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] -= o.grad[i];
        }
    });
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(a, b, "mul");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    record(out, "mul", {a, b}, [](Tensor& o) {
        Tensor& pa = *o.parents[0];
        Tensor& pb = *o.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa.grad[i] += o.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb.grad[i] += o.grad[i] * pa.data[i];
        }
    });
    return out;
}

TensorPtr scale(const TensorPtr& a, double s) {
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * s;
    record(out, "scale", {a}, [s](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i] * s;
    });
    return out;
}

TensorPtr add_scalar(const TensorPtr& a, double s) {
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + s;
    record(out, "add_scalar", {a}, [](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) p.grad[i] += o.grad[i];
    });
    return out;
}

TensorPtr gelu(const TensorPtr& x) {
    auto out = Tensor::zeros(x->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        const double v = x->data[i];
        out->data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    record(out, "gelu", {x}, [](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const double v = p.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            p.grad[i] += o.grad[i] * (cdf + v * pdf);
        }
    });
    return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a->cols() != b->rows()) {
        throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                    std::to_string(a->cols()) + " vs " +
                                    std::to_string(b->rows()) + ")");
    }
    auto out = Tensor::zeros({a->rows(), b->cols()});
    MapMat(out->data.data(), out->rows(), out->cols()).noalias() = cmap(*a) * cmap(*b);
    record(out, "matmul", {a, b}, [](Tensor& o) {
        Tensor& pa = *o.parents[0];
        Tensor& pb = *o.parents[1];
        CMapMat g(o.grad.data(), o.rows(), o.cols());
        if (pa.requires_grad) gmap(pa).noalias() += g * cmap(pb).transpose();
        if (pb.requires_grad) gmap(pb).noalias() += cmap(pa).transpose() * g;
    });
    return out;
}

TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
    require_2d(a, "matmul_nt");
    require_2d(b, "matmul_nt");
    if (a->cols() != b->cols()) {
        throw std::invalid_argument("matmul_nt: inner dimensions disagree");
    }
    auto out = Tensor::zeros({a->rows(), b->rows()});
    MapMat(out->data.data(), out->rows(), out->cols()).noalias() =
        cmap(*a) * cmap(*b).transpose();
    record(out, "matmul_nt", {a, b}, [](Tensor& o) {
        Tensor& pa = *o.parents[0];
        Tensor& pb = *o.parents[1];
        CMapMat g(o.grad.data(), o.rows(), o.cols());
        if (pa.requires_grad) gmap(pa).noalias() += g * cmap(pb);
        if (pb.requires_grad) gmap(pb).noalias() += g.transpose() * cmap(pa);
    });
    return out;
}

TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& b) {
    require_2d(x, "add_rowvec");
    if (b->shape.size() != 1 || b->shape[0] != x->cols()) {
        throw std::invalid_argument("add_rowvec: bias length must equal column count");
    }
    const int n = x->rows(), h = x->cols();
    auto out = Tensor::zeros(x->shape);
    for (int i = 0; i < n; ++i) {
        const double* xi = x->data.data() + static_cast<std::size_t>(i) * h;
        double* oi = out->data.data() + static_cast<std::size_t>(i) * h;
        for (int j = 0; j < h; ++j) oi[j] = xi[j] + b->data[j];
    }
    record(out, "add_rowvec", {x, b}, [n, h](Tensor& o) {
        Tensor& px = *o.parents[0];
        Tensor& pb = *o.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) px.grad[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* gi = o.grad.data() + static_cast<std::size_t>(i) * h;
                for (int j = 0; j < h; ++j) pb.grad[j] += gi[j];
            }
        }
    });
    return out;
}

TensorPtr scale_rows(const TensorPtr& x, const TensorPtr& s) {
    require_2d(x, "scale_rows");
    if (s->shape.size() != 1 || s->shape[0] != x->rows()) {
        throw std::invalid_argument("scale_rows: scale length must equal row count");
    }
    const int n = x->rows(), h = x->cols();
    auto out = Tensor::zeros(x->shape);
    for (int i = 0; i < n; ++i) {
        const double si = s->data[i];
        const double* xi = x->data.data() + static_cast<std::size_t>(i) * h;
        double* oi = out->data.data() + static_cast<std::size_t>(i) * h;
        for (int j = 0; j < h; ++j) oi[j] = xi[j] * si;
    }
    record(out, "scale_rows", {x, s}, [n, h](Tensor& o) {
        Tensor& px = *o.parents[0];
        Tensor& ps = *o.parents[1];
        if (px.requires_grad) {
            px.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double si = ps.data[i];
                const double* gi = o.grad.data() + static_cast<std::size_t>(i) * h;
                double* pgi = px.grad.data() + static_cast<std::size_t>(i) * h;
                for (int j = 0; j < h; ++j) pgi[j] += gi[j] * si;
            }
        }
        if (ps.requires_grad) {
            ps.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* gi = o.grad.data() + static_cast<std::size_t>(i) * h;
                const double* xi = px.data.data() + static_cast<std::size_t>(i) * h;
                double acc = 0.0;
                for (int j = 0; j < h; ++j) acc += gi[j] * xi[j];
                ps.grad[i] += acc;
            }
        }
    });
    return out;
}

TensorPtr softmax_rows(const TensorPtr& x) {
    require_2d(x, "softmax_rows");
    const int n = x->rows(), k = x->cols();
    auto out = Tensor::zeros(x->shape);
    for (int i = 0; i < n; ++i) {
        const double* xi = x->data.data() + static_cast<std::size_t>(i) * k;
        double* oi = out->data.data() + static_cast<std::size_t>(i) * k;
        double m = xi[0];
        for (int j = 1; j < k; ++j) m = std::max(m, xi[j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) {
            oi[j] = std::exp(xi[j] - m);
            z += oi[j];
        }
        for (int j = 0; j < k; ++j) oi[j] /= z;
    }
    record(out, "softmax_rows", {x}, [n, k](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* yi = o.data.data() + static_cast<std::size_t>(i) * k;
            const double* gi = o.grad.data() + static_cast<std::size_t>(i) * k;
            double dot = 0.0;
            for (int j = 0; j < k; ++j) dot += gi[j] * yi[j];
            double* pgi = p.grad.data() + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) pgi[j] += yi[j] * (gi[j] - dot);
        }
    });
    return out;
}

TensorPtr masked_softmax_rows(const TensorPtr& x, const std::vector<std::uint8_t>& key_mask) {
    require_2d(x, "masked_softmax_rows");
    const int n = x->rows(), k = x->cols();
    if (static_cast<int>(key_mask.size()) != k) {
        throw std::invalid_argument("masked_softmax_rows: mask length must equal column count");
    }
    bool any = false;
    for (auto m : key_mask) any = any || (m != 0);
    auto out = Tensor::zeros(x->shape);
    if (any) {
        for (int i = 0; i < n; ++i) {
            const double* xi = x->data.data() + static_cast<std::size_t>(i) * k;
            double* oi = out->data.data() + static_cast<std::size_t>(i) * k;
            double m = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) {
                if (key_mask[j]) m = std::max(m, xi[j]);
            }
            double z = 0.0;
            for (int j = 0; j < k; ++j) {
                if (key_mask[j]) {
                    oi[j] = std::exp(xi[j] - m);
                    z += oi[j];
                }
            }
            for (int j = 0; j < k; ++j) {
                if (key_mask[j]) oi[j] /= z;
            }
        }
    }
    record(out, "masked_softmax_rows", {x}, [n, k, key_mask](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* yi = o.data.data() + static_cast<std::size_t>(i) * k;
            const double* gi = o.grad.data() + static_cast<std::size_t>(i) * k;
            double dot = 0.0;
            for (int j = 0; j < k; ++j) {
                if (key_mask[j]) dot += gi[j] * yi[j];
            }
            double* pgi = p.grad.data() + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) {
                if (key_mask[j]) pgi[j] += yi[j] * (gi[j] - dot);
            }
        }
    });
    return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps) {
    require_2d(x, "layer_norm");
    const int n = x->rows(), h = x->cols();
    if (h < 1) throw std::invalid_argument("layer_norm: feature dimension must be >= 1");
    if (gain->shape.size() != 1 || gain->shape[0] != h || bias->shape != gain->shape) {
        throw std::invalid_argument("layer_norm: gain/bias must be length-H vectors");
    }
    auto out = Tensor::zeros(x->shape);
    // Saved for backward: per-row inverse stddev and the standardized values.
    auto inv_std = std::make_shared<std::vector<double>>(n);
    auto xhat = std::make_shared<std::vector<double>>(x->data.size());
    for (int i = 0; i < n; ++i) {
        const double* xi = x->data.data() + static_cast<std::size_t>(i) * h;
        double mean = 0.0;
        for (int j = 0; j < h; ++j) mean += xi[j];
        mean /= h;
        double var = 0.0;
        for (int j = 0; j < h; ++j) {
            const double d = xi[j] - mean;
            var += d * d;
        }
        var /= h;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        double* xh = xhat->data() + static_cast<std::size_t>(i) * h;
        double* oi = out->data.data() + static_cast<std::size_t>(i) * h;
        for (int j = 0; j < h; ++j) {
            xh[j] = (xi[j] - mean) * is;
            oi[j] = gain->data[j] * xh[j] + bias->data[j];
        }
    }
    record(out, "layer_norm", {x, gain, bias}, [n, h, inv_std, xhat](Tensor& o) {
        Tensor& px = *o.parents[0];
        Tensor& pg = *o.parents[1];
        Tensor& pb = *o.parents[2];
        for (int i = 0; i < n; ++i) {
            const double* gi = o.grad.data() + static_cast<std::size_t>(i) * h;
            const double* xh = xhat->data() + static_cast<std::size_t>(i) * h;
            if (pg.requires_grad) {
                pg.ensure_grad();
                for (int j = 0; j < h; ++j) pg.grad[j] += gi[j] * xh[j];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int j = 0; j < h; ++j) pb.grad[j] += gi[j];
            }
            if (px.requires_grad) {
                px.ensure_grad();
                // d x = (dy*g - mean(dy*g) - xhat * mean(dy*g*xhat)) * inv_std
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < h; ++j) {
                    const double t = gi[j] * pg.data[j];
                    m1 += t;
                    m2 += t * xh[j];
                }
                m1 /= h;
                m2 /= h;
                double* pxg = px.grad.data() + static_cast<std::size_t>(i) * h;
                const double is = (*inv_std)[i];
                for (int j = 0; j < h; ++j) {
                    pxg[j] += (gi[j] * pg.data[j] - m1 - xh[j] * m2) * is;
                }
            }
        }
    });
    return out;
}

TensorPtr dropout(const TensorPtr& x, double p, std::uint64_t seed) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0,1)");
    if (p == 0.0) return x;
    auto out = Tensor::zeros(x->shape);
    auto keep = std::make_shared<std::vector<std::uint8_t>>(x->data.size());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double inv_keep = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        const bool k = u(rng) >= p;
        (*keep)[i] = k ? 1 : 0;
        out->data[i] = k ? x->data[i] * inv_keep : 0.0;
    }
    record(out, "dropout", {x}, [keep, inv_keep](Tensor& o) {
        Tensor& px = *o.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            if ((*keep)[i]) px.grad[i] += o.grad[i] * inv_keep;
        }
    });
    return out;
}

TensorPtr gather_rows(const TensorPtr& table, const std::vector<int>& ids) {
    require_2d(table, "gather_rows");
    const int rows = table->rows(), h = table->cols();
    const int n = static_cast<int>(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= rows) {
            throw std::out_of_range("gather_rows: row index " + std::to_string(id) +
                                    " outside [0," + std::to_string(rows) + ")");
        }
    }
    auto out = Tensor::zeros({n, h});
    for (int i = 0; i < n; ++i) {
        const double* src = table->data.data() + static_cast<std::size_t>(ids[i]) * h;
        std::copy(src, src + h, out->data.data() + static_cast<std::size_t>(i) * h);
    }
    record(out, "gather_rows", {table}, [ids, h](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const double* gi = o.grad.data() + i * static_cast<std::size_t>(h);
            double* dst = p.grad.data() + static_cast<std::size_t>(ids[i]) * h;
            for (int j = 0; j < h; ++j) dst[j] += gi[j];
        }
    });
    return out;
}

TensorPtr scatter_rows(const TensorPtr& x, const std::vector<int>& ids, int out_rows) {
    require_2d(x, "scatter_rows");
    const int n = x->rows(), h = x->cols();
    if (static_cast<int>(ids.size()) != n) {
        throw std::invalid_argument("scatter_rows: one destination index per input row");
    }
    for (int id : ids) {
        if (id < 0 || id >= out_rows) throw std::out_of_range("scatter_rows: index out of range");
    }
    auto out = Tensor::zeros({out_rows, h});
    for (int i = 0; i < n; ++i) {
        const double* src = x->data.data() + static_cast<std::size_t>(i) * h;
        double* dst = out->data.data() + static_cast<std::size_t>(ids[i]) * h;
        for (int j = 0; j < h; ++j) dst[j] += src[j];
    }
    record(out, "scatter_rows", {x}, [ids, h](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const double* gi = o.grad.data() + static_cast<std::size_t>(ids[i]) * h;
            double* dst = p.grad.data() + i * static_cast<std::size_t>(h);
            for (int j = 0; j < h; ++j) dst[j] += gi[j];
        }
    });
    return out;
}

TensorPtr gather_cols(const TensorPtr& x, const std::vector<int>& cols, int k) {
    require_2d(x, "gather_cols");
    const int n = x->rows(), w = x->cols();
    if (static_cast<int>(cols.size()) != n * k) {
        throw std::invalid_argument("gather_cols: need k column indices per row");
    }
    for (int c : cols) {
        if (c < 0 || c >= w) throw std::out_of_range("gather_cols: column index out of range");
    }
    auto out = Tensor::zeros({n, k});
    for (int i = 0; i < n; ++i) {
        const double* xi = x->data.data() + static_cast<std::size_t>(i) * w;
        double* oi = out->data.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) oi[j] = xi[cols[static_cast<std::size_t>(i) * k + j]];
    }
    record(out, "gather_cols", {x}, [cols, k, w](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        const int n2 = o.rows();
        for (int i = 0; i < n2; ++i) {
            const double* gi = o.grad.data() + static_cast<std::size_t>(i) * k;
            double* pi = p.grad.data() + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < k; ++j) pi[cols[static_cast<std::size_t>(i) * k + j]] += gi[j];
        }
    });
    return out;
}

TensorPtr gather_elems(const TensorPtr& x, const std::vector<int>& rows,
                       const std::vector<int>& cols) {
    require_2d(x, "gather_elems");
    if (rows.size() != cols.size()) {
        throw std::invalid_argument("gather_elems: rows and cols must pair up");
    }
    const int nr = x->rows(), nc = x->cols();
    const int m = static_cast<int>(rows.size());
    for (int i = 0; i < m; ++i) {
        if (rows[i] < 0 || rows[i] >= nr || cols[i] < 0 || cols[i] >= nc) {
            throw std::out_of_range("gather_elems: index out of range");
        }
    }
    auto out = Tensor::zeros({m});
    for (int i = 0; i < m; ++i) {
        out->data[i] = x->data[static_cast<std::size_t>(rows[i]) * nc + cols[i]];
    }
    record(out, "gather_elems", {x}, [rows, cols, nc](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            p.grad[static_cast<std::size_t>(rows[i]) * nc + cols[i]] += o.grad[i];
        }
    });
    return out;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty input list");
    const int n = xs[0]->rows();
    int total = 0;
    for (const auto& x : xs) {
        require_2d(x, "concat_cols");
        if (x->rows() != n) throw std::invalid_argument("concat_cols: row counts differ");
        total += x->cols();
    }
    auto out = Tensor::zeros({n, total});
    int off = 0;
    for (const auto& x : xs) {
        const int w = x->cols();
        for (int i = 0; i < n; ++i) {
            std::copy(x->data.data() + static_cast<std::size_t>(i) * w,
                      x->data.data() + static_cast<std::size_t>(i) * w + w,
                      out->data.data() + static_cast<std::size_t>(i) * total + off);
        }
        off += w;
    }
    record(out, "concat_cols", xs, [n, total](Tensor& o) {
        int off2 = 0;
        for (auto& pp : o.parents) {
            Tensor& p = *pp;
            const int w = p.cols();
            if (p.requires_grad) {
                p.ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const double* gi = o.grad.data() + static_cast<std::size_t>(i) * total + off2;
                    double* pi = p.grad.data() + static_cast<std::size_t>(i) * w;
                    for (int j = 0; j < w; ++j) pi[j] += gi[j];
                }
            }
            off2 += w;
        }
    });
    return out;
}

TensorPtr concat_rows(const std::vector<TensorPtr>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: empty input list");
    const int w = xs[0]->cols();
    int total = 0;
    for (const auto& x : xs) {
        require_2d(x, "concat_rows");
        if (x->cols() != w) throw std::invalid_argument("concat_rows: column counts differ");
        total += x->rows();
    }
    auto out = Tensor::zeros({total, w});
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->data.begin(), x->data.end(), out->data.begin() + off);
        off += x->data.size();
    }
    record(out, "concat_rows", xs, [](Tensor& o) {
        std::size_t off2 = 0;
        for (auto& pp : o.parents) {
            Tensor& p = *pp;
            if (p.requires_grad) {
                p.ensure_grad();
                for (std::size_t i = 0; i < p.data.size(); ++i) p.grad[i] += o.grad[off2 + i];
            }
            off2 += p.data.size();
        }
    });
    return out;
}

TensorPtr sum_all(const TensorPtr& x) {
    auto out = Tensor::zeros({1});
    double acc = 0.0;
    for (double v : x->data) acc += v;
    out->data[0] = acc;
    record(out, "sum_all", {x}, [](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += o.grad[0];
    });
    return out;
}

TensorPtr mean_all(const TensorPtr& x) {
    if (x->numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    const double inv = 1.0 / static_cast<double>(x->numel());
    auto out = Tensor::zeros({1});
    double acc = 0.0;
    for (double v : x->data) acc += v;
    out->data[0] = acc * inv;
    record(out, "mean_all", {x}, [inv](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += o.grad[0] * inv;
    });
    return out;
}

TensorPtr mean_over_rows(const TensorPtr& x) {
    require_2d(x, "mean_over_rows");
    const int n = x->rows(), k = x->cols();
    if (n == 0) throw std::invalid_argument("mean_over_rows: no rows");
    auto out = Tensor::zeros({k});
    for (int i = 0; i < n; ++i) {
        const double* xi = x->data.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) out->data[j] += xi[j];
    }
    const double inv = 1.0 / n;
    for (int j = 0; j < k; ++j) out->data[j] *= inv;
    record(out, "mean_over_rows", {x}, [n, k, inv](Tensor& o) {
        Tensor& p = *o.parents[0];
        p.ensure_grad();
        for (int i = 0; i < n; ++i) {
            double* pi = p.grad.data() + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) pi[j] += o.grad[j] * inv;
        }
    });
    return out;
}

TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<int>& targets,
                        const std::vector<std::uint8_t>& ignore) {
    require_2d(logits, "cross_entropy");
    const int b = logits->rows(), v = logits->cols();
    if (static_cast<int>(targets.size()) != b || static_cast<int>(ignore.size()) != b) {
        throw std::invalid_argument("cross_entropy: need one target and ignore flag per row");
    }
    int used = 0;
    for (int i = 0; i < b; ++i) {
        if (ignore[i]) continue;
        ++used;
        if (targets[i] < 0 || targets[i] >= v) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                                    " outside [0," + std::to_string(v) + ") at row " +
                                    std::to_string(i));
        }
    }
    if (used == 0) throw std::invalid_argument("cross_entropy: empty loss");

    // Save softmax probabilities of the non-ignored rows for backward.
    auto probs = std::make_shared<std::vector<double>>(logits->data.size(), 0.0);
    double acc = 0.0;
    for (int i = 0; i < b; ++i) {
        if (ignore[i]) continue;
        const double* li = logits->data.data() + static_cast<std::size_t>(i) * v;
        double m = li[0];
        for (int j = 1; j < v; ++j) m = std::max(m, li[j]);
        double z = 0.0;
        double* pi = probs->data() + static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) {
            pi[j] = std::exp(li[j] - m);
            z += pi[j];
        }
        const double inv_z = 1.0 / z;
        for (int j = 0; j < v; ++j) pi[j] *= inv_z;
        acc += std::log(z) + m - li[targets[i]];
    }
    auto out = Tensor::zeros({1});
    out->data[0] = acc / used;
    record(out, "cross_entropy", {logits},
           [targets, ignore, probs, used, v](Tensor& o) {
               Tensor& p = *o.parents[0];
               p.ensure_grad();
               const double g = o.grad[0] / used;
               const int b2 = p.rows();
               for (int i = 0; i < b2; ++i) {
                   if (ignore[i]) continue;
                   const double* pi = probs->data() + static_cast<std::size_t>(i) * v;
                   double* dgi = p.grad.data() + static_cast<std::size_t>(i) * v;
                   for (int j = 0; j < v; ++j) dgi[j] += g * pi[j];
                   dgi[targets[i]] -= g;
               }
           });
    return out;
}

}  // namespace ops
}  // namespace stmoe
