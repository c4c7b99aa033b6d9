#include "rtatl/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "rtatl/errors.hpp"

namespace rtatl {

namespace {

std::atomic<long long> g_next_id{1};
thread_local int g_no_grad_depth = 0;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.val().same_shape(b.val()))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

Var::Var(Tensor t, bool requires_grad) : n_(std::make_shared<Node>()) {
    n_->val = std::move(t);
    n_->requires_grad = requires_grad && grad_enabled();
    n_->id = g_next_id.fetch_add(1);
}

Tensor& Var::grad() {
    if (n_->grad.empty()) n_->grad = Tensor(n_->val.shape, 0.0);
    return n_->grad;
}

void Var::zero_grad() {
    if (n_ && !n_->grad.empty()) n_->grad.fill(0.0);
}

Var Var::detach() const {
    Var out(n_->val, false);
    return out;
}

void accum_grad(Node& n, const Tensor& g) {
    if (n.grad.empty()) n.grad = Tensor(n.val.shape, 0.0);
    double* dst = n.grad.data();
    const double* src = g.data();
    const size_t m = n.grad.v.size();
    for (size_t i = 0; i < m; ++i) dst[i] += src[i];
}

Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    Var out;
    out.n_ = std::make_shared<Node>();
    out.n_->val = std::move(val);
    out.n_->id = g_next_id.fetch_add(1);
    bool rg = false;
    if (grad_enabled()) {
        for (const Var& p : parents)
            if (p.requires_grad()) {
                rg = true;
                break;
            }
    }
    out.n_->requires_grad = rg;
    if (rg) {
        out.n_->parents.reserve(parents.size());
        for (const Var& p : parents) out.n_->parents.push_back(p.node());
        out.n_->backprop = std::move(backprop);
    }
    return out;
}

void Var::backward() const {
    if (!n_) throw std::runtime_error("backward on undefined Var");
    if (n_->val.numel() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(n_->val.shape));
    if (!n_->requires_grad) return;

    // Collect the reachable subgraph; creation ids give a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{n_.get()};
    seen.insert(n_.get());
    while (!stack.empty()) {
        Node* cur = stack.back();
        stack.pop_back();
        order.push_back(cur);
        for (auto& p : cur->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

    accum_grad(*n_, Tensor::scalar(1.0));
    for (Node* node : order) {
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.val();
    const double* pb = b.val().data();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += pb[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        for (auto& p : n.parents)
            if (p->requires_grad) accum_grad(*p, n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.val();
    const double* pb = b.val().data();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= pb[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) accum_grad(*n.parents[0], n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            for (double& e : g.v) e = -e;
            accum_grad(*n.parents[1], g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.val();
    const double* pb = b.val().data();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= pb[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->val;
        const Tensor& bv = n.parents[1]->val;
        if (n.parents[0]->requires_grad) {
            Tensor g = n.grad;
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= bv.v[i];
            accum_grad(*n.parents[0], g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= av.v[i];
            accum_grad(*n.parents[1], g);
        }
    });
}

Var emax(const Var& a, const Var& b) {
    check_same_shape(a, b, "emax");
    Tensor out = a.val();
    const double* pb = b.val().data();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = std::max(out.v[i], pb[i]);
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->val;
        const Tensor& bv = n.parents[1]->val;
        if (n.parents[0]->requires_grad) {
            Tensor g = n.grad;
            for (size_t i = 0; i < g.v.size(); ++i)
                if (av.v[i] < bv.v[i]) g.v[i] = 0.0;
            accum_grad(*n.parents[0], g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            for (size_t i = 0; i < g.v.size(); ++i)
                if (av.v[i] >= bv.v[i]) g.v[i] = 0.0;
            accum_grad(*n.parents[1], g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.val();
    for (double& e : out.v) e *= s;
    return make_op(std::move(out), {a}, [s](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        for (double& e : g.v) e *= s;
        accum_grad(*n.parents[0], g);
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.val();
    for (double& e : out.v) e += s;
    return make_op(std::move(out), {a}, [](Node& n) {
        if (n.parents[0]->requires_grad) accum_grad(*n.parents[0], n.grad);
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
    Tensor out = a.val();
    for (double& e : out.v) e = e > 0.0 ? e : 0.0;
    return make_op(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        const Tensor& x = n.parents[0]->val;
        for (size_t i = 0; i < g.v.size(); ++i)
            if (x.v[i] <= 0.0) g.v[i] = 0.0;
        accum_grad(*n.parents[0], g);
    });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out = a.val();
    for (double& e : out.v) e = e > 0.0 ? e : slope * e;
    return make_op(std::move(out), {a}, [slope](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        const Tensor& x = n.parents[0]->val;
        for (size_t i = 0; i < g.v.size(); ++i)
            if (x.v[i] <= 0.0) g.v[i] *= slope;
        accum_grad(*n.parents[0], g);
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a.val();
    for (double& e : out.v) e = 1.0 / (1.0 + std::exp(-e));
    Tensor saved = out;
    return make_op(std::move(out), {a}, [saved](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= saved.v[i] * (1.0 - saved.v[i]);
        accum_grad(*n.parents[0], g);
    });
}

Var log_v(const Var& a) {
    Tensor out = a.val();
    for (double& e : out.v) e = std::log(e);
    return make_op(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        const Tensor& x = n.parents[0]->val;
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] /= x.v[i];
        accum_grad(*n.parents[0], g);
    });
}

Var abs_v(const Var& a) {
    Tensor out = a.val();
    for (double& e : out.v) e = std::fabs(e);
    return make_op(std::move(out), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        const Tensor& x = n.parents[0]->val;
        for (size_t i = 0; i < g.v.size(); ++i) {
            if (x.v[i] < 0.0)
                g.v[i] = -g.v[i];
            else if (x.v[i] == 0.0)
                g.v[i] = 0.0;
        }
        accum_grad(*n.parents[0], g);
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out = a.val();
    for (double& e : out.v) e = std::min(hi, std::max(lo, e));
    return make_op(std::move(out), {a}, [lo, hi](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        const Tensor& x = n.parents[0]->val;
        for (size_t i = 0; i < g.v.size(); ++i)
            if (x.v[i] < lo || x.v[i] > hi) g.v[i] = 0.0;
        accum_grad(*n.parents[0], g);
    });
}

Var mul_const(const Var& a, const Tensor& m) {
    if (!a.val().same_shape(m))
        throw ShapeError("mul_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(m.shape));
    Tensor out = a.val();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= m.v[i];
    return make_op(std::move(out), {a}, [m](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g = n.grad;
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= m.v[i];
        accum_grad(*n.parents[0], g);
    });
}

// ---------------------------------------------------------------------------
// reductions

Var sum_all(const Var& a) {
    double s = 0.0;
    for (double e : a.val().v) s += e;
    return make_op(Tensor::scalar(s), {a}, [](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Tensor g(n.parents[0]->val.shape, n.grad.v[0]);
        accum_grad(*n.parents[0], g);
    });
}

Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.val().numel());
    return scale(sum_all(a), inv);
}

// ---------------------------------------------------------------------------
// 2-D linear algebra

Var matmul(const Var& a, const Var& b) {
    if (a.val().ndim() != 2 || b.val().ndim() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out(Shape{m, n});
    {
        CMap A(a.val().data(), m, k), B(b.val().data(), k, n);
        MMap C(out.data(), m, n);
        C.noalias() = A * B;
    }
    return make_op(std::move(out), {a, b}, [m, k, n](Node& nd) {
        CMap G(nd.grad.data(), m, n);
        if (nd.parents[0]->requires_grad) {
            Tensor ga(Shape{m, k});
            CMap B(nd.parents[1]->val.data(), k, n);
            MMap GA(ga.data(), m, k);
            GA.noalias() = G * B.transpose();
            accum_grad(*nd.parents[0], ga);
        }
        if (nd.parents[1]->requires_grad) {
            Tensor gb(Shape{k, n});
            CMap A(nd.parents[0]->val.data(), m, k);
            MMap GB(gb.data(), k, n);
            GB.noalias() = A.transpose() * G;
            accum_grad(*nd.parents[1], gb);
        }
    });
}

Var transpose2d(const Var& a) {
    if (a.val().ndim() != 2) throw ShapeError("transpose2d: need rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out(Shape{n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.val().at(i, j);
    return make_op(std::move(out), {a}, [m, n](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor g(Shape{m, n});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) g.at(i, j) = nd.grad.at(j, i);
        accum_grad(*nd.parents[0], g);
    });
}

Var add_rowvec(const Var& a, const Var& b) {
    if (a.val().ndim() != 2 || b.val().ndim() != 1 || a.shape()[1] != b.shape()[0])
        throw ShapeError("add_rowvec: incompatible " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out = a.val();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) += b.val().at(j);
    return make_op(std::move(out), {a, b}, [m, n](Node& nd) {
        if (nd.parents[0]->requires_grad) accum_grad(*nd.parents[0], nd.grad);
        if (nd.parents[1]->requires_grad) {
            Tensor g(Shape{n});
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) g.at(j) += nd.grad.at(i, j);
            accum_grad(*nd.parents[1], g);
        }
    });
}

Var row_softmax(const Var& a) {
    if (a.val().ndim() != 2) throw ShapeError("row_softmax: need rank 2, got " + shape_str(a.shape()));
    const int m = a.shape()[0], n = a.shape()[1];
    Tensor out = a.val();
    for (int i = 0; i < m; ++i) {
        double mx = out.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, out.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            out.at(i, j) = std::exp(out.at(i, j) - mx);
            z += out.at(i, j);
        }
        for (int j = 0; j < n; ++j) out.at(i, j) /= z;
    }
    Tensor saved = out;
    return make_op(std::move(out), {a}, [m, n, saved](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        // dx = y * (dy - sum_j(dy_j * y_j)) per row
        Tensor g(Shape{m, n});
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += nd.grad.at(i, j) * saved.at(i, j);
            for (int j = 0; j < n; ++j) g.at(i, j) = saved.at(i, j) * (nd.grad.at(i, j) - dot);
        }
        accum_grad(*nd.parents[0], g);
    });
}

// ---------------------------------------------------------------------------
// shape

Var reshape(const Var& a, Shape s) {
    if (shape_numel(s) != a.val().numel())
        throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(s));
    Tensor out = Tensor::from(std::move(s), a.val().v);
    Shape orig = a.shape();
    return make_op(std::move(out), {a}, [orig](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor g = Tensor::from(orig, nd.grad.v);
        accum_grad(*nd.parents[0], g);
    });
}

Var slice_rows(const Var& a, int r0, int r1) {
    if (a.val().ndim() != 2) throw ShapeError("slice_rows: need rank 2");
    const int n = a.shape()[1];
    Tensor out(Shape{r1 - r0, n});
    std::copy(a.val().v.begin() + static_cast<size_t>(r0) * n, a.val().v.begin() + static_cast<size_t>(r1) * n,
              out.v.begin());
    return make_op(std::move(out), {a}, [r0, n](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        if (nd.parents[0]->grad.empty()) nd.parents[0]->grad = Tensor(nd.parents[0]->val.shape, 0.0);
        double* dst = nd.parents[0]->grad.data() + static_cast<size_t>(r0) * n;
        for (size_t i = 0; i < nd.grad.v.size(); ++i) dst[i] += nd.grad.v[i];
    });
}

Var concat_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw ShapeError("concat_rows: empty input");
    const int n = rows[0].shape()[1];
    int m = 0;
    for (const Var& r : rows) {
        if (r.val().ndim() != 2 || r.shape()[1] != n) throw ShapeError("concat_rows: column mismatch");
        m += r.shape()[0];
    }
    Tensor out(Shape{m, n});
    size_t off = 0;
    for (const Var& r : rows) {
        std::copy(r.val().v.begin(), r.val().v.end(), out.v.begin() + off);
        off += r.val().v.size();
    }
    std::vector<int> row_counts;
    for (const Var& r : rows) row_counts.push_back(r.shape()[0]);
    return make_op(std::move(out), rows, [row_counts, n](Node& nd) {
        size_t off = 0;
        for (size_t k = 0; k < nd.parents.size(); ++k) {
            const size_t cnt = static_cast<size_t>(row_counts[k]) * n;
            if (nd.parents[k]->requires_grad) {
                Tensor g(nd.parents[k]->val.shape);
                std::copy(nd.grad.v.begin() + off, nd.grad.v.begin() + off + cnt, g.v.begin());
                accum_grad(*nd.parents[k], g);
            }
            off += cnt;
        }
    });
}

Var slice_dim0(const Var& a, int b0, int b1) {
    if (a.val().ndim() < 1) throw ShapeError("slice_dim0: need rank >= 1");
    Shape s = a.shape();
    const long long inner = a.val().numel() / s[0];
    s[0] = b1 - b0;
    Tensor out(s);
    std::copy(a.val().v.begin() + b0 * inner, a.val().v.begin() + b1 * inner, out.v.begin());
    return make_op(std::move(out), {a}, [b0, inner](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        if (nd.parents[0]->grad.empty()) nd.parents[0]->grad = Tensor(nd.parents[0]->val.shape, 0.0);
        double* dst = nd.parents[0]->grad.data() + b0 * inner;
        for (size_t i = 0; i < nd.grad.v.size(); ++i) dst[i] += nd.grad.v[i];
    });
}

Var avg_row_pairs(const Var& a) {
    if (a.val().ndim() != 2 || a.shape()[0] % 2 != 0) throw ShapeError("avg_row_pairs: need [2n,d]");
    const int n = a.shape()[0] / 2, d = a.shape()[1];
    Tensor out(Shape{n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = 0.5 * (a.val().at(2 * i, j) + a.val().at(2 * i + 1, j));
    return make_op(std::move(out), {a}, [n, d](Node& nd) {
        if (!nd.parents[0]->requires_grad) return;
        Tensor g(Shape{2 * n, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) {
                g.at(2 * i, j) = 0.5 * nd.grad.at(i, j);
                g.at(2 * i + 1, j) = 0.5 * nd.grad.at(i, j);
            }
        accum_grad(*nd.parents[0], g);
    });
}

}  // namespace rtatl
