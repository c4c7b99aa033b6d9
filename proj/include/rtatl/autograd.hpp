#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rtatl/tensor.hpp"

namespace rtatl {

// Reverse-mode autodiff over Tensor. The graph is a dynamic tape: every op
// allocates a Node whose creation id gives a valid topological order, so
// backward() just walks reachable nodes in descending id. Gradients are
// deposited into a parent only while its requires_grad flag is set, which is
// how the trainer freezes D/C during the generator phase.
struct Node {
    Tensor val;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    long long id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor t, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Tensor& val() const { return n_->val; }
    Tensor& val_mut() { return n_->val; }
    const Shape& shape() const { return n_->val.shape; }
    double item() const { return n_->val.v[0]; }

    bool requires_grad() const { return n_ && n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }

    Tensor& grad();          // allocates zeros if absent
    bool has_grad() const { return n_ && !n_->grad.empty(); }
    void zero_grad();

    Var detach() const;      // value copy, no history
    void backward() const;   // root must be a scalar

    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
    friend Var make_op(Tensor, std::vector<Var>, std::function<void(Node&)>);
};

// True unless a NoGradGuard is alive; ops built while disabled record no history.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Accumulate g into the node's grad buffer (allocating zeros first).
void accum_grad(Node& n, const Tensor& g);
Var make_op(Tensor val, std::vector<Var> parents, std::function<void(Node&)> backprop);

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);              // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);              // Hadamard
Var emax(const Var& a, const Var& b);             // ties route the gradient to a
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var sigmoid(const Var& a);
Var log_v(const Var& a);
Var abs_v(const Var& a);
Var clamp(const Var& a, double lo, double hi);    // zero gradient outside [lo,hi]
Var mul_const(const Var& a, const Tensor& m);     // constant mask, same shape

// ---- reductions ----
Var sum_all(const Var& a);                        // -> [1]
Var mean_all(const Var& a);

// ---- 2-D linear algebra ----
Var matmul(const Var& a, const Var& b);           // [m,k]x[k,n]
Var transpose2d(const Var& a);
Var add_rowvec(const Var& a, const Var& b);       // [m,n] + [n]
Var row_softmax(const Var& a);                    // softmax per row

// ---- shape ----
Var reshape(const Var& a, Shape s);
Var slice_rows(const Var& a, int r0, int r1);     // 2-D, rows [r0,r1)
Var concat_rows(const std::vector<Var>& rows);    // 2-D blocks, equal column count
Var slice_dim0(const Var& a, int b0, int b1);     // any rank, leading axis
Var avg_row_pairs(const Var& a);                  // [2n,d] -> [n,d]

}  // namespace rtatl
