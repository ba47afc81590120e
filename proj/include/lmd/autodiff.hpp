#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lmd/tensor.hpp"

namespace lmd {

// Handle to a value recorded on a Tape.
struct Var {
    std::size_t index = 0;
};

// Forward-only operand/output transform applied inside matmul. Empty members
// act as the identity. The backward pass never sees these transforms
// (straight-through).
struct MatmulHook {
    std::function<Tensor(const Tensor&)> lhs;     // [n, k], blocked along k (rows)
    std::function<Tensor(const Tensor&)> rhs;     // [k, m], blocked along k (columns)
    std::function<Tensor(const Tensor&)> output;  // [n, m]

    bool is_identity() const noexcept { return !lhs && !rhs && !output; }
};

// Reverse-mode tape. Nodes are appended in execution order; backward()
// walks them in exact reverse order.
class Tape {
public:
    Tape() = default;
    explicit Tape(MatmulHook hook) : hook_(std::move(hook)) {}

    Var leaf(Tensor value);
    Var constant(Tensor value);

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var add_bias(Var a, Var bias);  // a: [n, m], bias: [m]
    Var mul(Var a, Var b);
    Var scale(Var a, double factor);
    Var relu(Var a);
    Var gelu(Var a);
    Var layernorm(Var a, Var gain, double eps = 1e-5);  // normalizes the last axis, no bias
    Var softmax(Var a);                                  // row-wise
    // Row-wise softmax on a [B*T, B*T] score matrix where row i may only
    // attend to columns in its own length-`segment` block at positions <= i.
    Var causal_softmax(Var a, std::size_t segment);
    Var embedding(Var table, std::span<const int> ids);
    Var sum(Var a);
    Var cross_entropy(Var logits, std::span<const int> labels);  // mean over rows
    Var mse(Var prediction, Var target);                          // mean over entries

    const Tensor& value(Var v) const { return nodes_.at(v.index).value; }
    const Tensor& grad(Var v) const { return grads_.at(v.index); }
    bool is_leaf(Var v) const { return nodes_.at(v.index).is_leaf; }
    std::size_t size() const noexcept { return nodes_.size(); }
    const MatmulHook& hook() const noexcept { return hook_; }

    // Seeds d(loss)/d(loss) = 1 and propagates to every node. Nodes not on a
    // path from the loss keep zero gradients.
    void backward(Var loss);

private:
    using Backward = std::function<void(Tape&, std::size_t)>;

    struct Node {
        std::string op;
        Tensor value;
        std::vector<std::size_t> inputs;
        Backward backward;
        bool is_leaf = false;
    };

    Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, Backward backward);
    Tensor& grad_ref(std::size_t index) { return grads_[index]; }
    const Tensor& val(std::size_t index) const { return nodes_[index].value; }

    MatmulHook hook_;
    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

// A graph program records a scalar loss on the tape given the leaf handles
// for its inputs (in the order they were passed to forward()).
using GraphProgram = std::function<Var(Tape&, std::span<const Var>)>;

struct ForwardResult {
    double loss = 0.0;
    Tape tape;
    Var loss_var;
    std::vector<Var> leaves;
};

ForwardResult forward(const GraphProgram& program, std::span<const Tensor> inputs, MatmulHook hook = {});

// Gradients of the recorded loss w.r.t. each leaf passed to forward().
std::vector<Tensor> backward(ForwardResult& result);

} // namespace lmd
