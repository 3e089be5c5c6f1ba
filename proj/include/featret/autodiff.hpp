#pragma once

#include "featret/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

// Reverse-mode differentiation over an explicit tape of primitive applications.
namespace featret::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor2& value() const;
    Tensor2 grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

// Row-major 0/1 selection, same shape as the operand it masks.
using Mask = std::vector<std::uint8_t>;

class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor2& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor2 value);
    Var variable(Tensor2 value);

    // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be 1x1.
    void backward(Var root);

    const Tensor2& value(std::size_t id) const { return nodes_[id].value; }
    // Zeros when nothing flowed into the node.
    Tensor2 grad(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Used by primitives.
    Var push(Tensor2 value, bool requires_grad, Backward backward);
    // Adds g into the gradient of node id (no-op for constants).
    void accumulate(std::size_t id, const Tensor2& g);
    Tensor2& grad_slot(std::size_t id);

private:
    struct Node {
        Tensor2 value;
        Tensor2 grad;
        bool requires_grad = false;
        Backward backward;
    };
    std::vector<Node> nodes_;
};

constexpr double kDefaultLeakySlope = 0.01;

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
// Adds the 1 x d row b to every row of the n x d matrix a.
Var add_row_broadcast(Var a, Var b);
Var transpose(Var a);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var table, std::span<const std::size_t> indices);
Var sigmoid(Var a);
Var leaky_relu(Var a, double slope = kDefaultLeakySlope);
Var tanh(Var a);
// Column means: n x d -> 1 x d.
Var mean_rows(Var a);
// Rows scaled to unit L2 norm; all-zero rows stay zero.
Var l2_normalize_rows(Var a);
// Sum of elementwise products of equal-shaped operands, as 1 x 1.
Var dot(Var a, Var b);
Var sum_all(Var a);
// Elementwise arithmetic mean of equal-shaped operands.
Var average(std::span<const Var> parts);
// Per-row layer normalization with biased variance; gamma, beta are 1 x d.
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
// Per-row softmax restricted to mask; unmasked entries are 0. Every row needs a set bit.
Var masked_softmax_rows(Var x, const Mask& mask);
// Per-row log-sum-exp over masked entries as n x 1. Rows with no set bit yield 0.
Var masked_logsumexp_rows(Var x, const Mask& mask);

} // namespace featret::ad
