#pragma once

#include <cstdint>
#include <vector>

#include "milc/rng.hpp"
#include "milc/tensor.hpp"

namespace milc {

enum class DropoutMode { train, infer, mc };

namespace ag {

enum class Op {
    leaf,
    matmul,
    add_row,
    relu,
    sigmoid,
    tanh_op,
    dropout,
    sum,
    mean,
    max,
    softmax,
    reshape,
    select,
    bce,
};

struct Node {
    Op op;
    int a = -1, b = -1;        // input node ids
    Tensor value;              // forward result
    std::vector<double> adj;   // adjoint buffer, sized during backward
    Tensor* bound = nullptr;   // leaf only: external tensor receiving gradient
    std::vector<double> saved; // op payload: dropout mask, argmax indices, bce target
    int axis = -1;             // reductions: -1 all, 0 rows, 1 cols
};

/// Define-by-run reverse-mode tape. Build a fresh Graph per forward pass;
/// node insertion order is the topological order and backward() walks it in
/// exact reverse. One backward per graph.
class Graph {
public:
    using Id = int;

    /// Constant leaf; values copied, no gradient.
    Id input(const Tensor& t);

    /// Leaf bound to an external tensor. If the tensor has requires_grad,
    /// backward() accumulates into its grad (additively across bindings).
    Id param(Tensor& t);

    Id matmul(Id a, Id b);
    Id add_row(Id x, Id bias);  // [m x n] + [n], row broadcast
    Id relu(Id x);
    Id sigmoid(Id x);
    Id tanh(Id x);
    Id dropout(Id x, double p, DropoutMode mode, RngStream& rng);
    Id sum(Id x, int axis = -1);
    Id mean(Id x, int axis = -1);
    Id max(Id x, int axis = -1);  // ties: first index in storage order
    Id softmax(Id x);             // over all elements
    Id reshape(Id x, std::vector<size_t> shape);
    Id select(Id x, size_t flat_index);  // scalar pick, gradient routed to that element
    Id bce(Id z, double target);         // z scalar; target in {0,1}

    const Tensor& value(Id id) const { return nodes_[size_t(id)].value; }
    const std::vector<double>& adjoint(Id id) const { return nodes_[size_t(id)].adj; }
    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    /// Reverse sweep from a scalar loss node. Populates bound tensors' grad
    /// fields; marks the graph consumed.
    void backward(Id loss);

private:
    std::vector<Node> nodes_;
    bool consumed_ = false;

    Id push(Node&& n);
    Node& at(Id id) { return nodes_[size_t(id)]; }
    const Node& at(Id id) const { return nodes_[size_t(id)]; }
    void check_open() const;
};

}  // namespace ag

// Numerically stable sigmoid, clamped into the open interval (0,1).
double sigmoid_stable(double x);

}  // namespace milc
