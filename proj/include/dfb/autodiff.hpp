#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Graph is the computation record: every op appends one node, so node
// order is a topological order. backward() walks it once in reverse and
// accumulates into the grad buffers of the parameter tensors bound with
// Graph::parameter(). A Graph can be consumed by backward() only once.

#include "dfb/tensor.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dfb {

class Graph;

class Var {
public:
    Var() = default;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t numel() const { return value().numel(); }
    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }
    bool valid() const { return graph_ != nullptr; }

private:
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    // Receives the output gradient; pushes gradients to inputs via grad_of().
    using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    // Binds a tensor with requires_grad set; gradients accumulate into it.
    Var parameter(Tensor& tensor);

    // Records an op result. Checks the value is finite, naming `op` if not.
    Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const { return nodes_[id]->value; }
    bool needs_grad(std::size_t id) const { return nodes_[id]->needs_grad; }
    // Gradient buffer of a node, allocated on first use. Empty span when the
    // node does not need a gradient.
    std::span<double> grad_of(const Var& v);

    void backward(const Var& loss);
    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<double> grad;
        bool needs_grad = false;
        Tensor* parameter = nullptr;
        BackwardFn backward;
    };

    std::vector<std::unique_ptr<Node>> nodes_;
    bool consumed_ = false;
};

}  // namespace dfb
