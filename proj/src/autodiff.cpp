#include "dfb/autodiff.hpp"

#include <algorithm>
#include <stdexcept>

namespace dfb {

const Tensor& Var::value() const
{
    return graph_->value(id_);
}

Var Graph::constant(Tensor value)
{
    auto node = std::make_unique<Node>();
    node->op = "constant";
    node->value = std::move(value);
    node->value.set_requires_grad(false);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(Tensor& tensor)
{
    if (!tensor.requires_grad()) {
        throw std::invalid_argument("Graph::parameter: tensor does not require grad");
    }
    auto node = std::make_unique<Node>();
    node->op = "parameter";
    node->value = tensor.detached();
    node->needs_grad = true;
    node->parameter = &tensor;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward)
{
    if (consumed_) {
        throw std::logic_error(op + ": graph already consumed by backward");
    }
    if (!value.all_finite()) {
        throw NonFiniteError(op + ": produced non-finite values");
    }
    auto node = std::make_unique<Node>();
    node->op = std::move(op);
    node->value = std::move(value);
    for (const Var& in : inputs) {
        if (&in.graph() != this) {
            throw std::invalid_argument(node->op + ": input belongs to another graph");
        }
        node->needs_grad = node->needs_grad || nodes_[in.id()]->needs_grad;
    }
    if (node->needs_grad) node->backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

std::span<double> Graph::grad_of(const Var& v)
{
    Node& node = *nodes_[v.id()];
    if (!node.needs_grad) return {};
    if (node.grad.empty()) node.grad.assign(node.value.numel(), 0.0);
    return node.grad;
}

void Graph::backward(const Var& loss)
{
    if (consumed_) {
        throw std::logic_error("backward: computation record already consumed (double backward unsupported)");
    }
    if (&loss.graph() != this) {
        throw std::invalid_argument("backward: loss belongs to another graph");
    }
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    consumed_ = true;
    if (!nodes_[loss.id()]->needs_grad) return;

    grad_of(loss)[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& node = *nodes_[id];
        if (node.grad.empty()) continue;
        if (node.backward) node.backward(node.grad);
        if (node.parameter) {
            std::span<double> dst = node.parameter->grad();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
        }
        // Intermediate gradients are no longer needed once propagated.
        if (!node.parameter) std::vector<double>().swap(node.grad);
    }
}

}  // namespace dfb
