#include "dfb/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dfb {

void OptimizerConfig::validate() const
{
    if (!(learning_rate > 0.0)) throw std::invalid_argument("optimizer: learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("optimizer: momentum must be in [0,1)");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw std::invalid_argument("optimizer: adam betas must be in [0,1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("optimizer: epsilon must be > 0");
    if (weight_decay < 0.0) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
}

OptimizerKind parse_optimizer_kind(const std::string& name)
{
    if (name == "sgd-momentum" || name == "sgd") return OptimizerKind::SgdMomentum;
    if (name == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd-momentum or adam)");
}

std::string to_string(OptimizerKind kind)
{
    return kind == OptimizerKind::Adam ? "adam" : "sgd-momentum";
}

void optimizer_step(std::span<Tensor* const> params, const OptimizerConfig& config, OptimizerState& state)
{
    config.validate();
    if (state.first.empty()) {
        for (Tensor* p : params) {
            state.first.emplace_back(p->numel(), 0.0);
            if (config.kind == OptimizerKind::Adam) state.second.emplace_back(p->numel(), 0.0);
        }
    }
    if (state.first.size() != params.size()) {
        throw ShapeError("optimizer_step: state holds " + std::to_string(state.first.size())
                         + " slots for " + std::to_string(params.size()) + " params");
    }
    ++state.steps;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.steps));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.steps));

    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        if (!p.has_grad() || p.grad().size() != p.numel() || state.first[k].size() != p.numel()) {
            throw ShapeError("optimizer_step: parameter " + std::to_string(k) + " " + shape_str(p.shape())
                             + " has no aligned gradient/state");
        }
        auto data = p.data();
        auto grad = p.grad();
        auto& m = state.first[k];
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i] + config.weight_decay * data[i];
            if (config.kind == OptimizerKind::SgdMomentum) {
                m[i] = config.momentum * m[i] + g;
                data[i] -= config.learning_rate * m[i];
            } else {
                auto& v = state.second[k];
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                data[i] -= config.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config.epsilon);
            }
        }
        if (!p.all_finite()) throw NonFiniteError("optimizer_step: non-finite parameter after update");
    }
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<Tensor*> params)
    : config_(config), params_(std::move(params))
{
    config_.validate();
}

void Optimizer::zero_grad()
{
    for (Tensor* p : params_) p->zero_grad();
}

void Optimizer::step()
{
    optimizer_step(params_, config_, state_);
}

}  // namespace dfb
