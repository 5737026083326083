#pragma once

#include "dfb/tensor.hpp"

#include <string>
#include <vector>

namespace dfb {

enum class OptimizerKind { SgdMomentum, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::SgdMomentum;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // L2 penalty added to the gradient before the update.
    double weight_decay = 0.0;

    void validate() const;
};

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

// Per-parameter optimizer state.
struct OptimizerState {
    std::vector<std::vector<double>> first;   // velocity (sgd) or m (adam)
    std::vector<std::vector<double>> second;  // v (adam)
    long long steps = 0;
};

// One update over aligned params/grads:
//   sgd-momentum: v <- mu v + g, p <- p - lr v
//   adam: bias-corrected first/second moment update
void optimizer_step(std::span<Tensor* const> params, const OptimizerConfig& config, OptimizerState& state);

class Optimizer {
public:
    Optimizer(OptimizerConfig config, std::vector<Tensor*> params);

    void zero_grad();
    void step();
    const OptimizerState& state() const { return state_; }

private:
    OptimizerConfig config_;
    std::vector<Tensor*> params_;
    OptimizerState state_;
};

}  // namespace dfb
