#pragma once

#include "dfb/autodiff.hpp"
#include "dfb/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace dfb {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Ordered collection of named weight tensors.
class ParamSet {
public:
    Tensor& add(std::string name, Tensor tensor);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<NamedTensor>& entries() { return entries_; }
    const std::vector<NamedTensor>& entries() const { return entries_; }
    std::size_t total_size() const;

    std::vector<Tensor*> pointers();
    void set_requires_grad(bool on);
    void zero_grad();
    ParamSet detached() const;

    // SHA-256 over names, shapes and payload bytes.
    std::string digest() const;
    bool same_bytes(const ParamSet& other) const;

private:
    std::vector<NamedTensor> entries_;
};

// Name -> Var binding of a ParamSet inside one graph.
using Bindings = std::map<std::string, Var>;

// Trainable tensors become graph parameters, the rest constants.
Bindings bind(Graph& g, ParamSet& params, bool trainable);

// He-style normal init for conv / linear weights.
Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0);

}  // namespace dfb
