#include "dfb/params.hpp"

#include "dfb/digest.hpp"

#include <cmath>
#include <stdexcept>

namespace dfb {

Tensor& ParamSet::add(std::string name, Tensor tensor)
{
    if (contains(name)) throw std::invalid_argument("ParamSet: duplicate tensor '" + name + "'");
    entries_.push_back({std::move(name), std::move(tensor)});
    return entries_.back().tensor;
}

Tensor& ParamSet::at(const std::string& name)
{
    for (auto& e : entries_)
        if (e.name == name) return e.tensor;
    throw std::out_of_range("ParamSet: no tensor named '" + name + "'");
}

const Tensor& ParamSet::at(const std::string& name) const
{
    for (const auto& e : entries_)
        if (e.name == name) return e.tensor;
    throw std::out_of_range("ParamSet: no tensor named '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const
{
    for (const auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

std::size_t ParamSet::total_size() const
{
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

std::vector<Tensor*> ParamSet::pointers()
{
    std::vector<Tensor*> out;
    for (auto& e : entries_) out.push_back(&e.tensor);
    return out;
}

void ParamSet::set_requires_grad(bool on)
{
    for (auto& e : entries_) e.tensor.set_requires_grad(on);
}

void ParamSet::zero_grad()
{
    for (auto& e : entries_) e.tensor.zero_grad();
}

ParamSet ParamSet::detached() const
{
    ParamSet out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.detached());
    return out;
}

std::string ParamSet::digest() const
{
    Sha256 h;
    for (const auto& e : entries_) {
        h.update(e.name);
        h.update(shape_str(e.tensor.shape()));
        h.update(e.tensor.data().data(), e.tensor.numel() * sizeof(double));
    }
    return h.finish_hex();
}

bool ParamSet::same_bytes(const ParamSet& other) const
{
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name) return false;
        if (!entries_[i].tensor.same_bytes(other.entries_[i].tensor)) return false;
    }
    return true;
}

Bindings bind(Graph& g, ParamSet& params, bool trainable)
{
    Bindings out;
    for (auto& e : params.entries()) {
        if (trainable) {
            if (!e.tensor.requires_grad()) e.tensor.set_requires_grad(true);
            out.emplace(e.name, g.parameter(e.tensor));
        } else {
            out.emplace(e.name, g.constant(e.tensor.detached()));
        }
    }
    return out;
}

Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng, double gain)
{
    Tensor t(std::move(shape));
    const double stddev = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

}  // namespace dfb
