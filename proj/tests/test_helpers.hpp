#pragma once

#include "dfb/rng.hpp"
#include "dfb/tensor.hpp"

namespace dfb::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace dfb::test
