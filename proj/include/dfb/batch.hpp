#pragma once

#include "dfb/tensor.hpp"
#include "dfb/world.hpp"

#include <span>
#include <vector>

namespace dfb {

// [S,S] images -> [N,1,S,S]
Tensor stack_images(std::span<const Tensor> images);
Tensor stack_images(std::span<const LabeledImage> images);
// [N,1,S,S] or [N,S,S] -> N tensors of [S,S]
std::vector<Tensor> unstack_images(const Tensor& batch);
// -> [N,8]
Tensor stack_conditions(std::span<const Condition> conditions);

// Contiguous [begin,end) ranges of at most `size` items.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count, std::size_t size);

}  // namespace dfb
