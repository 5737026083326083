#include "dfb/batch.hpp"

#include <algorithm>

namespace dfb {

Tensor stack_images(std::span<const Tensor> images)
{
    if (images.empty()) throw ShapeError("stack_images: empty batch");
    const Shape& s = images.front().shape();
    if (s.size() != 2) throw ShapeError("stack_images: expected [H,W] images, got " + shape_str(s));
    Tensor out({images.size(), 1, s[0], s[1]});
    const std::size_t plane = s[0] * s[1];
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].shape() != s) throw ShapeError("stack_images: mixed image sizes");
        std::copy(images[i].data().begin(), images[i].data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
    }
    return out;
}

Tensor stack_images(std::span<const LabeledImage> images)
{
    std::vector<Tensor> pixels;
    pixels.reserve(images.size());
    for (const auto& im : images) pixels.push_back(im.pixels);
    return stack_images(pixels);
}

std::vector<Tensor> unstack_images(const Tensor& batch)
{
    const Shape& s = batch.shape();
    if (!(s.size() == 4 && s[1] == 1) && s.size() != 3) {
        throw ShapeError("unstack_images: expected [N,1,H,W], got " + shape_str(s));
    }
    const std::size_t n = s[0], h = s[s.size() - 2], w = s[s.size() - 1];
    std::vector<Tensor> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto first = batch.data().begin() + static_cast<std::ptrdiff_t>(i * h * w);
        out.emplace_back(Shape{h, w}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(h * w)));
    }
    return out;
}

Tensor stack_conditions(std::span<const Condition> conditions)
{
    Tensor out({conditions.size(), kConditionDim});
    for (std::size_t i = 0; i < conditions.size(); ++i)
        for (std::size_t j = 0; j < kConditionDim; ++j) out[i * kConditionDim + j] = conditions[i][j];
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count, std::size_t size)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < count; b += size) out.emplace_back(b, std::min(count, b + size));
    return out;
}

}  // namespace dfb
