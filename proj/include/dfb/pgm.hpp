#pragma once

#include "dfb/errors.hpp"
#include "dfb/tensor.hpp"

#include <string>
#include <string_view>

namespace dfb {

// Binary P5, maxval 255; pixel v in [0,1] stored as floor(255 v + 0.5).
std::string write_pgm(const Tensor& image);
// Returns [H,W] with values q/255.
Tensor read_pgm(std::string_view bytes);

void write_pgm_file(const Tensor& image, const std::string& path);
Tensor read_pgm_file(const std::string& path);

// Quantize through the 8-bit representation without touching disk.
Tensor quantize_8bit(const Tensor& image);

}  // namespace dfb
