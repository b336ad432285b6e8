#pragma once

#include <filesystem>
#include <stdexcept>

#include "attrcenter/autodiff/tensor.hpp"

namespace attrcenter::synth {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit PNG; H x W tensors become grayscale, 3 x H x W become RGB.
void write_png(const std::filesystem::path& path, const ad::Tensor& img);
/// Inverse of write_png. Values come back as multiples of 1/255.
ad::Tensor read_png(const std::filesystem::path& path);

}  // namespace attrcenter::synth
