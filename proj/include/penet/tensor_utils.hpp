#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include "penet/image.hpp"

namespace penet {

// HWC image -> CHW float tensor.
torch::Tensor to_tensor(const Image& image);
// CHW (or 1xCxHxW) tensor -> HWC image, values copied as float.
Image to_image(const torch::Tensor& chw);

// Deterministic CPU generator for tensor sampling.
torch::Generator make_generator(std::uint64_t seed);
// Opaque byte copy of a CPU generator's state and its inverse.
std::string generator_state(torch::Generator gen);
void set_generator_state(torch::Generator& gen, const std::string& bytes);

// Spatial shape check helper: throws ParameterError with `what` on mismatch.
void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what);

// Per-sample sum over all but the leading dimension.
torch::Tensor sum_per_sample(const torch::Tensor& t);

}  // namespace penet
