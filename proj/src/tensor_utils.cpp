#include "penet/tensor_utils.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cstring>

#include "penet/errors.hpp"

namespace penet {

torch::Tensor to_tensor(const Image& image) {
  auto hwc = torch::from_blob(const_cast<float*>(image.pixels.data()),
                              {image.height, image.width, image.channels}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous().clone();
}

Image to_image(const torch::Tensor& t) {
  torch::Tensor chw = t.dim() == 4 ? t.squeeze(0) : t;
  if (chw.dim() != 3) throw ParameterError("to_image: expected a CHW tensor");
  chw = chw.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
  Image image(static_cast<int>(chw.size(1)), static_cast<int>(chw.size(0)), static_cast<int>(chw.size(2)));
  std::memcpy(image.pixels.data(), chw.data_ptr<float>(), image.pixels.size() * sizeof(float));
  return image;
}

torch::Generator make_generator(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

std::string generator_state(torch::Generator gen) {
  std::lock_guard<std::mutex> lock(gen.mutex());
  const torch::Tensor state = gen.get_state();
  return std::string(reinterpret_cast<const char*>(state.data_ptr<std::uint8_t>()), state.numel());
}

void set_generator_state(torch::Generator& gen, const std::string& bytes) {
  auto state = torch::empty({static_cast<std::int64_t>(bytes.size())}, torch::kUInt8);
  std::memcpy(state.data_ptr<std::uint8_t>(), bytes.data(), bytes.size());
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(state);
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ParameterError(std::string(what) + ": shape mismatch");
}

torch::Tensor sum_per_sample(const torch::Tensor& t) { return t.flatten(1).sum(1); }

}  // namespace penet
