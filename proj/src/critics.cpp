#include "penet/critics.hpp"

#include "penet/errors.hpp"
#include "penet/tensor_utils.hpp"

namespace penet {

namespace F = torch::nn::functional;

void DiscriminatorConfig::validate() const {
  if (n_scales < 1) throw ParameterError("discriminator: n_scales must be >= 1");
  if (layers < 2) throw ParameterError("discriminator: need at least two layers");
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorConfig& config) {
  convs = register_module("convs", torch::nn::ModuleList());
  int64_t c = config.in_channels;
  for (int64_t i = 0; i < config.layers; ++i) {
    const bool last = i + 1 == config.layers;
    const int64_t out = last ? 1 : std::min(config.base_channels << i, config.max_channels);
    // two strided layers, then stride 1
    const int64_t stride = i < 2 ? 2 : 1;
    convs->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(c, out, 4).stride(stride).padding(stride == 2 ? 1 : 2)));
    c = out;
  }
}

ScaleOutput PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  ScaleOutput out;
  auto h = x;
  const size_t n = convs->size();
  for (size_t i = 0; i < n; ++i) {
    h = convs[i]->as<torch::nn::Conv2d>()->forward(h);
    if (i + 1 < n) h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.features.push_back(h);
  }
  out.logits = h;
  return out;
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(DiscriminatorConfig cfg) : config(cfg) {
  config.validate();
  scales = register_module("scales", torch::nn::ModuleList());
  for (int64_t s = 0; s < config.n_scales; ++s) scales->push_back(PatchDiscriminator(config));
}

std::vector<ScaleOutput> MultiScaleDiscriminatorImpl::forward(const torch::Tensor& y, const torch::Tensor& parts) {
  if (y.dim() != 4 || parts.dim() != 4 || y.size(0) != parts.size(0) || y.sizes().slice(2) != parts.sizes().slice(2))
    throw ParameterError("discriminate: pose and parts are not aligned");
  auto x = torch::cat({y, parts}, 1);
  if (x.size(1) != config.in_channels) throw ParameterError("discriminate: unexpected channel count");
  std::vector<ScaleOutput> out;
  for (size_t s = 0; s < scales->size(); ++s) {
    if (s > 0) x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(3).stride(2).padding(1).count_include_pad(false));
    out.push_back(scales[s]->as<PatchDiscriminator>()->forward(x));
  }
  return out;
}

torch::Tensor feature_matching_loss(const std::vector<ScaleOutput>& real, const std::vector<ScaleOutput>& fake) {
  if (real.size() != fake.size()) throw ParameterError("feature matching: scale count mismatch");
  torch::Tensor total;
  for (size_t s = 0; s < real.size(); ++s) {
    if (real[s].features.size() != fake[s].features.size())
      throw ParameterError("feature matching: layer count mismatch");
    for (size_t l = 0; l < real[s].features.size(); ++l) {
      const auto& r = real[s].features[l];
      const auto& f = fake[s].features[l];
      require_same_shape(r, f, "feature matching");
      auto term = sum_per_sample((f - r.detach()).abs()).mean();
      total = total.defined() ? total + term : term;
    }
  }
  if (!total.defined()) throw ParameterError("feature matching: empty feature lists");
  return total;
}

std::vector<torch::Tensor> logits_of(const std::vector<ScaleOutput>& outputs) {
  std::vector<torch::Tensor> logits;
  for (const auto& o : outputs) logits.push_back(o.logits);
  return logits;
}

AdversarialLosses adversarial_losses(const std::vector<torch::Tensor>& real_logits,
                                     const std::vector<torch::Tensor>& fake_logits) {
  if (real_logits.size() != fake_logits.size() || real_logits.empty())
    throw ParameterError("adversarial: scale count mismatch");
  torch::Tensor d, g;
  for (size_t s = 0; s < real_logits.size(); ++s) {
    // -log sigmoid(v) = softplus(-v), -log(1 - sigmoid(v)) = softplus(v)
    auto ds = F::softplus(-real_logits[s]).mean() + F::softplus(fake_logits[s]).mean();
    auto gs = F::softplus(-fake_logits[s]).mean();
    d = d.defined() ? d + ds : ds;
    g = g.defined() ? g + gs : gs;
  }
  const double n = static_cast<double>(real_logits.size());
  return {d / n, g / n};
}

namespace {

constexpr int64_t kHistogramBins = 4;  // per channel
constexpr double kHistogramSigma = 0.125;

// Soft RGB histogram over foreground pixels; Gaussian bin memberships keep it
// differentiable, so the attribute loss reaches the generator through it.
torch::Tensor colour_histogram(const torch::Tensor& x) {
  auto centres = (torch::arange(kHistogramBins, x.options()) + 0.5) / static_cast<double>(kHistogramBins);
  auto grid = torch::meshgrid({centres, centres, centres}, "ij");
  auto c = torch::stack({grid[0].flatten(), grid[1].flatten(), grid[2].flatten()}, 1);  // [K, 3]
  auto px = x.flatten(2).transpose(1, 2);                                                 // [B, HW, 3]
  auto weight = (x.sum(1) > 0.05).to(x.dtype()).flatten(1);                              // [B, HW]
  auto d2 = (px.unsqueeze(2) - c.view({1, 1, -1, 3})).pow(2).sum(-1);                    // [B, HW, K]
  auto member = torch::exp(-d2 / (2 * kHistogramSigma * kHistogramSigma));
  return (member * weight.unsqueeze(-1)).sum(1) / (weight.sum(1, true) + 1e-6);
}

}  // namespace

AttributeClassifierImpl::AttributeClassifierImpl(std::vector<AttributeKey> keys_, std::uint64_t seed)
    : keys(std::move(keys_)) {
  auto act = [] { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)); };
  auto conv = [](int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1));
  };
  backbone = register_module("backbone", torch::nn::Sequential(conv(3, 16), act(), conv(16, 32), act(), conv(32, 64), act()));
  heads = register_module("heads", torch::nn::ModuleList());
  for (AttributeKey key : keys)
    heads->push_back(torch::nn::Linear(64 + kHistogramBins * kHistogramBins * kHistogramBins,
                                        static_cast<int64_t>(attribute_vocabulary(key).size())));
  // deterministic initialisation independent of the global generator
  auto gen = make_generator(seed);
  torch::NoGradGuard guard;
  for (auto& p : parameters()) {
    const double bound = p.dim() > 1 ? std::sqrt(6.0 / static_cast<double>(p[0].numel())) : 0.0;
    p.copy_(torch::rand(p.sizes(), gen) * 2 * bound - bound);
  }
  for (auto& p : backbone->parameters()) p.set_requires_grad(false);
}

torch::Tensor AttributeClassifierImpl::features(const torch::Tensor& x) {
  // pooled conv features plus colour statistics of the figure
  auto f = backbone->forward(x).mean({2, 3});
  return torch::cat({f, colour_histogram(x)}, 1);
}

std::vector<torch::Tensor> AttributeClassifierImpl::forward(const torch::Tensor& x) {
  auto f = features(x);
  std::vector<torch::Tensor> out;
  for (const auto& head : *heads) out.push_back(head->as<torch::nn::Linear>()->forward(f));
  return out;
}

double AttributeClassifierImpl::fit(const torch::Tensor& images, const std::vector<SignerSpec>& labels, int steps) {
  auto targets = attribute_targets(keys, labels);
  std::vector<torch::Tensor> params;
  for (auto& p : heads->parameters()) {
    p.set_requires_grad(true);
    params.push_back(p);
  }
  torch::optim::Adam opt(params, torch::optim::AdamOptions(5e-2));
  torch::Tensor f;
  {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> parts;
    const auto typed = images.to(heads->parameters().front().scalar_type());
    for (int64_t i = 0; i < typed.size(0); i += 64) parts.push_back(features(typed.slice(0, i, i + 64)));
    f = torch::cat(parts);
  }
  for (int s = 0; s < steps; ++s) {
    opt.zero_grad();
    std::vector<torch::Tensor> logits;
    for (const auto& head : *heads) logits.push_back(head->as<torch::nn::Linear>()->forward(f));
    attribute_loss(logits, targets).backward();
    opt.step();
  }
  torch::NoGradGuard guard;
  double correct = 0.0, total = 0.0;
  for (size_t k = 0; k < heads->size(); ++k) {
    auto pred = heads[k]->as<torch::nn::Linear>()->forward(f).argmax(1);
    correct += pred.eq(targets[k]).sum().item<double>();
    total += static_cast<double>(targets[k].numel());
  }
  return total > 0 ? correct / total : 1.0;
}

void AttributeClassifierImpl::freeze() {
  for (auto& p : parameters()) {
    p.set_requires_grad(false);
    p.mutable_grad() = torch::Tensor();  // left over from fit()
  }
}

std::vector<torch::Tensor> attribute_targets(const std::vector<AttributeKey>& keys, const std::vector<SignerSpec>& labels) {
  std::vector<torch::Tensor> out;
  for (AttributeKey key : keys) {
    std::vector<int64_t> idx;
    for (const auto& l : labels) idx.push_back(attribute_index(key, l.label(key)));
    out.push_back(torch::tensor(idx, torch::kInt64));
  }
  return out;
}

torch::Tensor attribute_loss(const std::vector<torch::Tensor>& logits, const std::vector<torch::Tensor>& targets) {
  if (logits.size() != targets.size()) throw ParameterError("attribute loss: key count mismatch");
  torch::Tensor total = torch::zeros({});
  for (size_t k = 0; k < logits.size(); ++k) {
    if (targets[k].numel() > 0 && (targets[k].min().item<int64_t>() < 0 || targets[k].max().item<int64_t>() >= logits[k].size(1)))
      throw VocabularyError("attribute loss: label outside the vocabulary");
    total = total + F::cross_entropy(logits[k], targets[k]);
  }
  return total;
}

}  // namespace penet
