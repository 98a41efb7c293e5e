#include <doctest.h>

#include <torch/torch.h>

#include "penet/errors.hpp"
#include "penet/nnblocks.hpp"

using namespace penet;

namespace {

// Central-difference gradient check of sum(f(x) * w) for a random projection w.
double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x) {
  x = x.to(torch::kFloat64).detach().requires_grad_(true);
  auto y = f(x);
  auto w = torch::randn_like(y);
  auto analytic = torch::autograd::grad({(y * w).sum()}, {x})[0];
  torch::NoGradGuard guard;
  auto flat = x.detach().clone().flatten();
  auto numeric = torch::zeros_like(flat);
  const double h = 1e-5;
  // only probe a subset of coordinates to keep the check fast
  const int64_t stride = std::max<int64_t>(1, flat.numel() / 40);
  double worst = 0.0;
  for (int64_t i = 0; i < flat.numel(); i += stride) {
    auto xp = flat.clone(), xm = flat.clone();
    xp[i] += h;
    xm[i] -= h;
    const double fp = (f(xp.view(x.sizes())) * w).sum().item<double>();
    const double fm = (f(xm.view(x.sizes())) * w).sum().item<double>();
    const double num = (fp - fm) / (2 * h);
    const double ana = analytic.flatten()[i].item<double>();
    worst = std::max(worst, std::abs(num - ana) / std::max(1e-6, std::abs(num) + std::abs(ana)));
  }
  return worst;
}

}  // namespace

TEST_CASE("patch embed token counts follow floor division") {
  torch::manual_seed(0);
  PatchEmbed a(3, 4, 4, 4, 8);
  CHECK(a->forward(torch::randn({2, 3, 4, 4})).sizes() == torch::IntArrayRef({2, 2, 8}));
  PatchEmbed b(3, 6, 6, 4, 8);
  CHECK(b->num_patches() == 1);
  CHECK(b->forward(torch::randn({1, 3, 6, 6})).size(1) == 2);
  PatchEmbed c(3, 16, 12, 4, 8);
  CHECK(c->num_patches() == 12);
  CHECK_THROWS_AS(PatchEmbed(3, 4, 4, 5, 8), ParameterError);
  CHECK_THROWS_AS(a->forward(torch::randn({1, 3, 8, 8})), ParameterError);
}

TEST_CASE("patch embed of a zero image leaves only the class token") {
  torch::manual_seed(1);
  PatchEmbed pe(3, 8, 8, 4, 16);
  {
    torch::NoGradGuard g;
    pe->pos_embed.zero_();
  }
  auto seq = pe->forward(torch::zeros({1, 3, 8, 8}));
  CHECK(seq.slice(1, 1).abs().max().item<float>() == 0.0f);
  CHECK(torch::equal(seq.select(1, 0), pe->cls_token.select(1, 0)));
}

TEST_CASE("patch token equals the projection of its patch") {
  torch::manual_seed(2);
  PatchEmbed pe(2, 8, 8, 4, 5, false);
  auto x = torch::randn({1, 2, 8, 8});
  auto seq = pe->forward(x);
  // token for patch (row 1, col 0) is index 1 + 2
  auto patch = x.index({0, torch::indexing::Slice(), torch::indexing::Slice(4, 8), torch::indexing::Slice(0, 4)});
  auto expected = (pe->proj->weight * patch.unsqueeze(0)).sum({1, 2, 3});
  CHECK(torch::allclose(seq[0][3], expected, 1e-5, 1e-5));
}

TEST_CASE("zeroed transformer layer is a pure residual") {
  torch::manual_seed(3);
  TransformerLayer layer(16, 4);
  zero_parameters(*layer);
  auto z = torch::randn({2, 5, 16});
  CHECK(torch::equal(layer->forward(z), z));
}

TEST_CASE("transformer layer is permutation equivariant") {
  torch::manual_seed(4);
  TransformerLayer layer(16, 4);
  auto z = torch::randn({1, 6, 16});
  auto perm = torch::tensor({3, 0, 5, 1, 4, 2});
  auto a = layer->forward(z).index_select(1, perm);
  auto b = layer->forward(z.index_select(1, perm));
  CHECK(torch::allclose(a, b, 1e-5, 1e-6));
}

TEST_CASE("single-token transformer matches a hand evaluation") {
  torch::manual_seed(5);
  TransformerLayer layer(8, 2);
  auto z = torch::randn({1, 1, 8});
  auto ln = [](const torch::Tensor& v, torch::nn::LayerNorm& norm) {
    auto m = v.mean(-1, true);
    auto var = (v - m).pow(2).mean(-1, true);
    return (v - m) / torch::sqrt(var + 1e-5) * norm->weight + norm->bias;
  };
  auto lin = [](const torch::Tensor& v, torch::nn::Linear& l) { return torch::matmul(v, l->weight.t()) + l->bias; };
  // softmax over one key is 1, so attention is out(value(.))
  auto y = lin(lin(ln(z, layer->norm1), layer->attn->value), layer->attn->out) + z;
  auto h = lin(ln(y, layer->norm2), layer->fc1);
  auto expected = lin(0.5 * h * (1 + torch::erf(h / std::sqrt(2.0))), layer->fc2) + y;
  CHECK(torch::allclose(layer->forward(z), expected, 1e-5, 1e-5));
}

TEST_CASE("transformer output stays finite") {
  torch::manual_seed(6);
  TransformerLayer layer(16, 4);
  torch::NoGradGuard g;
  bool finite = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const double scale = std::pow(10.0, (trial % 7) - 3);
    auto out = layer->forward(torch::randn({1, 1 + trial % 9, 16}) * scale);
    finite = finite && torch::isfinite(out).all().item<bool>();
  }
  CHECK(finite);
}

TEST_CASE("mha fuse is symmetric in its inputs and accepts an empty second sequence") {
  torch::manual_seed(7);
  MhaFuse fuse(16, 4);
  auto a = torch::randn({2, 3, 16}), b = torch::randn({2, 4, 16});
  CHECK(fuse->forward(a, b).sizes() == torch::IntArrayRef({2, 16}));
  CHECK(torch::allclose(fuse->forward(a, b), fuse->forward(b, a), 1e-5, 1e-6));
  CHECK(torch::allclose(fuse->forward(a), fuse->forward(a, torch::empty({2, 0, 16})), 0, 0));
  CHECK(fuse->layers->size() == 2);
  CHECK_THROWS_AS(fuse->forward(a, torch::randn({2, 3, 8})), ParameterError);
  CHECK_THROWS_AS(fuse->forward(torch::randn({2, 3, 8})), ParameterError);
}

TEST_CASE("conv fuse keeps spatial size and uses a 0.2 leaky slope") {
  torch::manual_seed(8);
  ConvFuse fuse(3, 2, 4);
  auto a = torch::randn({1, 3, 7, 9}), b = torch::randn({1, 2, 7, 9});
  auto out = fuse->forward(a, b);
  CHECK(out.sizes() == torch::IntArrayRef({1, 4, 7, 9}));
  auto pre = fuse->conv->forward(torch::cat({a, b}, 1));
  auto neg = pre < 0;
  CHECK(torch::allclose(out.masked_select(neg), 0.2 * pre.masked_select(neg)));
  CHECK(torch::equal(out.masked_select(~neg), pre.masked_select(~neg)));
  zero_parameters(*fuse);
  CHECK(fuse->forward(a, b).abs().max().item<float>() == 0.0f);
  CHECK_THROWS_AS(fuse->forward(a, torch::randn({1, 2, 7, 8})), ParameterError);
}

TEST_CASE("psi modulation closed forms") {
  torch::manual_seed(9);
  PsiModulate psi(6, 10);
  auto f = torch::randn({2, 6, 5, 5}) * 3 + 1;
  auto za = torch::randn({2, 10});
  zero_parameters(*psi);
  CHECK(torch::allclose(psi->forward(f, za), instance_normalize(f)));
  {
    torch::NoGradGuard g;
    psi->scale->bias.fill_(1.0);
  }
  CHECK(torch::allclose(psi->forward(f, za), 2 * instance_normalize(f), 1e-5, 1e-6));

  PsiModulate fresh(6, 10);
  auto a = fresh->forward(f, za), b = fresh->forward(f, torch::randn({2, 10}));
  CHECK(a.sizes() == f.sizes());
  CHECK_FALSE(torch::allclose(a, b));
}

TEST_CASE("psi conv variant preserves the feature shape") {
  PsiConv psi(6, 10);
  auto f = torch::randn({2, 6, 5, 5});
  CHECK(psi->forward(f, torch::randn({2, 10})).sizes() == f.sizes());
  SkipMixer none(PsiMode::kNone, 6, 10);
  CHECK(torch::equal(none->forward(f, torch::randn({2, 10})), f));
}

TEST_CASE("unet levels mirror each other") {
  torch::manual_seed(10);
  for (int64_t levels : {2, 3, 5}) {
    UNetConfig cfg;
    cfg.levels = levels;
    cfg.base_channels = 4;
    cfg.max_channels = 16;
    cfg.image_size = 32;
    UNetEncoder enc(cfg);
    auto x = torch::rand({2, 3, 32, 32});
    auto feats = enc->forward(x);
    REQUIRE(feats.levels.size() == static_cast<size_t>(levels));
    for (int64_t i = 0; i < levels; ++i) {
      CHECK(feats.levels[i].size(2) == cfg.spatial(i));
      CHECK(feats.levels[i].size(1) == cfg.channels(i));
    }
    CHECK(feats.bottleneck.size(2) == cfg.spatial(levels));
    for (PsiMode mode : {PsiMode::kModulate, PsiMode::kConv, PsiMode::kNone}) {
      for (bool skips : {true, false}) {
        DecoderOptions opts;
        opts.psi = mode;
        opts.skips = skips;
        opts.style_dim = 12;
        UNetDecoder dec(cfg, opts);
        std::vector<torch::Tensor> outs;
        auto y = dec->forward(feats, torch::randn({2, 12}), &outs);
        CHECK(y.sizes() == x.sizes());
        CHECK(y.min().item<float>() >= 0.0f);
        CHECK(y.max().item<float>() <= 1.0f);
        // decoder step L-1-i lands on encoder level i
        for (int64_t i = 0; i < levels; ++i)
          CHECK(outs[levels - 1 - i].sizes().slice(2) == feats.levels[i].sizes().slice(2));
      }
    }
  }
  UNetConfig bad;
  bad.image_size = 48;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("finite-difference gradient checks") {
  torch::manual_seed(11);
  torch::set_default_dtype(caffe2::TypeMeta::Make<double>());
  const double tol = 1e-3;

  PatchEmbed pe(2, 8, 8, 4, 6);
  CHECK(gradient_error([&](const torch::Tensor& x) { return pe->forward(x); }, torch::randn({1, 2, 8, 8})) < tol);

  TransformerLayer layer(8, 2);
  CHECK(gradient_error([&](const torch::Tensor& x) { return layer->forward(x); }, torch::randn({1, 4, 8})) < tol);

  MhaFuse fuse(8, 2);
  auto b = torch::randn({1, 2, 8});
  CHECK(gradient_error([&](const torch::Tensor& x) { return fuse->forward(x, b); }, torch::randn({1, 3, 8})) < tol);

  ConvFuse cf(2, 2, 3);
  auto other = torch::randn({1, 2, 5, 5});
  CHECK(gradient_error([&](const torch::Tensor& x) { return cf->forward(x, other); }, torch::randn({1, 2, 5, 5})) < tol);

  PsiModulate pm(3, 4);
  auto za = torch::randn({1, 4});
  CHECK(gradient_error([&](const torch::Tensor& x) { return pm->forward(x, za); }, torch::randn({1, 3, 4, 4})) < tol);
  auto feat = torch::randn({1, 3, 4, 4});
  CHECK(gradient_error([&](const torch::Tensor& s) { return pm->forward(feat, s); }, za) < tol);

  PsiConv pc(3, 4, 2);
  CHECK(gradient_error([&](const torch::Tensor& x) { return pc->forward(x, za); }, torch::randn({1, 3, 4, 4})) < tol);

  UNetConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 2;
  cfg.max_channels = 4;
  cfg.image_size = 8;
  UNetEncoder enc(cfg);
  UNetDecoder dec(cfg, DecoderOptions{PsiMode::kModulate, true, 4, 3});
  CHECK(gradient_error([&](const torch::Tensor& x) { return dec->forward(enc->forward(x), za); },
                       torch::rand({1, 3, 8, 8})) < tol);

  torch::set_default_dtype(caffe2::TypeMeta::Make<float>());
}
