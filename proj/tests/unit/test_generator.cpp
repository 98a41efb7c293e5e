#include <doctest.h>

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "penet/errors.hpp"
#include "penet/generator.hpp"
#include "penet/tensor_utils.hpp"

using namespace penet;

namespace {

PENetConfig small_config() {
  PENetConfig c;
  c.unet = UNetConfig{4, 8, 32, 3, 32};
  c.latent_dim = 8;
  c.style_dim = 32;
  c.heads = 4;
  c.fuse_layers = 1;
  c.posterior.dim = 32;
  c.posterior.layers = 1;
  c.posterior.widths = {8, 16};
  return c;
}

SignerSpec spec(std::string tone, std::string gender = "A", std::string eth = "E1") {
  SignerSpec s;
  s.skin_tone = std::move(tone);
  s.gender_proxy = std::move(gender);
  s.ethnicity_proxy = std::move(eth);
  return s;
}

PartMasks random_disjoint_masks(std::mt19937_64& rng, int64_t size) {
  // each pixel picks one of {head, hand, torso, background}
  std::uniform_int_distribution<int> pick(0, 3);
  PartMasks m{torch::zeros({1, 1, size, size}), torch::zeros({1, 1, size, size}), torch::zeros({1, 1, size, size})};
  auto h = m.head.accessor<float, 4>(), d = m.hand.accessor<float, 4>(), t = m.torso.accessor<float, 4>();
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) switch (pick(rng)) {
        case 0: h[0][0][y][x] = 1; break;
        case 1: d[0][0][y][x] = 1; break;
        case 2: t[0][0][y][x] = 1; break;
        default: break;
      }
  return m;
}

}  // namespace

TEST_CASE("orthogonal attribute stub") {
  OrthogonalAttributeEncoder enc({kAttributeKeys.begin(), kAttributeKeys.end()}, 42);
  auto a = enc.encode(spec("tone1"));
  CHECK(a.sizes() == torch::IntArrayRef({512}));
  CHECK(torch::equal(a, enc.encode(spec("tone1"))));
  const std::vector<SignerSpec> others = {spec("tone2"), spec("tone1", "B"), spec("tone1", "A", "E2"), spec("tone4", "B", "E2")};
  for (const auto& o : others) {
    auto b = enc.encode(o);
    const double cos = (a * b).sum().item<double>() / (a.norm() * b.norm()).item<double>();
    CHECK(std::abs(cos) < 0.5);
  }
  CHECK_THROWS_AS(enc.encode(spec("tone9")), VocabularyError);
  // same seed, same embedding
  OrthogonalAttributeEncoder again({kAttributeKeys.begin(), kAttributeKeys.end()}, 42);
  CHECK(torch::equal(again.encode(spec("tone3")), enc.encode(spec("tone3"))));
  CHECK(enc.encode_batch({spec("tone1"), spec("tone2")}).sizes() == torch::IntArrayRef({2, 512}));
}

TEST_CASE("table attribute adapter") {
  const auto path = std::filesystem::temp_directory_path() / "penet_attr_table.json";
  {
    std::ofstream out(path);
    out << R"({"keys": ["skin_tone"], "embeddings": {"tone1": [)";
    for (int i = 0; i < 512; ++i) out << (i ? "," : "") << (i == 0 ? 1.0 : 0.0);
    out << "]}}";
  }
  auto enc = TableAttributeEncoder::from_json(path);
  CHECK(enc->encode(spec("tone1"))[0].item<float>() == 1.0f);
  CHECK_THROWS_AS(enc->encode(spec("tone2")), VocabularyError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(TableAttributeEncoder::from_json(path), IoError);
}

TEST_CASE("style fusion") {
  torch::manual_seed(0);
  PENet net(small_config());
  auto z1 = torch::randn({1, 8}), z2 = torch::randn({1, 8});
  auto a1 = torch::randn({1, 512}), a2 = torch::randn({1, 512});
  CHECK((net->fuse_style(z1, a1) - net->fuse_style(z1, a2)).abs().max().item<double>() > 1e-6);
  CHECK((net->fuse_style(z1, a1) - net->fuse_style(z2, a1)).abs().max().item<double>() > 1e-6);
  CHECK_THROWS_AS(net->fuse_style(torch::randn({1, 7}), a1), ParameterError);
  CHECK_THROWS_AS(net->fuse_style(z1, torch::randn({1, 100})), ParameterError);

  zero_parameters(*net->style_fuse->layers);
  auto za = net->fuse_style(z1, a1);
  CHECK(torch::equal(za, net->style_fuse->cls_token.view({1, -1})));

  auto cfg = small_config();
  cfg.conditional = false;
  PENet uncond(cfg);
  CHECK(!uncond->a_proj);
  CHECK(uncond->fuse_style(z1, {}).sizes() == torch::IntArrayRef({1, 32}));
}

TEST_CASE("generation shapes, determinism and style dependence") {
  torch::manual_seed(1);
  PENet net(small_config());
  net->eval();
  auto y = torch::rand({2, 3, 32, 32});
  auto s1 = torch::randn({2, 32}), s2 = torch::randn({2, 32});
  auto a = net->generate(y, s1), b = net->generate(y, s1), c = net->generate(y, s2);
  for (const auto* t : {&a.head, &a.hand, &a.torso}) {
    CHECK(t->sizes() == torch::IntArrayRef({2, 3, 32, 32}));
    CHECK(t->min().item<double>() >= 0.0);
    CHECK(t->max().item<double>() <= 1.0);
  }
  CHECK(torch::equal(a.head, b.head));
  CHECK(torch::equal(a.torso, b.torso));
  CHECK((a.head - c.head).abs().mean().item<double>() > 0.0);
  CHECK((a.hand - c.hand).abs().mean().item<double>() > 0.0);
  CHECK_THROWS_AS(net->generate(torch::rand({1, 3, 16, 16}), s1.slice(0, 0, 1)), ParameterError);
}

TEST_CASE("head-only loss reaches the shared encoder") {
  torch::manual_seed(2);
  PENet net(small_config());
  auto out = net->generate(torch::rand({1, 3, 32, 32}), torch::randn({1, 32}));
  out.head.mean().backward();
  double enc = 0, torso = 0;
  for (auto& p : net->encoder->parameters())
    if (p.grad().defined()) enc += p.grad().norm().item<double>();
  for (auto& p : net->torso_decoder->parameters())
    if (p.grad().defined()) torso += p.grad().norm().item<double>();
  CHECK(enc > 0.0);
  CHECK(torso == 0.0);
}

TEST_CASE("decoder variants") {
  torch::manual_seed(3);
  auto cfg = small_config();
  cfg.hand_decoder = false;
  PENet no_hand(cfg);
  auto out = no_hand->generate(torch::rand({1, 3, 32, 32}), torch::randn({1, 32}));
  CHECK(out.hand.is_same(out.torso));

  cfg = small_config();
  cfg.share_psi = true;
  PENet shared(cfg);
  PENet plain(small_config());
  // no parameter appears twice, and sharing removes two decoders' worth of aggregators
  std::set<const void*> seen;
  for (auto& p : shared->parameters()) CHECK(seen.insert(p.unsafeGetTensorImpl()).second);
  CHECK(shared->parameters().size() < plain->parameters().size());

  for (auto psi : {PsiMode::kConv, PsiMode::kNone}) {
    cfg = small_config();
    cfg.psi = psi;
    PENet net(cfg);
    CHECK(net->generate(torch::rand({1, 3, 32, 32}), torch::randn({1, 32})).head.sizes() ==
          torch::IntArrayRef({1, 3, 32, 32}));
  }
}

TEST_CASE("shared scheme ties the posterior to the generator encoder") {
  auto x = torch::rand({1, 3, 32, 32}), y = torch::rand({1, 3, 32, 32}), a = torch::randn({1, 512});
  for (auto scheme : {FusionScheme::kShared, FusionScheme::kSeparate}) {
    torch::manual_seed(4);
    auto cfg = small_config();
    cfg.posterior.scheme = scheme;
    PENet net(cfg);
    auto before = net->encode_posterior(x, y, a).mu;
    {
      torch::NoGradGuard g;
      for (auto& p : net->encoder->parameters()) p.add_(torch::randn_like(p) * 0.1);
    }
    auto after = net->encode_posterior(x, y, a).mu;
    const bool changed = !torch::equal(before, after);
    CHECK(changed == (scheme == FusionScheme::kShared));
  }
}

TEST_CASE("attribute upsampler") {
  torch::manual_seed(5);
  AttributeUpsampler up(64);
  auto a = torch::randn({2, 512});
  auto m = up->forward(a);
  CHECK(m.sizes() == torch::IntArrayRef({2, 3, 64, 64}));
  CHECK((m[0] - m[1]).abs().max().item<double>() > 1e-6);
  int linears = 0;
  for (auto& child : up->mlp->children()) linears += child->as<torch::nn::Linear>() != nullptr;
  CHECK(linears == 4);
  zero_parameters(*up);
  CHECK(up->forward(a).abs().max().item<double>() == 0.0);
  CHECK_THROWS_AS(AttributeUpsampler(60), ParameterError);
}

TEST_CASE("composition closed cases") {
  auto parts = GeneratorOutput{torch::full({1, 3, 2, 2}, 0.25), torch::full({1, 3, 2, 2}, 0.5),
                               torch::full({1, 3, 2, 2}, 0.75)};
  auto zeros = torch::zeros({1, 1, 2, 2});
  CHECK(compose(parts, {zeros, zeros, zeros}).abs().max().item<double>() == 0.0);

  // head and hand claim the same top-left pixel: the hand wins
  auto head = torch::zeros({1, 1, 2, 2}), hand = torch::zeros({1, 1, 2, 2}), torso = torch::ones({1, 1, 2, 2});
  head[0][0][0][0] = 1;
  hand[0][0][0][0] = 1;
  head[0][0][0][1] = 1;
  auto x = compose(parts, {head, hand, torso});
  CHECK(x[0][0][0][0].item<float>() == 0.5f);
  CHECK(x[0][0][0][1].item<float>() == 0.25f);
  CHECK(x[0][0][1][1].item<float>() == 0.75f);
  CHECK_THROWS_AS(compose(parts, {torch::zeros({1, 1, 3, 3}), hand, torso}), ParameterError);
}

TEST_CASE("composition equals piecewise assembly") {
  std::mt19937_64 rng(7);
  torch::manual_seed(7);
  for (int trial = 0; trial < 200; ++trial) {
    GeneratorOutput parts{torch::rand({1, 3, 8, 8}), torch::rand({1, 3, 8, 8}), torch::rand({1, 3, 8, 8})};
    auto m = random_disjoint_masks(rng, 8);
    auto x = compose(parts, m);
    CHECK(torch::equal(x * m.head, parts.head * m.head));
    CHECK(torch::equal(x * m.hand, parts.hand * m.hand));
    CHECK(torch::equal(x * m.torso, parts.torso * m.torso));
  }
}
