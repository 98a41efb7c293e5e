#include "penet/trainer.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "penet/errors.hpp"
#include "penet/tensor_utils.hpp"

namespace penet {

namespace {

constexpr std::uint64_t kAttributeSeedSalt = 0x5eed0a77ull;
constexpr std::uint64_t kClassifierSeedSalt = 0xc1a55ull;
constexpr std::uint64_t kExtractorSeed = 7;

torch::Tensor stack_images(const std::vector<Image>& images) {
  std::vector<torch::Tensor> t;
  t.reserve(images.size());
  for (const auto& im : images) t.push_back(to_tensor(im));
  return torch::stack(t);
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

}  // namespace

torch::Tensor condition_tensor(const Pose& pose, PoseFormat format) {
  return to_tensor(render_condition(pose, format, default_stroke_width(pose.canvas.width), kDefaultTau));
}

PartMasks masks_from(const torch::Tensor& stacked) {
  return {stacked.narrow(1, 0, 1), stacked.narrow(1, 1, 1), stacked.narrow(1, 2, 1)};
}

TensorCorpus tensorize(const Corpus& corpus, const TrainConfig& config, const AttributeEncoder& encoder) {
  if (corpus.records.empty()) throw ParameterError("trainer: the corpus is empty");
  TensorCorpus out;
  std::vector<Image> images, conditions;
  std::vector<torch::Tensor> masks;
  for (const auto& r : corpus.records) {
    if (r.image.width != config.image_size || r.image.height != config.image_size)
      throw ParameterError("trainer: corpus image size differs from the configuration");
    images.push_back(r.image);
    out.poses.push_back(r.pose);
    out.labels.push_back(r.attributes);
    masks.push_back(torch::cat({to_tensor(r.mask_head), to_tensor(r.mask_hand), to_tensor(r.mask_torso)}, 0));
  }
  out.images = stack_images(images);
  std::vector<torch::Tensor> ys;
  for (const auto& p : out.poses) ys.push_back(condition_tensor(p, config.pose_format));
  out.conditions = torch::stack(ys);
  out.masks = torch::stack(masks);
  out.attributes = encoder.encode_batch(out.labels);
  out.weights = weighted_sampler(corpus.manifest, config.attribute_keys);
  return out;
}

Trainer::Trainer(TrainConfig config, Corpus corpus) : config_(std::move(config)), corpus_(std::move(corpus)) {
  config_.validate();
  torch::manual_seed(config_.seed);
  encoder_ = std::make_unique<OrthogonalAttributeEncoder>(config_.attribute_keys, config_.seed ^ kAttributeSeedSalt);
  data_ = tensorize(corpus_, config_, *encoder_);
  model = PENet(config_.model_config());
  critic = MultiScaleDiscriminator(config_.critic_config());
  classifier = AttributeClassifier(config_.attribute_keys, config_.seed ^ kClassifierSeedSalt);
  if (config_.conditional && !config_.attribute_keys.empty() && config_.classifier_steps > 0)
    classifier->fit(data_.images, data_.labels, config_.classifier_steps);
  classifier->freeze();
  classifier->eval();
  extractor = std::make_unique<RandomConvExtractor>(kExtractorSeed);
  opt_g = std::make_unique<torch::optim::Adam>(
      model->parameters(), torch::optim::AdamOptions(config_.lr_g).betas({config_.beta1, config_.beta2}));
  opt_d = std::make_unique<torch::optim::Adam>(
      critic->parameters(), torch::optim::AdamOptions(config_.lr_d).betas({config_.beta1, config_.beta2}));
  generator = make_generator(config_.seed * 2 + 1);
  rng.seed(config_.seed);
}

Batch Trainer::make_batch(const std::vector<std::size_t>& indices) const {
  Batch b;
  b.indices = indices;
  std::vector<int64_t> idx(indices.begin(), indices.end());
  auto sel = torch::tensor(idx, torch::kInt64);
  b.x = data_.images.index_select(0, sel);
  b.y = data_.conditions.index_select(0, sel);
  b.masks = data_.masks.index_select(0, sel);
  b.a = data_.attributes.index_select(0, sel);
  for (auto i : indices) b.labels.push_back(data_.labels.at(i));
  return b;
}

Batch Trainer::sample_batch() {
  std::vector<std::size_t> indices;
  for (int i = 0; i < config_.batch_size; ++i) indices.push_back(draw_index(data_.weights, rng));
  Batch b = make_batch(indices);
  if (config_.augment) {
    std::vector<torch::Tensor> xs, ys, ms;
    for (auto i : indices) {
      const auto t = sample_transform(AugmentParams{}, rng);
      const FrameRecord f = apply_transform(corpus_.records.at(i), t);
      xs.push_back(to_tensor(f.image));
      ys.push_back(condition_tensor(f.pose, config_.pose_format));
      ms.push_back(torch::cat({to_tensor(f.mask_head), to_tensor(f.mask_hand), to_tensor(f.mask_torso)}, 0));
    }
    b.x = torch::stack(xs);
    b.y = torch::stack(ys);
    b.masks = torch::stack(ms);
  }
  return b;
}

std::string report_json(int64_t step, const LossReport& r) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["perc"] = r.perc;
  j["feat"] = r.feat;
  j["edge"] = r.edge;
  j["attrib"] = r.attrib;
  j["vae"] = r.vae;
  j["total"] = r.total;
  j["d_loss"] = r.d_loss;
  return j.dump();
}

ForwardPass Trainer::forward_pass(const Batch& b, torch::Generator& gen) {
  ForwardPass f;
  f.masks = resolve_overlaps(masks_from(b.masks));
  const bool hands = config_.hand_mask;
  auto features = model->encode_pose(b.y);
  f.posterior = model->encode_posterior(b.x, b.y, b.a, &features);
  auto z = reparameterize(f.posterior, gen);
  f.parts = model->decode(features, model->fuse_style(z, config_.conditional ? b.a : torch::Tensor()));

  f.target_head = b.x * f.masks.head;
  f.target_hand = b.x * f.masks.hand;
  f.target_torso = hands ? b.x * f.masks.torso : b.x * (f.masks.torso + f.masks.hand);
  const auto fake_hand = hands ? f.parts.hand : f.parts.torso * f.masks.hand;
  f.real = torch::cat({f.target_hand, f.target_head, f.target_torso}, 1);
  f.fake = torch::cat({fake_hand, f.parts.head, f.parts.torso}, 1);
  return f;
}

TotalLoss Trainer::generator_loss(const Batch& b, const ForwardPass& f, const LossWeights* weights) {
  std::vector<ScaleOutput> real_out;
  {
    torch::NoGradGuard guard;
    real_out = critic(b.y, f.real);
  }
  auto fake_out = critic(b.y, f.fake);
  LossComponents c;
  c.feat = feature_matching_loss(real_out, fake_out) + adversarial_losses(logits_of(real_out), logits_of(fake_out)).g_loss;
  c.perc = perceptual_loss(f.target_head, f.parts.head, *extractor) + perceptual_loss(f.target_torso, f.parts.torso, *extractor);
  c.edge = edge_loss(f.target_head, f.parts.head) + edge_loss(f.target_torso, f.parts.torso);
  if (config_.hand_mask) {
    c.perc = c.perc + perceptual_loss(f.target_hand, f.parts.hand, *extractor);
    c.edge = c.edge + edge_loss(f.target_hand, f.parts.hand);
  }
  if (config_.conditional && !config_.attribute_keys.empty())
    c.attrib = attribute_loss(classifier(compose(f.parts, f.masks)), attribute_targets(config_.attribute_keys, b.labels));
  c.vae = kl_loss(f.posterior);
  return total_generator_loss(c, weights ? *weights : config_.weights);
}

LossReport Trainer::step(const Batch& b) {
  model->train();
  critic->train();
  const auto f = forward_pass(b, generator);

  // critic update on detached fakes
  set_requires_grad(*critic, true);
  opt_d->zero_grad();
  auto d_real = critic(b.y, f.real);
  auto d_fake = critic(b.y, f.fake.detach());
  auto d_loss = adversarial_losses(logits_of(d_real), logits_of(d_fake)).d_loss;
  const double d_value = d_loss.item<double>();
  if (!std::isfinite(d_value)) {
    LossReport r;
    r.d_loss = d_value;
    abort_non_finite(b, r);
  }
  d_loss.backward();
  opt_d->step();

  // generator update against the refreshed critic
  set_requires_grad(*critic, false);
  opt_g->zero_grad();
  auto loss = generator_loss(b, f);
  loss.report.d_loss = d_value;
  if (!std::isfinite(loss.report.total)) abort_non_finite(b, loss.report);
  loss.total.backward();
  opt_g->step();
  if (config_.debug_checks) check_frozen();

  ++step_count_;
  history_.push_back(loss.report);
  return loss.report;
}

void Trainer::train(std::ostream* log, int max_steps) {
  const int64_t target = max_steps >= 0 ? std::min<int64_t>(config_.steps, step_count_ + max_steps) : config_.steps;
  while (step_count_ < target) {
    const auto report = step();
    if (log) *log << report_json(step_count_, report) << "\n" << std::flush;
  }
}

torch::Tensor Trainer::reconstruct(const Batch& b) {
  torch::NoGradGuard guard;
  model->eval();
  auto features = model->encode_pose(b.y);
  auto posterior = model->encode_posterior(b.x, b.y, b.a, &features);
  auto parts = model->decode(features, model->fuse_style(posterior.mu, config_.conditional ? b.a : torch::Tensor()));
  return compose(parts, masks_from(b.masks));
}

GeneratorOutput Trainer::synthesize(const torch::Tensor& y, const torch::Tensor& a, const torch::Tensor& z) {
  torch::NoGradGuard guard;
  model->eval();
  return model->generate(y, model->fuse_style(z, config_.conditional ? a : torch::Tensor()));
}

void Trainer::check_frozen() const {
  for (const auto& p : classifier->parameters()) {
    if (p.requires_grad() || (p.grad().defined() && p.grad().abs().sum().item<double>() != 0.0))
      throw TrainingError("attribute classifier received gradient");
  }
}

void Trainer::abort_non_finite(const Batch& b, const LossReport& r) const {
  nlohmann::ordered_json j;
  j["step"] = step_count_;
  j["indices"] = b.indices;
  j["report"] = nlohmann::json::parse(report_json(step_count_, r));
  j["x_range"] = {b.x.min().item<double>(), b.x.max().item<double>()};
  j["y_range"] = {b.y.min().item<double>(), b.y.max().item<double>()};
  const std::filesystem::path path = std::filesystem::temp_directory_path() /
                                     ("penet_nan_step" + std::to_string(step_count_) + ".json");
  std::ofstream(path) << j.dump(2) << "\n";
  throw TrainingError("non-finite loss at step " + std::to_string(step_count_) + "; batch dumped to " + path.string());
}

}  // namespace penet
