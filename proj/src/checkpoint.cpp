#include <cstring>
#include <fstream>
#include <sstream>

#include "penet/errors.hpp"
#include "penet/tensor_utils.hpp"
#include "penet/trainer.hpp"

namespace penet {

namespace {

constexpr char kMagic[8] = {'P', 'E', 'N', 'E', 'T', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(const T& v) { out_.write(reinterpret_cast<const char*>(&v), sizeof(T)); }
  void bytes(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    pod<std::int32_t>(static_cast<std::int32_t>(c.scalar_type()));
    pod<std::uint32_t>(static_cast<std::uint32_t>(c.dim()));
    for (auto d : c.sizes()) pod<std::int64_t>(d);
    out_.write(static_cast<const char*>(c.data_ptr()), static_cast<std::streamsize>(c.nbytes()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) fail("truncated");
    return v;
  }
  std::string bytes() {
    const auto n = pod<std::uint64_t>();
    if (n > (1ull << 32)) fail("corrupt length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated");
    return s;
  }
  torch::Tensor tensor() {
    const auto type = static_cast<torch::ScalarType>(pod<std::int32_t>());
    const auto dims = pod<std::uint32_t>();
    if (dims > 8) fail("corrupt tensor header");
    std::vector<int64_t> sizes;
    for (std::uint32_t i = 0; i < dims; ++i) sizes.push_back(pod<std::int64_t>());
    auto t = torch::empty(sizes, torch::TensorOptions().dtype(type));
    in_.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    if (!in_) fail("truncated");
    return t;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("checkpoint " + path_.string() + ": " + what);
  }

 private:
  std::istream& in_;
  std::filesystem::path path_;
};

void write_module(Writer& w, const torch::nn::Module& module) {
  const auto params = module.named_parameters();
  const auto buffers = module.named_buffers();
  w.pod<std::uint64_t>(params.size() + buffers.size());
  for (const auto& p : params) {
    w.bytes(p.key());
    w.tensor(p.value());
  }
  for (const auto& b : buffers) {
    w.bytes(b.key());
    w.tensor(b.value());
  }
}

void read_module(Reader& r, torch::nn::Module& module) {
  auto params = module.named_parameters();
  auto buffers = module.named_buffers();
  const auto n = r.pod<std::uint64_t>();
  if (n != params.size() + buffers.size()) r.fail("parameter count differs from the model");
  torch::NoGradGuard guard;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name = r.bytes();
    auto value = r.tensor();
    torch::Tensor* target = params.find(name);
    if (!target) target = buffers.find(name);
    if (!target) r.fail("unknown tensor '" + name + "'");
    if (target->sizes() != value.sizes()) r.fail("shape mismatch for '" + name + "'");
    target->copy_(value);
  }
}

void write_adam(Writer& w, const torch::optim::Adam& opt) {
  auto& state = const_cast<torch::optim::Adam&>(opt).state();
  std::vector<torch::Tensor> params;
  for (const auto& g : opt.param_groups())
    for (const auto& p : g.params()) params.push_back(p);
  w.pod<std::uint64_t>(params.size());
  for (const auto& p : params) {
    const auto it = state.find(p.unsafeGetTensorImpl());
    if (it == state.end()) {
      w.pod<std::uint8_t>(0);
      continue;
    }
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    w.pod<std::uint8_t>(1);
    w.pod<std::int64_t>(s.step());
    w.tensor(s.exp_avg());
    w.tensor(s.exp_avg_sq());
  }
}

void read_adam(Reader& r, torch::optim::Adam& opt) {
  std::vector<torch::Tensor> params;
  for (const auto& g : opt.param_groups())
    for (const auto& p : g.params()) params.push_back(p);
  if (r.pod<std::uint64_t>() != params.size()) r.fail("optimiser parameter count differs");
  auto& state = opt.state();
  state.clear();
  for (const auto& p : params) {
    if (r.pod<std::uint8_t>() == 0) continue;
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(r.pod<std::int64_t>());
    s->exp_avg(r.tensor());
    s->exp_avg_sq(r.tensor());
    if (s->exp_avg().sizes() != p.sizes()) r.fail("optimiser state shape mismatch");
    state[p.unsafeGetTensorImpl()] = std::move(s);
  }
}

struct Header {
  std::uint64_t hash = 0;
  std::string config_text;
};

Header read_header(Reader& r) {
  char magic[8];
  for (char& c : magic) c = r.pod<char>();
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint file");
  if (r.pod<std::uint32_t>() != kVersion) r.fail("unsupported version");
  Header h;
  h.hash = r.pod<std::uint64_t>();
  h.config_text = r.bytes();
  if (fnv1a64(h.config_text) != h.hash) r.fail("config hash does not match the stored config (file tampered?)");
  return h;
}

}  // namespace

void save_checkpoint(const Trainer& t, const std::filesystem::path& path) {
  std::ostringstream buf(std::ios::binary);
  Writer w(buf);
  buf.write(kMagic, sizeof kMagic);
  w.pod<std::uint32_t>(kVersion);
  const std::string text = t.config_.serialize();
  w.pod<std::uint64_t>(fnv1a64(text));
  w.bytes(text);
  w.pod<std::int64_t>(t.step_count_);
  write_module(w, *t.model);
  write_module(w, *t.critic);
  write_adam(w, *t.opt_g);
  write_adam(w, *t.opt_d);
  w.bytes(generator_state(t.generator));
  std::ostringstream rng;
  rng << t.rng;
  w.bytes(rng.str());
  w.pod<std::uint64_t>(t.history_.size());
  for (const auto& h : t.history_)
    for (double v : {h.perc, h.feat, h.edge, h.attrib, h.vae, h.total, h.d_loss}) w.pod<double>(v);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot write checkpoint");
  const auto data = buf.str();
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError(path, "short write");
}

void load_checkpoint(Trainer& t, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open checkpoint");
  Reader r(in, path);
  const auto header = read_header(r);
  if (header.hash != t.config_.hash())
    r.fail("config hash mismatch: the checkpoint was written with a different configuration");
  t.step_count_ = r.pod<std::int64_t>();
  read_module(r, *t.model);
  read_module(r, *t.critic);
  read_adam(r, *t.opt_g);
  read_adam(r, *t.opt_d);
  set_generator_state(t.generator, r.bytes());
  std::istringstream rng(r.bytes());
  rng >> t.rng;
  if (!rng) r.fail("corrupt sampler state");
  const auto n = r.pod<std::uint64_t>();
  t.history_.clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    LossReport h;
    for (double* v : {&h.perc, &h.feat, &h.edge, &h.attrib, &h.vae, &h.total, &h.d_loss}) *v = r.pod<double>();
    t.history_.push_back(h);
  }
}

TrainConfig checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open checkpoint");
  Reader r(in, path);
  return TrainConfig::parse(read_header(r).config_text);
}

}  // namespace penet
