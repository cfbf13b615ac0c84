#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>

#include "mcnet/trainer.hpp"

namespace mcnet {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'M', 'C', 'N', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    le(bits);
  }
  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, const fs::path& path) : buf_(buf), path_(path) {}

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      throw CheckpointError(CheckpointErrorKind::truncated,
                            path_.string() + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
    }
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(buf_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = le<std::uint64_t>(what);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  const std::vector<unsigned char>& buf_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

Tensor pack_u64(std::uint64_t v) {
  return Tensor({1, 1, 1, 2}, std::vector<double>{static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffu)});
}

std::uint64_t unpack_u64(const Tensor& t, const std::string& name) {
  if (t.size() != 2) throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: bad shape for " + name);
  return (static_cast<std::uint64_t>(t[0]) << 32) | static_cast<std::uint64_t>(t[1]);
}

void add_set(Checkpoint& c, const std::string& prefix, const ParamSet& set) {
  for (const auto& [name, t] : set) c.tensors.emplace_back(prefix + name, t);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le(ckpt.version);
  w.le(ckpt.config_hash);
  w.le(ckpt.iteration);
  w.le(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff) throw std::invalid_argument("checkpoint: tensor name too long: " + name.substr(0, 40));
    w.le(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    const Shape s = t.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) w.le(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw CheckpointError(CheckpointErrorKind::io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointErrorKind::io, "cannot move checkpoint to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open checkpoint " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf, path);
  if (r.str(4, "magic") != std::string(kMagic, 4)) {
    throw CheckpointError(CheckpointErrorKind::bad_magic, path.string() + ": not an mcnet checkpoint (bad magic)");
  }
  Checkpoint c;
  c.version = r.le<std::uint32_t>("version");
  if (c.version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::bad_version, path.string() + ": unsupported checkpoint version " +
                                                                std::to_string(c.version));
  }
  c.config_hash = r.le<std::uint64_t>("config hash");
  c.iteration = r.le<std::uint64_t>("iteration");
  const std::uint32_t count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.le<std::uint16_t>("name length");
    std::string name = r.str(len, "tensor name");
    Shape s;
    s.n = r.le<std::uint32_t>("shape");
    s.c = r.le<std::uint32_t>("shape");
    s.h = r.le<std::uint32_t>("shape");
    s.w = r.le<std::uint32_t>("shape");
    const long double elems = static_cast<long double>(s.n) * s.c * s.h * s.w;
    if (elems * 8 > static_cast<long double>(r.remaining())) {
      throw CheckpointError(CheckpointErrorKind::truncated,
                            path.string() + ": truncated in tensor " + name + " " + s.to_string());
    }
    std::vector<double> data(s.size());
    for (auto& v : data) v = r.f64("tensor data");
    c.tensors.emplace_back(std::move(name), Tensor(s, std::move(data)));
  }
  if (r.remaining() != 0) {
    throw CheckpointError(CheckpointErrorKind::malformed,
                          path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return c;
}

Checkpoint load_checkpoint(const fs::path& path, std::uint64_t expected_hash) {
  Checkpoint c = load_checkpoint(path);
  if (c.config_hash != expected_hash) {
    char msg[160];
    std::snprintf(msg, sizeof msg, ": config hash %016llx does not match the model config (%016llx)",
                  static_cast<unsigned long long>(c.config_hash), static_cast<unsigned long long>(expected_hash));
    throw CheckpointError(CheckpointErrorKind::hash_mismatch, path.string() + msg);
  }
  return c;
}

Checkpoint to_checkpoint(const TrainState& state) {
  Checkpoint c;
  c.config_hash = state.gen.config.hash();
  c.iteration = state.iteration;
  add_set(c, "gen/", state.gen.tensors);
  add_set(c, "disc/", state.disc);
  add_set(c, "opt/gen/m/", state.gen_opt.m);
  add_set(c, "opt/gen/v/", state.gen_opt.v);
  add_set(c, "opt/disc/m/", state.disc_opt.m);
  add_set(c, "opt/disc/v/", state.disc_opt.v);
  c.tensors.emplace_back("state/gen_step", pack_u64(state.gen_opt.step));
  c.tensors.emplace_back("state/disc_step", pack_u64(state.disc_opt.step));
  c.tensors.emplace_back("state/seed", pack_u64(state.seed));
  c.tensors.emplace_back("state/ema",
                         Tensor({1, 1, 1, 2}, std::vector<double>{state.ema_img, state.ema_valid ? 1.0 : 0.0}));
  c.tensors.emplace_back("state/failures", pack_u64(state.consecutive_failures));
  return c;
}

TrainState from_checkpoint(const Checkpoint& ckpt, const ModelConfig& model) {
  if (ckpt.config_hash != model.hash()) {
    throw CheckpointError(CheckpointErrorKind::hash_mismatch, "checkpoint was written for a different model config");
  }
  TrainState s;
  s.gen.config = model;
  s.iteration = ckpt.iteration;
  auto take = [](const std::string& name, const std::string& prefix, ParamSet& into, const Tensor& t) {
    if (name.starts_with(prefix)) {
      into.emplace(name.substr(prefix.size()), t);
      return true;
    }
    return false;
  };
  std::map<std::string, const Tensor*> scalars;
  for (const auto& [name, t] : ckpt.tensors) {
    if (take(name, "gen/", s.gen.tensors, t) || take(name, "disc/", s.disc, t) ||
        take(name, "opt/gen/m/", s.gen_opt.m, t) || take(name, "opt/gen/v/", s.gen_opt.v, t) ||
        take(name, "opt/disc/m/", s.disc_opt.m, t) || take(name, "opt/disc/v/", s.disc_opt.v, t)) {
      continue;
    }
    if (name.starts_with("state/")) {
      scalars[name] = &t;
      continue;
    }
    throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: unexpected tensor " + name);
  }
  for (const auto& layer : generator_layout(model)) {
    for (const auto& [suffix, shape] : {std::pair{".w", layer.transposed ? layer.spec.deconv_weight_shape()
                                                                           : layer.spec.weight_shape()},
                                        std::pair{".b", layer.spec.bias_shape()}}) {
      auto it = s.gen.tensors.find(layer.name + suffix);
      if (it == s.gen.tensors.end() || it->second.shape() != shape) {
        throw CheckpointError(CheckpointErrorKind::malformed,
                              "checkpoint: generator tensor " + layer.name + suffix + " missing or misshapen");
      }
    }
  }
  if (s.gen.tensors.size() != 2 * generator_layout(model).size()) {
    throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: extra generator tensors");
  }
  auto scalar = [&](const std::string& name) -> const Tensor& {
    auto it = scalars.find(name);
    if (it == scalars.end()) throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: missing " + name);
    return *it->second;
  };
  s.gen_opt.step = unpack_u64(scalar("state/gen_step"), "state/gen_step");
  s.disc_opt.step = unpack_u64(scalar("state/disc_step"), "state/disc_step");
  s.seed = unpack_u64(scalar("state/seed"), "state/seed");
  const Tensor& ema = scalar("state/ema");
  if (ema.size() != 2) throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: bad shape for state/ema");
  s.ema_img = ema[0];
  s.ema_valid = ema[1] != 0.0;
  s.consecutive_failures = unpack_u64(scalar("state/failures"), "state/failures");
  for (const auto& [pre, set, opt] : {std::tuple{"generator", &s.gen.tensors, &s.gen_opt},
                                      std::tuple{"discriminator", &s.disc, &s.disc_opt}}) {
    for (const auto& [name, t] : *set) {
      auto m = opt->m.find(name);
      auto v = opt->v.find(name);
      if (m == opt->m.end() || v == opt->v.end() || m->second.shape() != t.shape() || v->second.shape() != t.shape()) {
        throw CheckpointError(CheckpointErrorKind::malformed,
                              std::string("checkpoint: optimizer state missing for ") + pre + " tensor " + name);
      }
    }
  }
  return s;
}

}  // namespace mcnet
