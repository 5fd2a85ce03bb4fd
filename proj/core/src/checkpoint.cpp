#include "adlj/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "adlj/errors.hpp"

namespace adlj {

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  std::vector<std::byte> take() { return std::move(out_); }

 private:
  std::vector<std::byte> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::byte> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

  std::span<const std::byte> take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    const auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint32_t>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64(const char* what) {
    const auto s = take(8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint64_t>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const auto at = pos_;
    const auto n = u64(what);
    if (n > in_.size() - pos_) throw FormatError(std::string("checkpoint truncated while reading ") + what, at);
    const auto s = take(static_cast<std::size_t>(n), what);
    return std::string(reinterpret_cast<const char*>(s.data()), s.size());
  }

 private:
  std::span<const std::byte> in_;
  std::size_t pos_ = 0;
};

struct Slot {
  std::string name;
  Tensor* tensor;
};

std::vector<Slot> slots(ModelState& state, Adam& optimizer) {
  std::vector<Slot> out;
  auto params = state.all_params();
  for (auto& p : params) out.push_back({p.name, p.tensor});
  const auto trainable = state.trainable();
  auto& m = optimizer.first_moments();
  auto& v = optimizer.second_moments();
  for (std::size_t i = 0; i < trainable.size() && i < m.size(); ++i) out.push_back({"adam.m." + trainable[i].name, &m[i]});
  for (std::size_t i = 0; i < trainable.size() && i < v.size(); ++i) out.push_back({"adam.v." + trainable[i].name, &v[i]});
  return out;
}

}  // namespace

Adam make_optimizer(const TrainConfig& config, ModelState& state) {
  Adam::Hyper hyper;
  hyper.weight_decay = config.weight_decay;
  Adam adam(hyper);
  adam.attach(state.trainable());
  return adam;
}

std::vector<std::byte> encode_checkpoint(const Checkpoint& checkpoint) {
  // slots() needs mutable access for the shared name/pointer walk; nothing is modified.
  auto& cp = const_cast<Checkpoint&>(checkpoint);
  const auto all = slots(cp.state, cp.optimizer);

  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(format_config(checkpoint.config));
  w.u64(checkpoint.step);
  w.u64(checkpoint.optimizer.step_count());
  w.u64(checkpoint.config.seed);
  w.u64(all.size());
  for (const auto& s : all) {
    w.str(s.name);
    w.u32(static_cast<std::uint32_t>(s.tensor->rank()));
    for (auto d : s.tensor->shape) w.u64(d);
    for (double v : s.tensor->data) w.f64(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes) {
  Reader r(bytes);
  const auto magic = r.take(sizeof kCheckpointMagic, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw FormatError("not a checkpoint (bad magic)", 0);
  }
  const auto version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const auto config_at = r.offset();
  const auto config_text = r.str("config");
  Checkpoint cp;
  try {
    cp.config = parse_config_text(config_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what(), config_at);
  }
  cp.step = r.u64("step");
  const auto adam_t = r.u64("optimizer step");
  const auto seed_at = r.offset();
  const auto seed = r.u64("rng key");
  if (seed != cp.config.seed) throw FormatError("checkpoint rng key does not match config seed", seed_at);

  cp.state = init_model(cp.config.grid, cp.config.model, cp.config.seed);
  cp.optimizer = make_optimizer(cp.config, cp.state);
  cp.optimizer.set_step_count(adam_t);
  const auto all = slots(cp.state, cp.optimizer);

  const auto count_at = r.offset();
  const auto count = r.u64("tensor count");
  if (count != all.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(all.size()),
                      count_at);
  }
  for (const auto& s : all) {
    const auto entry_at = r.offset();
    const auto name = r.str("tensor name");
    if (name != s.name) throw FormatError("expected tensor '" + s.name + "', found '" + name + "'", entry_at);
    const auto rank = r.u32("tensor rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(r.u64("tensor dims")));
    if (shape != s.tensor->shape) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                            shape_str(s.tensor->shape),
                        entry_at);
    }
    for (auto& v : s.tensor->data) v = r.f64("tensor data");
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.offset());
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(std::as_bytes(std::span(raw)));
}

}  // namespace adlj
