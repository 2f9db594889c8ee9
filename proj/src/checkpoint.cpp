// SPDX-License-Identifier: Apache-2.0
#include "drnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "drnet/rpm_data.hpp"

namespace drnet {

namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename U>
  void scalar(U v) {
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    out.insert(out.end(), b, b + sizeof(U));
  }
  void text(const std::string& s) {
    scalar<std::uint32_t>(std::uint32_t(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <typename U>
  U scalar() {
    need(sizeof(U));
    unsigned char tmp[sizeof(U)];
    std::memcpy(tmp, b_.data() + off_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(tmp, tmp + sizeof(U));
    off_ += sizeof(U);
    U v;
    std::memcpy(&v, tmp, sizeof(U));
    return v;
  }
  std::string text(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(b_.data() + off_), len);
    off_ += len;
    return s;
  }
  std::string text() { return text(scalar<std::uint32_t>()); }
  std::size_t offset() const { return off_; }
  void need(std::size_t n) const {
    if (b_.size() < off_ + n) throw FormatError("truncated checkpoint", b_.size());
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t off_ = 0;
};

template <typename T>
void put_array(Writer& w, std::uint8_t kind, const std::string& name, const Tensor<T>& t) {
  w.scalar<std::uint8_t>(kind);
  w.scalar<std::uint16_t>(std::uint16_t(name.size()));
  w.out.insert(w.out.end(), name.begin(), name.end());
  w.scalar<std::uint8_t>(std::uint8_t(t.rank()));
  for (auto d : t.shape()) w.scalar<std::uint32_t>(std::uint32_t(d));
  for (T v : t.vec()) w.scalar<T>(v);
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const DrNet<T>& model, const Adam<T>* opt,
                                            const CheckpointMeta& meta) {
  Writer w;
  w.out.insert(w.out.end(), {'D', 'R', 'C', 'K'});
  w.scalar<std::uint32_t>(kVersion);
  w.scalar<std::uint8_t>(std::uint8_t(sizeof(T)));
  w.text(fingerprint(model.config()));
  w.text(format_key_values(to_key_values(meta.train)));
  w.scalar<std::int32_t>(meta.epoch);
  w.scalar<double>(meta.val_loss);
  w.scalar<double>(meta.val_accuracy);
  w.scalar<std::uint64_t>(opt ? opt->steps() : 0);
  const auto params = model.params().all();
  const std::size_t n_moments = opt ? 2 * opt->slots().size() : 0;
  w.scalar<std::uint32_t>(std::uint32_t(params.size() + n_moments));
  for (const auto* p : params) put_array(w, p->trainable ? 0 : 1, p->name, p->value);
  if (opt)
    for (const auto& s : opt->slots()) {
      put_array(w, 2, s.param->name, s.m);
      put_array(w, 3, s.param->name, s.v);
    }
  w.scalar<std::uint64_t>(fnv1a64(w.out));
  return std::move(w.out);
}

template <typename T>
CheckpointMeta decode_checkpoint(std::span<const std::uint8_t> bytes, DrNet<T>& model, Adam<T>* opt) {
  Reader r(bytes);
  if (r.text(4) != "DRCK") throw FormatError("not a checkpoint (bad magic)", 0);
  const auto version = r.scalar<std::uint32_t>();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  if (bytes.size() < 8) throw FormatError("truncated checkpoint", bytes.size());
  {
    Reader tail(bytes.subspan(bytes.size() - 8));
    const auto stored = tail.scalar<std::uint64_t>();
    if (stored != fnv1a64(bytes.first(bytes.size() - 8)))
      throw FormatError("checkpoint checksum mismatch (file is corrupt)", bytes.size() - 8);
  }
  const auto dtype = r.scalar<std::uint8_t>();
  if (dtype != 4 && dtype != 8) throw FormatError("unknown checkpoint dtype", r.offset() - 1);
  const ModelConfig stored = apply_key_values(ExperimentConfig{}, parse_key_values(r.text())).model;
  if (auto diff = first_difference(stored, model.config())) {
    const auto a = to_key_values(stored).at(*diff), b = to_key_values(model.config()).at(*diff);
    throw ConfigError("checkpoint config mismatch in " + *diff + ": checkpoint has " + a +
                      ", model has " + b);
  }
  CheckpointMeta meta;
  meta.train = apply_key_values(ExperimentConfig{}, parse_key_values(r.text())).train;
  meta.epoch = r.scalar<std::int32_t>();
  meta.val_loss = r.scalar<double>();
  meta.val_accuracy = r.scalar<double>();
  const auto steps = r.scalar<std::uint64_t>();
  const auto n = r.scalar<std::uint32_t>();
  std::map<std::string, typename Adam<T>::Slot*> slots;
  if (opt)
    for (auto& s : opt->slots()) slots[s.param->name] = &s;
  std::size_t loaded = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    const auto kind = r.scalar<std::uint8_t>();
    const std::string name = r.text(r.scalar<std::uint16_t>());
    const auto rank = r.scalar<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.scalar<std::uint32_t>();
    Tensor<T>* dst = nullptr;
    if (kind <= 1) {
      auto* p = model.params().find(name);
      if (!p) throw FormatError("checkpoint array '" + name + "' has no counterpart in the model", at);
      dst = &p->value;
      ++loaded;
    } else if (kind <= 3) {
      auto it = slots.find(name);
      if (it != slots.end()) dst = kind == 2 ? &it->second->m : &it->second->v;
    } else {
      throw FormatError("unknown checkpoint array kind", at);
    }
    if (dst && dst->shape() != shape)
      throw FormatError("shape mismatch for '" + name + "': " + shape_str(shape) + " vs " +
                        shape_str(dst->shape()), at);
    const std::size_t count = numel(shape);
    if (dtype == 4) {
      for (std::size_t k = 0; k < count; ++k) {
        const float v = r.scalar<float>();
        if (dst) (*dst)[k] = T(v);
      }
    } else {
      for (std::size_t k = 0; k < count; ++k) {
        const double v = r.scalar<double>();
        if (dst) (*dst)[k] = T(v);
      }
    }
  }
  if (loaded != model.params().all().size())
    throw FormatError("checkpoint is missing model arrays", r.offset());
  if (r.offset() + 8 != bytes.size()) throw FormatError("trailing bytes in checkpoint", r.offset());
  if (opt) opt->set_steps(steps);
  return meta;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const DrNet<T>& model, const Adam<T>* opt,
                     const CheckpointMeta& meta) {
  const auto bytes = encode_checkpoint(model, opt, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

namespace {
std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

template <typename T>
CheckpointMeta load_checkpoint(const std::filesystem::path& path, DrNet<T>& model, Adam<T>* opt) {
  const auto bytes = slurp(path);
  return decode_checkpoint<T>(bytes, model, opt);
}

ModelConfig checkpoint_model_config(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  Reader r(bytes);
  if (r.text(4) != "DRCK") throw FormatError("not a checkpoint (bad magic)", 0);
  r.scalar<std::uint32_t>();
  r.scalar<std::uint8_t>();
  return apply_key_values(ExperimentConfig{}, parse_key_values(r.text())).model;
}

#define DRNET_CKPT(T)                                                                          \
  template std::vector<std::uint8_t> encode_checkpoint(const DrNet<T>&, const Adam<T>*,         \
                                                       const CheckpointMeta&);                  \
  template CheckpointMeta decode_checkpoint(std::span<const std::uint8_t>, DrNet<T>&, Adam<T>*); \
  template void save_checkpoint(const std::filesystem::path&, const DrNet<T>&, const Adam<T>*,  \
                                const CheckpointMeta&);                                         \
  template CheckpointMeta load_checkpoint(const std::filesystem::path&, DrNet<T>&, Adam<T>*);
DRNET_CKPT(float)
DRNET_CKPT(double)
#undef DRNET_CKPT

}  // namespace drnet
