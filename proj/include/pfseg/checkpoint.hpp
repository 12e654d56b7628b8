#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pfseg/models.hpp"
#include "pfseg/tensor.hpp"

// Checkpoint layout (all integers little-endian):
//
//   "PFSEG1\0"                 7-byte magic
//   u64 header_length
//   header:
//     u32 format_version
//     u8 variant, u32 input_channels, u32 num_classes,
//     u32 encoder_widths[4], u32 decoder_widths[4],
//     u32 backbone_kernel, u32 fusion_kernel, u8 fusion_bias
//     u64 step, u64 rng_state
//     u32 tensor_count, then per tensor (sorted by name):
//       u32 name_length, name bytes, u8 dtype, u32 rank, u64 dims[rank],
//       u64 byte_offset into the data section
//   data: IEEE-754 little-endian values, in directory order
//   u32 CRC32 over everything between the magic and the checksum
//
// Model parameters keep their registry names; optimizer velocities are
// stored as "velocity/<name>".
namespace pfseg {

inline constexpr std::array<char, 7> kCheckpointMagic{'P', 'F', 'S', 'E', 'G', '1', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kVelocityPrefix = "velocity/";

struct CheckpointError : DataError {
  using DataError::DataError;
};

/// Optimizer and schedule state carried alongside the parameters.
struct TrainState {
  std::map<std::string, Tensor<float>> velocity;
  std::uint64_t step = 0;
  std::uint64_t rng_state = 0;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

namespace detail {

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    std::array<char, sizeof(U)> b;
    std::memcpy(b.data(), &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    buf_.insert(buf_.end(), b.begin(), b.end());
  }
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  std::vector<char>& buffer() { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size) : p_(data), end_(data + size) {}
  template <class U>
  U get() {
    need(sizeof(U));
    std::array<char, sizeof(U)> b;
    std::memcpy(b.data(), p_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    p_ += sizeof(U);
    U v;
    std::memcpy(&v, b.data(), sizeof(U));
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(p_, n);
    p_ += n;
    return s;
  }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw CheckpointError("checkpoint truncated");
  }
  const char* p_;
  const char* end_;
};

inline std::uint32_t crc32_of(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

/// Serialises model + state to the canonical byte form.
template <class T>
std::vector<char> encode_checkpoint(const Model<T>& model, const TrainState& state) {
  std::map<std::string, const Tensor<T>*> params;
  for (const auto& [name, t] : model.params) params.emplace(name, &t);
  std::map<std::string, Tensor<T>> velocity_cast;
  for (const auto& [name, v] : state.velocity) velocity_cast.emplace(std::string(kVelocityPrefix) + name, v.template cast<T>());
  for (const auto& [name, t] : velocity_cast) params.emplace(name, &t);

  const ModelSpec& s = model.spec;
  detail::ByteWriter h;
  h.put<std::uint32_t>(kCheckpointVersion);
  h.put<std::uint8_t>(static_cast<std::uint8_t>(s.variant));
  h.put<std::uint32_t>(static_cast<std::uint32_t>(s.input_channels));
  h.put<std::uint32_t>(static_cast<std::uint32_t>(s.num_classes));
  for (auto w : s.encoder_widths) h.put<std::uint32_t>(static_cast<std::uint32_t>(w));
  for (auto w : s.decoder_widths) h.put<std::uint32_t>(static_cast<std::uint32_t>(w));
  h.put<std::uint32_t>(static_cast<std::uint32_t>(s.backbone_kernel));
  h.put<std::uint32_t>(static_cast<std::uint32_t>(s.fusion_kernel));
  h.put<std::uint8_t>(s.fusion_bias ? 1 : 0);
  h.put<std::uint64_t>(state.step);
  h.put<std::uint64_t>(state.rng_state);
  h.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    h.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    h.put_bytes(name);
    h.put<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>()));
    h.put<std::uint32_t>(static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) h.put<std::uint64_t>(d);
    h.put<std::uint64_t>(offset);
    offset += t->numel() * sizeof(T);
  }

  detail::ByteWriter out;
  out.put_bytes(std::string_view(kCheckpointMagic.data(), kCheckpointMagic.size()));
  out.put<std::uint64_t>(h.buffer().size());
  out.buffer().insert(out.buffer().end(), h.buffer().begin(), h.buffer().end());
  for (const auto& [name, t] : params)
    for (T v : t->data()) out.put<T>(v);
  const auto& b = out.buffer();
  const std::uint32_t crc = detail::crc32_of(b.data() + kCheckpointMagic.size(), b.size() - kCheckpointMagic.size());
  out.put<std::uint32_t>(crc);
  return std::move(out.buffer());
}

template <class T>
void save_checkpoint(const Model<T>& model, const TrainState& state, const std::filesystem::path& path) {
  const std::vector<char> bytes = encode_checkpoint(model, state);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for checkpoint " + path.string());
}

struct LoadedCheckpoint {
  Model<float> model;
  TrainState state;
};

namespace detail {

inline std::string join_names(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& n : v) s += (s.empty() ? "" : ", ") + n;
  return s;
}

}  // namespace detail

/// Parses the canonical byte form. When `expect` is given, the stored spec
/// must equal it; otherwise the error lists the tensor names that differ.
inline LoadedCheckpoint decode_checkpoint(const std::vector<char>& bytes, const std::optional<ModelSpec>& expect = {}) {
  const std::size_t magic = kCheckpointMagic.size();
  if (bytes.size() < magic || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    throw CheckpointError("bad checkpoint magic");
  if (bytes.size() < magic + 8 + 4) throw CheckpointError("checkpoint truncated");
  detail::ByteReader r(bytes.data() + magic, bytes.size() - magic);
  const auto header_len = r.get<std::uint64_t>();
  if (header_len > r.remaining() - 4) throw CheckpointError("checkpoint truncated");
  {
    detail::ByteReader tail(bytes.data() + bytes.size() - 4, 4);
    const auto stored = tail.get<std::uint32_t>();
    if (stored != detail::crc32_of(bytes.data() + magic, bytes.size() - magic - 4))
      throw CheckpointError("checkpoint checksum mismatch");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  ModelSpec s;
  const auto variant = r.get<std::uint8_t>();
  if (variant > static_cast<std::uint8_t>(Variant::DecoderPrior)) throw CheckpointError("unknown variant in checkpoint");
  s.variant = static_cast<Variant>(variant);
  s.input_channels = r.get<std::uint32_t>();
  s.num_classes = r.get<std::uint32_t>();
  for (auto& w : s.encoder_widths) w = r.get<std::uint32_t>();
  for (auto& w : s.decoder_widths) w = r.get<std::uint32_t>();
  s.backbone_kernel = r.get<std::uint32_t>();
  s.fusion_kernel = r.get<std::uint32_t>();
  s.fusion_bias = r.get<std::uint8_t>() != 0;
  TrainState state;
  state.step = r.get<std::uint64_t>();
  state.rng_state = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();

  struct Entry {
    std::string name;
    DType dtype;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> dir;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.get_bytes(r.get<std::uint32_t>());
    const auto dt = r.get<std::uint8_t>();
    if (dt > 1) throw CheckpointError("unknown dtype for tensor " + e.name);
    e.dtype = static_cast<DType>(dt);
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw CheckpointError("bad rank for tensor " + e.name);
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.get<std::uint64_t>());
    e.offset = r.get<std::uint64_t>();
    dir.push_back(std::move(e));
  }
  if (!std::is_sorted(dir.begin(), dir.end(), [](const Entry& a, const Entry& b) { return a.name < b.name; }))
    throw CheckpointError("checkpoint directory is not sorted by name");

  const char* data = bytes.data() + magic + 8 + header_len;
  const std::size_t data_len = bytes.size() - magic - 8 - header_len - 4;
  LoadedCheckpoint out{Model<float>{s, {}, {}}, std::move(state)};
  for (const auto& e : dir) {
    const std::size_t n = shape_numel(e.shape), width = e.dtype == DType::f32 ? 4 : 8;
    if (e.offset + n * width > data_len) throw CheckpointError("checkpoint truncated in tensor " + e.name);
    detail::ByteReader tr(data + e.offset, n * width);
    Tensor<float> t(e.shape);
    for (std::size_t i = 0; i < n; ++i)
      t[i] = e.dtype == DType::f32 ? tr.get<float>() : static_cast<float>(tr.get<double>());
    if (e.name.starts_with(kVelocityPrefix))
      out.state.velocity.emplace(e.name.substr(kVelocityPrefix.size()), std::move(t));
    else
      out.model.params.emplace(e.name, std::move(t));
  }

  const ModelSpec& want = expect ? *expect : s;
  std::vector<LayerPlan> plan;
  try {
    plan = layer_plan(want);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint spec invalid: ") + e.what());
  }
  std::set<std::string> expected;
  for (const auto& l : plan) {
    expected.insert(l.weight);
    if (l.bias) expected.insert(*l.bias);
  }
  std::vector<std::string> extra, missing, reshaped;
  for (const auto& [name, t] : out.model.params)
    if (!expected.count(name)) extra.push_back(name);
  for (const auto& name : expected)
    if (!out.model.params.count(name)) missing.push_back(name);
  if (extra.empty() && missing.empty()) {
    for (const auto& l : plan) {
      if (out.model.params.at(l.weight).shape() != Shape{l.out_channels, l.in_channels, l.kernel, l.kernel})
        reshaped.push_back(l.weight);
      if (l.bias && out.model.params.at(*l.bias).shape() != Shape{l.out_channels}) reshaped.push_back(*l.bias);
    }
  }
  if (!(s == want) || !extra.empty() || !missing.empty() || !reshaped.empty()) {
    std::string msg = "checkpoint spec mismatch: stored variant " + std::string(variant_name(s.variant)) +
                      ", expected " + std::string(variant_name(want.variant));
    if (!extra.empty()) msg += "; extra tensors: " + detail::join_names(extra);
    if (!missing.empty()) msg += "; missing tensors: " + detail::join_names(missing);
    if (!reshaped.empty()) msg += "; reshaped tensors: " + detail::join_names(reshaped);
    throw CheckpointError(msg);
  }
  out.model.plan = std::move(plan);
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelSpec>& expect = {}) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes, expect);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace pfseg
