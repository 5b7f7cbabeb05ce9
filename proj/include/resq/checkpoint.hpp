#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "resq/io.hpp"
#include "resq/model.hpp"
#include "resq/tensor.hpp"

namespace resq {

// RQCK checkpoint: a self-describing little-endian container holding the
// model config and every parameter tensor by name.
//
//   "RQCK"  magic
//   u32     format version (1)
//   u32     config length, then key=value text
//   u32     tensor count
//   per tensor:
//     u16   name length, then name bytes
//     u8    dtype (0 = f32, 1 = f64)
//     u8    rank, then rank x u64 dims
//     raw   row-major element bytes
//
// Floats are encoded via their bit patterns, so a save/load round trip is
// bit-exact on any platform.

inline constexpr uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename T>
constexpr uint8_t dtype_code();
template <>
constexpr uint8_t dtype_code<float>() { return 0; }
template <>
constexpr uint8_t dtype_code<double>() { return 1; }

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

template <typename T>
void put_scalar(std::string& out, T v) {
  if constexpr (sizeof(T) == 4) {
    put_f32(out, static_cast<float>(v));
  } else {
    put_f64(out, static_cast<double>(v));
  }
}

template <typename T>
T read_scalar(ByteReader& r) {
  if constexpr (sizeof(T) == 4) {
    return std::bit_cast<float>(r.u32());
  } else {
    return std::bit_cast<double>(r.u64());
  }
}

}  // namespace detail

inline KvPairs config_to_kv(const ModelConfig& c) {
  return {
      {"n_layer", std::to_string(c.n_layer)},
      {"n_head", std::to_string(c.n_head)},
      {"d_model", std::to_string(c.d_model)},
      {"mlp_mult", format_double(c.mlp_mult)},
      {"context_len", std::to_string(c.context_len)},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"query_mode", std::string(query_mode_name(c.query_mode))},
      {"norm_eps", format_double(c.norm_eps)},
      {"query_scale", format_double(c.query_scale)},
  };
}

inline ModelConfig config_from_kv(const KvPairs& kv) {
  std::map<std::string, std::string> m(kv.begin(), kv.end());
  auto want = [&](const std::string& key) -> const std::string& {
    auto it = m.find(key);
    if (it == m.end()) throw CheckpointError("config missing key: " + key);
    return it->second;
  };
  ModelConfig c;
  c.n_layer = std::stoull(want("n_layer"));
  c.n_head = std::stoull(want("n_head"));
  c.d_model = std::stoull(want("d_model"));
  c.mlp_mult = std::stod(want("mlp_mult"));
  c.context_len = std::stoull(want("context_len"));
  c.vocab_size = std::stoull(want("vocab_size"));
  c.query_mode = parse_query_mode(want("query_mode"));
  c.norm_eps = std::stod(want("norm_eps"));
  c.query_scale = std::stod(want("query_scale"));
  c.validate();
  return c;
}

template <typename T>
std::string serialize_checkpoint(TransformerParams<T>& params) {
  std::string out;
  out += "RQCK";
  put_u32(out, kCheckpointVersion);
  const std::string cfg = emit_kv(config_to_kv(params.config));
  put_u32(out, static_cast<uint32_t>(cfg.size()));
  out += cfg;
  auto list = params.all();
  put_u32(out, static_cast<uint32_t>(list.size()));
  for (const auto* p : list) {
    if (p->name.size() > 0xFFFF) throw CheckpointError("parameter name too long: " + p->name);
    put_u16(out, static_cast<uint16_t>(p->name.size()));
    out += p->name;
    out.push_back(static_cast<char>(detail::dtype_code<T>()));
    out.push_back(static_cast<char>(p->tensor.shape.size()));
    for (size_t dim : p->tensor.shape) put_u64(out, static_cast<uint64_t>(dim));
    for (const T& v : p->tensor.data) detail::put_scalar<T>(out, v);
  }
  return out;
}

template <typename T>
TransformerParams<T> deserialize_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "RQCK") throw CheckpointError("bad magic: not an RQCK checkpoint");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const uint32_t cfg_len = r.u32();
  const ModelConfig config = config_from_kv(parse_kv(r.str(cfg_len)));

  // Build the parameter skeleton from the config, then fill tensors by name.
  TransformerParams<T> params = init_params<T>(config, /*seed=*/0);
  std::map<std::string, Parameter<T>*> by_name;
  for (auto* p : params.all()) by_name[p->name] = p;

  const uint32_t count = r.u32();
  std::map<std::string, bool> seen;
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u16());
    const uint8_t dtype = r.u8();
    if (dtype != detail::dtype_code<T>()) {
      throw CheckpointError("tensor " + name + " has dtype code " + std::to_string(dtype) +
                            ", expected " + std::to_string(detail::dtype_code<T>()));
    }
    const uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& dim : shape) dim = static_cast<size_t>(r.u64());
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("unexpected tensor in checkpoint: " + name);
    Parameter<T>* p = it->second;
    if (p->tensor.shape != shape) {
      throw CheckpointError("tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                            shape_str(p->tensor.shape));
    }
    if (seen[name]) throw CheckpointError("duplicate tensor in checkpoint: " + name);
    seen[name] = true;
    for (T& v : p->tensor.data) v = detail::read_scalar<T>(r);
  }
  if (count != by_name.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model needs " +
                          std::to_string(by_name.size()));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after last tensor");
  return params;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, TransformerParams<T>& params) {
  atomic_write_file(path, serialize_checkpoint(params));
}

template <typename T>
TransformerParams<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint<T>(read_file(path));
}

}  // namespace resq
