#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "biozsl/errors.hpp"
#include "biozsl/params.hpp"
#include "biozsl/tensor.hpp"

namespace biozsl {

// Binary checkpoint: magic, format version, then per-tensor records of
// (name length, name, rank, dims, raw little-endian doubles). Round-trips
// bit-exactly.
namespace ckpt {

inline constexpr char kMagic[8] = {'B', 'Z', 'S', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

template <class T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError(std::string("checkpoint: truncated while reading ") + what);
  return v;
}

}  // namespace detail

inline void save(std::ostream& out, const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  out.write(kMagic, sizeof(kMagic));
  detail::write_raw(out, kVersion);
  detail::write_raw(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::write_raw(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_raw(out, static_cast<std::uint32_t>(t->shape.size()));
    for (std::size_t d : t->shape) detail::write_raw(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t->values.data()),
              static_cast<std::streamsize>(t->values.size() * sizeof(double)));
  }
  if (!out) throw FormatError("checkpoint: write failed");
}

inline std::vector<std::pair<std::string, Tensor>> load(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  const auto version = detail::read_raw<std::uint32_t>(in, "version");
  if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::read_raw<std::uint32_t>(in, "tensor count");
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_raw<std::uint32_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError("checkpoint: truncated while reading name");
    const auto rank = detail::read_raw<std::uint32_t>(in, "rank");
    Tensor t;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = detail::read_raw<std::uint64_t>(in, "dimension");
      t.shape.push_back(static_cast<std::size_t>(dim));
      n *= static_cast<std::size_t>(dim);
    }
    t.values.resize(n);
    in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw FormatError("checkpoint: truncated while reading values of '" + name + "'");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline void save_file(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot open for writing: " + path.string());
  save(out, tensors);
}

inline std::vector<std::pair<std::string, Tensor>> load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open: " + path.string());
  return load(in);
}

// Flattens several ParamSets under name prefixes ("extractor/W1", ...).
inline std::vector<std::pair<std::string, const Tensor*>> collect(
    const std::vector<std::pair<std::string, const ParamSet*>>& sets) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [prefix, set] : sets) {
    for (const Parameter* p : set->all()) out.emplace_back(prefix + "/" + p->name, &p->value);
  }
  return out;
}

inline void restore(ParamSet& set, const std::string& prefix,
                    const std::vector<std::pair<std::string, Tensor>>& tensors) {
  for (const auto& [name, t] : tensors) {
    if (name.rfind(prefix + "/", 0) != 0) continue;
    const std::string local = name.substr(prefix.size() + 1);
    Parameter& p = set.at(local);
    if (p.value.shape != t.shape) {
      throw ShapeError("checkpoint: shape mismatch for '" + name + "'");
    }
    p.value = t;
  }
}

}  // namespace ckpt
}  // namespace biozsl
