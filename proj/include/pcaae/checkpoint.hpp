#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pcaae/errors.hpp"
#include "pcaae/tensor.hpp"

// Container layout (all integers little-endian):
//
//   "PCAE" | u32 version | u32 array count
//   per array: u32 name length | UTF-8 name | u8 dtype | u32 rank | u64 extents[rank] | raw values
//
// dtype 0 = f32, 1 = f64, 2 = i64. Arrays keep insertion order, so writing a
// loaded checkpoint reproduces the original bytes.

namespace pcaae {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

enum class DType : std::uint8_t { F32 = 0, F64 = 1, I64 = 2 };

struct NamedArray {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<unsigned char> bytes;
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    NamedArray a;
    a.name = name;
    a.dtype = dtype_of<T>();
    a.shape = t.shape();
    a.bytes.resize(t.size() * sizeof(T));
    std::memcpy(a.bytes.data(), t.data(), a.bytes.size());
    insert(std::move(a));
  }

  void put_int(const std::string& name, std::int64_t v) { put(name, Tensor<std::int64_t>({1}, std::vector{v})); }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    const NamedArray& a = at(name);
    if (a.dtype != dtype_of<T>()) throw IoError("checkpoint array '" + name + "' has a different dtype");
    Tensor<T> t(a.shape);
    if (a.bytes.size() != t.size() * sizeof(T)) throw IoError("checkpoint array '" + name + "' is truncated");
    std::memcpy(t.data(), a.bytes.data(), a.bytes.size());
    return t;
  }

  std::int64_t get_int(const std::string& name) const { return get<std::int64_t>(name).item(); }

  const std::vector<NamedArray>& arrays() const { return arrays_; }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write("PCAE", 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& a : arrays_) {
      write_u32(os, static_cast<std::uint32_t>(a.name.size()));
      os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      os.put(static_cast<char>(a.dtype));
      write_u32(os, static_cast<std::uint32_t>(a.shape.size()));
      for (auto e : a.shape) write_u64(os, e);
      os.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
    }
    if (!os) throw IoError("failed writing checkpoint: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PCAE", 4) != 0) throw IoError("not a checkpoint file: " + path);
    if (read_u32(is) != kVersion) throw IoError("unsupported checkpoint version in " + path);
    const std::uint32_t count = read_u32(is);
    Checkpoint ck;
    for (std::uint32_t k = 0; k < count; ++k) {
      NamedArray a;
      a.name.resize(read_u32(is));
      is.read(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      const int tag = is.get();
      if (tag < 0 || tag > 2) throw IoError("bad dtype tag in " + path);
      a.dtype = static_cast<DType>(tag);
      a.shape.resize(read_u32(is));
      for (auto& e : a.shape) e = read_u64(is);
      a.bytes.resize(shape_numel(a.shape) * element_size(a.dtype));
      is.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
      if (!is) throw IoError("truncated checkpoint: " + path);
      ck.insert(std::move(a));
    }
    return ck;
  }

 private:
  template <typename T>
  static constexpr DType dtype_of() {
    if constexpr (std::is_same_v<T, float>)
      return DType::F32;
    else if constexpr (std::is_same_v<T, double>)
      return DType::F64;
    else {
      static_assert(std::is_same_v<T, std::int64_t>, "unsupported checkpoint dtype");
      return DType::I64;
    }
  }

  static std::size_t element_size(DType d) { return d == DType::F32 ? 4 : 8; }

  const NamedArray& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("checkpoint has no array named '" + name + "'");
    return arrays_[it->second];
  }

  void insert(NamedArray a) {
    auto it = index_.find(a.name);
    if (it != index_.end()) {
      arrays_[it->second] = std::move(a);
      return;
    }
    index_[a.name] = arrays_.size();
    arrays_.push_back(std::move(a));
  }

  static void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
  static void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
  static std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw IoError("truncated checkpoint header");
    return v;
  }
  static std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    if (!is) throw IoError("truncated checkpoint header");
    return v;
  }

  std::vector<NamedArray> arrays_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace pcaae
