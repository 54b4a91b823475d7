#pragma once

// Flat binary container of named arrays.
//
//   "JPGGANP\0"  u32 version  u32 count
//   per entry:   u32 name_len  name  u8 dtype  u32 rank  u64 dims[rank]  data
//
// All integers and reals little-endian; data row-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "jpeggan/layers.hpp"
#include "jpeggan/tensor.hpp"

namespace jpeggan {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU64 = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

struct NamedArray {
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<unsigned char> bytes;

  std::size_t count() const { return numel_of(shape); }
};

class ArrayFile {
 public:
  static constexpr char kMagic[8] = {'J', 'P', 'G', 'G', 'A', 'N', 'P', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  template <class T>
  void put(const std::string& name, const Tensor<T>& t) {
    NamedArray a;
    a.dtype = std::is_same_v<T, float> ? DType::kF32 : DType::kF64;
    a.shape = t.shape();
    a.bytes.resize(t.numel() * sizeof(T));
    std::memcpy(a.bytes.data(), t.data().data(), a.bytes.size());
    entries_[name] = std::move(a);
  }

  void put_u64(const std::string& name, const std::vector<std::uint64_t>& v) {
    NamedArray a;
    a.dtype = DType::kU64;
    a.shape = {v.size()};
    a.bytes.resize(v.size() * 8);
    std::memcpy(a.bytes.data(), v.data(), a.bytes.size());
    entries_[name] = std::move(a);
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const std::map<std::string, NamedArray>& entries() const { return entries_; }

  const NamedArray& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw FormatError("container has no entry " + name);
    return it->second;
  }

  // Reads a real-valued entry at precision T (converting if stored otherwise).
  template <class T>
  Tensor<T> get(const std::string& name) const {
    const NamedArray& a = at(name);
    std::vector<T> out(a.count());
    if (a.dtype == DType::kF32) {
      std::vector<float> f(a.count());
      std::memcpy(f.data(), a.bytes.data(), a.bytes.size());
      std::copy(f.begin(), f.end(), out.begin());
    } else if (a.dtype == DType::kF64) {
      std::vector<double> d(a.count());
      std::memcpy(d.data(), a.bytes.data(), a.bytes.size());
      std::transform(d.begin(), d.end(), out.begin(), [](double v) { return static_cast<T>(v); });
    } else {
      throw FormatError("entry " + name + " is not real-valued");
    }
    return Tensor<T>(a.shape, std::move(out));
  }

  std::vector<std::uint64_t> get_u64(const std::string& name) const {
    const NamedArray& a = at(name);
    if (a.dtype != DType::kU64) throw FormatError("entry " + name + " is not u64");
    std::vector<std::uint64_t> v(a.count());
    std::memcpy(v.data(), a.bytes.data(), a.bytes.size());
    return v;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    write_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, a] : entries_) {
      write_u32(f, static_cast<std::uint32_t>(name.size()));
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      f.put(static_cast<char>(a.dtype));
      write_u32(f, static_cast<std::uint32_t>(a.shape.size()));
      for (std::size_t d : a.shape) write_u64(f, d);
      f.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
    }
    if (!f) throw std::runtime_error("write failed for " + path);
  }

  static ArrayFile load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char magic[8];
    read_exact(f, magic, 8, path);
    if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": not a parameter container");
    const std::uint32_t version = read_u32(f, path);
    if (version != kVersion) throw FormatError(path + ": unsupported container version " + std::to_string(version));
    const std::uint32_t n = read_u32(f, path);
    ArrayFile out;
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint32_t len = read_u32(f, path);
      if (len > 4096) throw FormatError(path + ": implausible name length");
      std::string name(len, '\0');
      read_exact(f, name.data(), len, path);
      NamedArray a;
      char dt;
      read_exact(f, &dt, 1, path);
      if (static_cast<unsigned char>(dt) > 2) throw FormatError(path + ": unknown dtype in " + name);
      a.dtype = static_cast<DType>(dt);
      const std::uint32_t rank = read_u32(f, path);
      if (rank > 8) throw FormatError(path + ": implausible rank in " + name);
      for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(read_u64(f, path));
      a.bytes.resize(a.count() * dtype_size(a.dtype));
      read_exact(f, reinterpret_cast<char*>(a.bytes.data()), a.bytes.size(), path);
      out.entries_[name] = std::move(a);
    }
    return out;
  }

 private:
  static void write_u32(std::ostream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
  static void write_u64(std::ostream& f, std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
  static void read_exact(std::istream& f, char* dst, std::size_t n, const std::string& path) {
    f.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n) throw FormatError(path + ": truncated container");
  }
  static std::uint32_t read_u32(std::istream& f, const std::string& path) {
    std::uint32_t v;
    read_exact(f, reinterpret_cast<char*>(&v), 4, path);
    return v;
  }
  static std::uint64_t read_u64(std::istream& f, const std::string& path) {
    std::uint64_t v;
    read_exact(f, reinterpret_cast<char*>(&v), 8, path);
    return v;
  }

  std::map<std::string, NamedArray> entries_;
};

template <class T>
void store_params(ArrayFile& file, const ParamSet<T>& ps, const std::string& prefix = "") {
  for (const auto& [name, t] : ps.entries()) file.put(prefix + name, t);
}

// Loads every parameter of `ps` from `file`; a missing entry or a shape
// difference is an error (checkpoint and spec disagree).
template <class T>
void load_params(ParamSet<T>& ps, const ArrayFile& file, const std::string& prefix = "") {
  for (auto& [name, t] : ps.entries()) {
    if (!file.contains(prefix + name)) throw FormatError("checkpoint lacks parameter " + prefix + name);
    Tensor<T> src = file.get<T>(prefix + name);
    if (src.shape() != t.shape())
      throw FormatError("parameter " + prefix + name + ": checkpoint shape " + to_string(src.shape()) +
                        ", network expects " + to_string(t.shape()));
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
}

}  // namespace jpeggan
