#pragma once

// Binary container shared by checkpoints and the dataset cache (little-endian):
//   "FQUF" | u32 version | u32 count |
//   count x { u32 name_len | name | 4 x u64 shape | f64 payload }
// The dataset cache appends a labels section:
//   u32 count | count x { u32 name_len | name | 3 x u64 (n, h, w) | u16 payload }

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "frequnet/error.hpp"
#include "frequnet/params.hpp"
#include "frequnet/tensor.hpp"

namespace frequnet {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'Q', 'U', 'F'};
constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void name(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<char> take() { return std::move(buf_); }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::string source) : buf_(buf), source_(std::move(source)) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const char* take(std::size_t n) {
    if (buf_.size() - pos_ < n) throw IoError(source_ + ": truncated at byte " + std::to_string(pos_));
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string name() {
    const auto n = get<std::uint32_t>();
    const char* p = take(n);
    return std::string(p, n);
  }
  bool done() const { return pos_ == buf_.size(); }
  const std::string& source() const { return source_; }

 private:
  const std::vector<char>& buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline void write_tensors(Writer& w, const ModelParams& params) {
  w.bytes(kMagic, 4);
  w.put(kFormatVersion);
  w.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.name(name);
    const Shape s = t.shape();
    for (std::uint64_t d : {s.n, s.c, s.h, s.w}) w.put(d);
    w.bytes(t.ptr(), t.size() * sizeof(double));
  }
}

inline ModelParams read_tensors(Reader& r) {
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw IoError(r.source() + ": bad magic, not an FQUF container");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw IoError(r.source() + ": unsupported container version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.name();
    std::uint64_t d[4];
    for (auto& v : d) v = r.get<std::uint64_t>();
    const Shape s{d[0], d[1], d[2], d[3]};
    if (s.numel() == 0) throw IoError(r.source() + ": tensor '" + name + "' has an empty shape");
    Tensor t(s);
    std::memcpy(t.ptr(), r.take(s.numel() * sizeof(double)), s.numel() * sizeof(double));
    params.set(name, std::move(t));
  }
  return params;
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace detail

inline std::vector<char> checkpoint_bytes(const ModelParams& params) {
  detail::Writer w;
  detail::write_tensors(w, params);
  return w.take();
}

inline ModelParams checkpoint_from_bytes(const std::vector<char>& bytes, const std::string& source = "checkpoint") {
  detail::Reader r(bytes, source);
  ModelParams p = detail::read_tensors(r);
  if (!r.done()) throw IoError(source + ": trailing bytes after tensor section");
  return p;
}

inline void save_checkpoint(const std::string& path, const ModelParams& params) {
  detail::write_file(path, checkpoint_bytes(params));
}

inline ModelParams load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes(detail::read_file(path), path);
}

/// Tensors plus named label maps, the layout of the dataset cache.
struct TensorArchive {
  ModelParams tensors;
  std::map<std::string, LabelMap> labels;
};

inline std::vector<char> archive_bytes(const TensorArchive& a) {
  detail::Writer w;
  detail::write_tensors(w, a.tensors);
  w.put(static_cast<std::uint32_t>(a.labels.size()));
  for (const auto& [name, m] : a.labels) {
    w.name(name);
    for (std::uint64_t d : {std::uint64_t{m.n}, std::uint64_t{m.h}, std::uint64_t{m.w}}) w.put(d);
    for (std::int32_t v : m.data) {
      if (v < 0 || v > 0xFFFF) throw DataError("label value " + std::to_string(v) + " does not fit in u16");
      w.put(static_cast<std::uint16_t>(v));
    }
  }
  return w.take();
}

inline TensorArchive archive_from_bytes(const std::vector<char>& bytes, const std::string& source = "archive") {
  detail::Reader r(bytes, source);
  TensorArchive a;
  a.tensors = detail::read_tensors(r);
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.name();
    LabelMap m;
    m.n = r.get<std::uint64_t>();
    m.h = r.get<std::uint64_t>();
    m.w = r.get<std::uint64_t>();
    const std::size_t n = m.n * m.h * m.w;
    m.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) m.data[k] = r.get<std::uint16_t>();
    a.labels.emplace(std::move(name), std::move(m));
  }
  if (!r.done()) throw IoError(source + ": trailing bytes after labels section");
  return a;
}

inline void save_archive(const std::string& path, const TensorArchive& a) { detail::write_file(path, archive_bytes(a)); }
inline TensorArchive load_archive(const std::string& path) {
  return archive_from_bytes(detail::read_file(path), path);
}

}  // namespace frequnet
