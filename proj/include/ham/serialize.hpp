#pragma once

// Adapter file layout (all integers and floats little-endian):
//
//   "HAMA" | version u32 | kind u32 | alpha f64 | layer_count u32
//   per layer: d u32 | k u32 | r u32 | B (d*r f32, row-major) | A (r*k f32, row-major)
//   trailer, by kind:
//     task   : task_id u32
//     group  : group_id u32 | member_count u32 | id_count u32 | member task ids (u32 each)
//     merged : source_count u32 | per source: id u32, alpha f64

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "ham/adapters.hpp"
#include "ham/merging.hpp"

namespace ham {

inline constexpr char kAdapterMagic[4] = {'H', 'A', 'M', 'A'};
inline constexpr std::uint32_t kAdapterFormatVersion = 1;

enum class AdapterKind : std::uint32_t { task = 0, group = 1, merged = 2 };

inline const char* to_string(AdapterKind k) {
  switch (k) {
    case AdapterKind::task: return "task";
    case AdapterKind::group: return "group";
    case AdapterKind::merged: return "merged";
  }
  return "unknown";
}

/// Decoded contents of an adapter file.
struct AdapterRecord {
  AdapterKind kind = AdapterKind::task;
  double alpha = 1.0;
  std::vector<LayerAdapter> layers;
  std::uint32_t id = 0;  // task id or group id
  std::size_t member_count = 0;
  std::vector<std::uint32_t> member_task_ids;
  std::vector<MergeSource> sources;

  TaskAdapter to_task() const { return {id, layers, alpha}; }
  AdapterGroup to_group() const { return {id, layers, alpha, member_count, member_task_ids}; }
  MergedDelta to_merged() const { return {layers, sources}; }
};

inline AdapterRecord make_record(const TaskAdapter& a) {
  AdapterRecord r;
  r.kind = AdapterKind::task;
  r.alpha = a.alpha;
  r.layers = a.layers;
  r.id = a.task_id;
  return r;
}

inline AdapterRecord make_record(const AdapterGroup& g) {
  AdapterRecord r;
  r.kind = AdapterKind::group;
  r.alpha = g.alpha;
  r.layers = g.layers;
  r.id = g.group_id;
  r.member_count = g.member_count;
  r.member_task_ids = g.member_task_ids;
  return r;
}

inline AdapterRecord make_record(const MergedDelta& m) {
  AdapterRecord r;
  r.kind = AdapterKind::merged;
  r.alpha = 1.0;
  r.layers = m.layers;
  r.sources = m.provenance;
  return r;
}

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  const std::string& bytes() const noexcept { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("adapter file is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFULL) throw FormatError(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline std::string encode_adapter(const AdapterRecord& rec) {
  detail::ByteWriter w;
  w.raw(kAdapterMagic, 4);
  w.u32(kAdapterFormatVersion);
  w.u32(static_cast<std::uint32_t>(rec.kind));
  w.f64(rec.alpha);
  w.u32(detail::checked_u32(rec.layers.size(), "layer count"));
  for (const auto& l : rec.layers) {
    l.check();
    w.u32(detail::checked_u32(l.out_dim(), "d"));
    w.u32(detail::checked_u32(l.in_dim(), "k"));
    w.u32(detail::checked_u32(l.rank(), "r"));
    for (double v : l.B.data()) w.f32(static_cast<float>(v));
    for (double v : l.A.data()) w.f32(static_cast<float>(v));
  }
  switch (rec.kind) {
    case AdapterKind::task:
      w.u32(rec.id);
      break;
    case AdapterKind::group:
      w.u32(rec.id);
      w.u32(detail::checked_u32(rec.member_count, "member count"));
      w.u32(detail::checked_u32(rec.member_task_ids.size(), "member id count"));
      for (auto id : rec.member_task_ids) w.u32(id);
      break;
    case AdapterKind::merged:
      w.u32(detail::checked_u32(rec.sources.size(), "source count"));
      for (const auto& s : rec.sources) {
        w.u32(s.id);
        w.f64(s.alpha);
      }
      break;
  }
  return w.bytes();
}

inline AdapterRecord decode_adapter(std::string_view bytes) {
  detail::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kAdapterMagic, 4) != 0) throw FormatError("not an adapter file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kAdapterFormatVersion) {
    throw FormatError("unsupported adapter format version " + std::to_string(version));
  }
  AdapterRecord rec;
  const std::uint32_t kind = r.u32();
  if (kind > static_cast<std::uint32_t>(AdapterKind::merged)) {
    throw FormatError("unknown adapter kind " + std::to_string(kind));
  }
  rec.kind = static_cast<AdapterKind>(kind);
  rec.alpha = r.f64();
  const std::uint32_t layer_count = r.u32();
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const std::uint64_t d = r.u32();
    const std::uint64_t k = r.u32();
    const std::uint64_t rank = r.u32();
    if ((d * rank + rank * k) * 4 > r.remaining()) throw FormatError("adapter file is truncated");
    Matrix B(d, rank);
    Matrix A(rank, k);
    for (double& v : B.data()) v = r.f32();
    for (double& v : A.data()) v = r.f32();
    rec.layers.emplace_back(std::move(B), std::move(A));
  }
  switch (rec.kind) {
    case AdapterKind::task:
      rec.id = r.u32();
      break;
    case AdapterKind::group: {
      rec.id = r.u32();
      rec.member_count = r.u32();
      const std::uint32_t n = r.u32();
      if (static_cast<std::uint64_t>(n) * 4 > r.remaining()) throw FormatError("adapter file is truncated");
      for (std::uint32_t i = 0; i < n; ++i) rec.member_task_ids.push_back(r.u32());
      break;
    }
    case AdapterKind::merged: {
      const std::uint32_t n = r.u32();
      if (static_cast<std::uint64_t>(n) * 12 > r.remaining()) throw FormatError("adapter file is truncated");
      for (std::uint32_t i = 0; i < n; ++i) {
        MergeSource s;
        s.id = r.u32();
        s.alpha = r.f64();
        rec.sources.push_back(s);
      }
      break;
    }
  }
  if (!r.done()) throw FormatError("adapter file has trailing bytes");
  return rec;
}

/// Write `contents` to a sibling temp file, then rename it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename Adapter>
void save_adapter(const std::filesystem::path& path, const Adapter& adapter) {
  write_file_atomic(path, encode_adapter(make_record(adapter)));
}

inline AdapterRecord load_adapter(const std::filesystem::path& path) {
  return decode_adapter(read_file(path));
}

}  // namespace ham
