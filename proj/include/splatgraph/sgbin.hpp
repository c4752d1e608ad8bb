#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatgraph {

// Binary container: 8-byte magic, then named records. Record layout:
// u32 name length, name bytes, u8 payload type, u64 element count, payload.
// All integers little-endian; doubles stored as their IEEE-754 bit pattern.
inline constexpr char kSgbinMagic[8] = {'S', 'G', 'B', 'I', 'N', '0', '1', '\0'};

namespace sgbin_detail {

enum : std::uint8_t { kF64 = 1, kI64 = 2, kBytes = 3 };

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace sgbin_detail

class SgbinWriter {
 public:
  explicit SgbinWriter(const std::string& path)
      : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("sgbin: cannot open for write: " + path);
    out_.write(kSgbinMagic, 8);
  }

  void put_f64(const std::string& name, const double* data, std::size_t n) {
    header(name, sgbin_detail::kF64, n);
    std::string buf;
    buf.reserve(n * 8);
    for (std::size_t i = 0; i < n; ++i)
      sgbin_detail::put_u64(buf, std::bit_cast<std::uint64_t>(data[i]));
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }

  void put_f64(const std::string& name, const std::vector<double>& v) {
    put_f64(name, v.data(), v.size());
  }

  void put_i64(const std::string& name, const std::vector<std::int64_t>& v) {
    header(name, sgbin_detail::kI64, v.size());
    std::string buf;
    buf.reserve(v.size() * 8);
    for (std::int64_t x : v)
      sgbin_detail::put_u64(buf, static_cast<std::uint64_t>(x));
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }

  void put_bytes(const std::string& name, const std::uint8_t* data, std::size_t n) {
    header(name, sgbin_detail::kBytes, n);
    if (n > 0)
      out_.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  }

  void put_string(const std::string& name, const std::string& s) {
    put_bytes(name, reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
  }

  // Flushes and verifies the stream; without this write errors would pass
  // silently at destruction.
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("sgbin: write failed: " + path_);
    out_.close();
  }

 private:
  void header(const std::string& name, std::uint8_t type, std::uint64_t count) {
    std::string buf;
    sgbin_detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    buf.push_back(static_cast<char>(type));
    sgbin_detail::put_u64(buf, count);
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }

  std::string path_;
  std::ofstream out_;
};

struct SgbinFile {
  struct Record {
    std::uint8_t type = 0;
    std::vector<std::uint8_t> raw;
  };
  std::map<std::string, Record> records;

  static SgbinFile load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("sgbin: cannot open for read: " + path);
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (data.size() < 8 || std::memcmp(data.data(), kSgbinMagic, 8) != 0)
      throw std::runtime_error("sgbin: bad magic in " + path);
    SgbinFile file;
    std::size_t pos = 8;
    while (pos < data.size()) {
      if (pos + 4 > data.size()) throw std::runtime_error("sgbin: truncated " + path);
      std::uint32_t name_len = sgbin_detail::get_u32(&data[pos]);
      pos += 4;
      if (pos + name_len + 9 > data.size())
        throw std::runtime_error("sgbin: truncated " + path);
      std::string name(reinterpret_cast<const char*>(&data[pos]), name_len);
      pos += name_len;
      Record rec;
      rec.type = data[pos];
      pos += 1;
      std::uint64_t count = sgbin_detail::get_u64(&data[pos]);
      pos += 8;
      std::size_t elem = rec.type == sgbin_detail::kBytes ? 1 : 8;
      std::uint64_t bytes = count * elem;
      if (pos + bytes > data.size())
        throw std::runtime_error("sgbin: truncated record " + name + " in " + path);
      rec.raw.assign(data.begin() + pos, data.begin() + pos + bytes);
      pos += bytes;
      if (!file.records.emplace(name, std::move(rec)).second)
        throw std::runtime_error("sgbin: duplicate record " + name + " in " + path);
    }
    return file;
  }

  bool has(const std::string& name) const { return records.count(name) > 0; }

  std::vector<double> f64(const std::string& name) const {
    const Record& r = fetch(name, sgbin_detail::kF64);
    std::vector<double> v(r.raw.size() / 8);
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = std::bit_cast<double>(sgbin_detail::get_u64(&r.raw[i * 8]));
    return v;
  }

  std::vector<std::int64_t> i64(const std::string& name) const {
    const Record& r = fetch(name, sgbin_detail::kI64);
    std::vector<std::int64_t> v(r.raw.size() / 8);
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] = static_cast<std::int64_t>(sgbin_detail::get_u64(&r.raw[i * 8]));
    return v;
  }

  std::vector<std::uint8_t> bytes(const std::string& name) const {
    return fetch(name, sgbin_detail::kBytes).raw;
  }

  std::string str(const std::string& name) const {
    const Record& r = fetch(name, sgbin_detail::kBytes);
    return std::string(r.raw.begin(), r.raw.end());
  }

 private:
  const Record& fetch(const std::string& name, std::uint8_t type) const {
    auto it = records.find(name);
    if (it == records.end())
      throw std::runtime_error("sgbin: missing record " + name);
    if (it->second.type != type)
      throw std::runtime_error("sgbin: wrong type for record " + name);
    return it->second;
  }
};

}  // namespace splatgraph
