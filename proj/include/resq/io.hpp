#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace resq {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return out;
}

/// Write-then-rename so readers never observe a truncated file.
inline void atomic_write_file(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  const fs::path dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  fs::create_directories(dir);
  const fs::path tmp = dir / (path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ------------------------------------------------------ number formatting --

/// Shortest round-trip formatting for doubles in config files.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// 9 significant digits: exact round-trip for 32-bit floats.
inline std::string format_float9(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

// ------------------------------------------------------- key-value format --

/// Flat UTF-8 `key = value` config text. `#` starts a comment; blank lines
/// are skipped; order is preserved.
using KvPairs = std::vector<std::pair<std::string, std::string>>;

inline std::string kv_trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline KvPairs parse_kv(std::string_view text) {
  KvPairs out;
  size_t pos = 0;
  size_t lineno = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos
                                                                          : nl - pos);
    ++lineno;
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    std::string trimmed = kv_trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw IoError("config line " + std::to_string(lineno) + " is not 'key = value': " + trimmed);
    }
    out.emplace_back(kv_trim(std::string_view(trimmed).substr(0, eq)),
                     kv_trim(std::string_view(trimmed).substr(eq + 1)));
  }
  return out;
}

inline std::string emit_kv(const KvPairs& pairs) {
  std::string out;
  for (const auto& [k, v] : pairs) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

// -------------------------------------------------- little-endian encoding --

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  uint8_t u8() { return static_cast<uint8_t>(take_(1)[0]); }
  uint16_t u16() {
    auto s = take_(2);
    return static_cast<uint16_t>(static_cast<uint8_t>(s[0]) |
                                 (static_cast<uint16_t>(static_cast<uint8_t>(s[1])) << 8));
  }
  uint32_t u32() {
    auto s = take_(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[i])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    auto s = take_(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(s[i])) << (8 * i);
    return v;
  }
  std::string str(size_t len) { return std::string(take_(len)); }
  std::string_view raw(size_t len) { return take_(len); }
  bool done() const { return pos_ == bytes_.size(); }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view take_(size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("unexpected end of data");
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string_view bytes_;
  size_t pos_ = 0;
};

}  // namespace resq
