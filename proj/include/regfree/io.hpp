#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "regfree/core.hpp"

// On-disk volume format: `<stem>.hdr` (text) next to `<stem>.raw` (flat little-endian
// payload in z-major, then y, then x order).
//
//   regfree-volume 1
//   shape <d> <h> <w>
//   spacing <sz> <sy> <sx>
//   dtype float32|float64|uint8
//   data <stem>.raw

namespace regfreenet::io {

static_assert(std::endian::native == std::endian::little, "payload I/O assumes a little-endian host");

namespace fs = std::filesystem;

enum class VolumeFormat { raw };

inline VolumeFormat parse_format(std::string_view name) {
  if (name == "raw" || name == "hdr" || name.empty()) return VolumeFormat::raw;
  throw FormatError("unsupported volume format '" + std::string(name) + "'");
}

enum class DType { float32, float64, uint8 };

inline std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::float32: return "float32";
    case DType::float64: return "float64";
    case DType::uint8: return "uint8";
  }
  return "?";
}

inline DType parse_dtype(std::string_view s) {
  if (s == "float32") return DType::float32;
  if (s == "float64") return DType::float64;
  if (s == "uint8") return DType::uint8;
  throw FormatError("unknown dtype '" + std::string(s) + "'");
}

inline std::size_t dtype_size(DType t) { return t == DType::float64 ? 8 : (t == DType::float32 ? 4 : 1); }

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::float32;
  else if constexpr (std::is_same_v<T, double>) return DType::float64;
  else {
    static_assert(std::is_same_v<T, std::uint8_t>, "unsupported voxel type");
    return DType::uint8;
  }
}

/// Accepts `stem`, `stem.hdr` or `stem.raw`.
inline fs::path header_path(const fs::path& p) {
  if (p.extension() == ".hdr") return p;
  if (p.extension() == ".raw") return fs::path(p).replace_extension(".hdr");
  return fs::path(p.string() + ".hdr");
}

struct VolumeHeader {
  Shape3 shape;
  Spacing spacing;
  DType dtype = DType::float32;
  fs::path payload;
};

inline VolumeHeader read_header(const fs::path& path) {
  const fs::path hdr = header_path(path);
  std::ifstream in(hdr);
  if (!in) throw IoError("cannot open volume header " + hdr.string());

  VolumeHeader h;
  bool have_magic = false, have_shape = false, have_spacing = false, have_dtype = false;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    if (key == "regfree-volume") {
      int version = 0;
      if (!(ls >> version) || version != 1) throw FormatError("unsupported header version in " + hdr.string());
      have_magic = true;
    } else if (key == "shape") {
      if (!(ls >> h.shape.d >> h.shape.h >> h.shape.w)) throw FormatError("malformed shape in " + hdr.string());
      have_shape = true;
    } else if (key == "spacing") {
      if (!(ls >> h.spacing.z >> h.spacing.y >> h.spacing.x)) throw FormatError("malformed spacing in " + hdr.string());
      have_spacing = true;
    } else if (key == "dtype") {
      std::string t;
      ls >> t;
      h.dtype = parse_dtype(t);
      have_dtype = true;
    } else if (key == "data") {
      std::string name;
      ls >> name;
      h.payload = hdr.parent_path() / name;
    } else {
      throw FormatError("unknown header key '" + key + "' in " + hdr.string());
    }
  }
  if (!have_magic || !have_shape || !have_spacing || !have_dtype) {
    throw FormatError("incomplete volume header " + hdr.string());
  }
  if (!h.shape.positive()) throw FormatError("non-positive shape in " + hdr.string());
  if (!h.spacing.positive()) throw FormatError("non-positive spacing in " + hdr.string());
  if (h.payload.empty()) h.payload = fs::path(hdr).replace_extension(".raw");
  return h;
}

namespace detail {

template <class T>
std::vector<T> read_payload(const VolumeHeader& h) {
  std::ifstream in(h.payload, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open volume payload " + h.payload.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = h.shape.voxels() * dtype_size(h.dtype);
  if (bytes != expected) {
    throw ShapeError("payload " + h.payload.string() + " has " + std::to_string(bytes) + " bytes, header shape " +
                     to_string(h.shape) + " needs " + std::to_string(expected));
  }
  in.seekg(0);
  std::vector<char> raw(bytes);
  in.read(raw.data(), static_cast<std::streamsize>(bytes));

  std::vector<T> out(h.shape.voxels());
  auto fill = [&]<class S>(S) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      S s;
      std::memcpy(&s, raw.data() + i * sizeof(S), sizeof(S));
      out[i] = static_cast<T>(s);
    }
  };
  switch (h.dtype) {
    case DType::float32: fill(float{}); break;
    case DType::float64: fill(double{}); break;
    case DType::uint8: fill(std::uint8_t{}); break;
  }
  return out;
}

template <class T>
void write_files(const fs::path& path, const Shape3& shape, const Spacing& spacing, std::span<const T> data) {
  const fs::path hdr = header_path(path);
  const fs::path raw = fs::path(hdr).replace_extension(".raw");
  if (hdr.has_parent_path()) fs::create_directories(hdr.parent_path());
  {
    std::ofstream out(hdr, std::ios::trunc);
    if (!out) throw IoError("cannot write " + hdr.string());
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    out << "regfree-volume 1\n";
    out << "shape " << shape.d << ' ' << shape.h << ' ' << shape.w << '\n';
    out << "spacing " << spacing.z << ' ' << spacing.y << ' ' << spacing.x << '\n';
    out << "dtype " << dtype_name(dtype_of<T>()) << '\n';
    out << "data " << raw.filename().string() << '\n';
  }
  std::ofstream out(raw, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + raw.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  if (!out) throw IoError("short write to " + raw.string());
}

}  // namespace detail

template <class T>
void save_volume(const VoxelVolume<T>& v, const fs::path& path, VolumeFormat = VolumeFormat::raw) {
  detail::write_files<T>(path, v.shape(), v.spacing(), v.data());
}

/// Loads any stored dtype, converting to T.
template <class T = float>
VoxelVolume<T> load_volume(const fs::path& path, VolumeFormat = VolumeFormat::raw) {
  const VolumeHeader h = read_header(path);
  return VoxelVolume<T>(h.shape, h.spacing, detail::read_payload<T>(h));
}

inline void save_mask(const BinaryMask& m, const fs::path& path, Spacing spacing = {}) {
  detail::write_files<std::uint8_t>(path, m.shape(), spacing, m.data());
}

/// Accepts any dtype whose values are exactly 0 or 1.
inline BinaryMask load_mask(const fs::path& path) {
  const VolumeHeader h = read_header(path);
  const auto values = detail::read_payload<double>(h);
  std::vector<std::uint8_t> bits(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] != 0.0 && values[i] != 1.0) throw FormatError("mask " + path.string() + " is not binary");
    bits[i] = values[i] != 0.0 ? 1 : 0;
  }
  return BinaryMask(h.shape, std::move(bits));
}

// Landmark files: one implant per line, nine integers
//   vertex_z vertex_y vertex_x  midpoint_z midpoint_y midpoint_x  base_z base_y base_x
// '#' starts a comment.
inline std::vector<LandmarkTriple> read_landmarks(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmark file " + path.string());
  std::vector<LandmarkTriple> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<int> v;
    int value = 0;
    while (ls >> value) v.push_back(value);
    if (!ls.eof()) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": non-integer landmark value");
    if (v.empty()) continue;
    if (v.size() != 9) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 9 integers, got " +
                        std::to_string(v.size()));
    }
    out.push_back({{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, {v[6], v[7], v[8]}});
  }
  if (out.empty()) throw FormatError("landmark file " + path.string() + " has no records");
  return out;
}

inline void write_landmarks(const std::vector<LandmarkTriple>& records, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "# vertex(z y x) midpoint(z y x) base(z y x)\n";
  for (const auto& r : records) {
    for (const Index3& p : {r.vertex, r.midpoint, r.base}) out << p.z << ' ' << p.y << ' ' << p.x << "  ";
    out << '\n';
  }
}

/// Plain `key = value` text; '#' comments; later keys override earlier ones.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      const std::string key = trim(line.substr(0, eq));
      if (key.empty() && eq == std::string::npos) continue;
      if (eq == std::string::npos || key.empty()) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      kv.values_[key] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    return parse(in, path.string());
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <class N>
  N get(const std::string& key, N fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : to_number<N>(key, it->second);
  }

  template <class N>
  N require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    return to_number<N>(key, it->second);
  }

  bool get_flag(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: " + v);
  }

  template <class N>
  std::vector<N> get_list(const std::string& key, std::vector<N> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string s = it->second;
    std::replace(s.begin(), s.end(), ',', ' ');
    std::istringstream ls(s);
    std::vector<N> out;
    std::string tok;
    while (ls >> tok) out.push_back(to_number<N>(key, tok));
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  template <class N>
  static N to_number(const std::string& key, const std::string& text) {
    if constexpr (std::is_floating_point_v<N>) {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return static_cast<N>(v);
      } catch (const std::exception&) {
      }
    } else {
      N v{};
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec == std::errc{} && ptr == text.data() + text.size()) return v;
    }
    throw ConfigError("config key '" + key + "' has invalid numeric value '" + text + "'");
  }

  std::map<std::string, std::string> values_;
};

}  // namespace regfreenet::io
