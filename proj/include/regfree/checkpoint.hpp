#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "regfree/nn/tensor.hpp"
#include "regfree/optim.hpp"

namespace regfreenet {

/// One optimizer step in the loss log.
struct StepLog {
  long step = 0;
  double lr = 0.0;
  double dice = 0.0;
  double ce = 0.0;
  double slope = 0.0;
  double total = 0.0;

  bool operator==(const StepLog&) const = default;
};

/// Binary snapshot of everything a resumed run needs: parameters, optimizer moments,
/// step counter and the loss history so far.
///
/// Layout (little endian):
///   "RGFCKPT\0" u32 version, u64 network fingerprint, u64 training fingerprint,
///   i64 step, u64 n_log, n_log * {i64, 5 * f64},
///   u64 n_params, n_params * {u32 name_len, name, u64 count, count * T, count * f64 m, count * f64 v}
namespace ckpt {

inline constexpr char kMagic[8] = {'R', 'G', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kVersion = 1;

struct Header {
  std::uint64_t network_fingerprint = 0;
  std::uint64_t training_fingerprint = 0;
  long step = 0;
};

namespace detail {

template <class V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
void put_span(std::ostream& out, const std::vector<V>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(V)));
}

template <class V>
V get(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw FormatError("truncated checkpoint");
  return v;
}

template <class V>
void get_span(std::istream& in, std::vector<V>& v) {
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(V)));
  if (!in) throw FormatError("truncated checkpoint");
}

}  // namespace detail

template <class T>
void save(const std::filesystem::path& path, const Header& h, const std::vector<StepLog>& log,
          const nn::ParamList<T>& params, AdamW<T>& opt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Write to a sibling file first so an interrupted save never clobbers a good checkpoint.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    detail::put(out, kVersion);
    detail::put(out, h.network_fingerprint);
    detail::put(out, h.training_fingerprint);
    detail::put(out, static_cast<std::int64_t>(h.step));
    detail::put(out, static_cast<std::uint64_t>(log.size()));
    for (const auto& r : log) {
      detail::put(out, static_cast<std::int64_t>(r.step));
      for (double v : {r.lr, r.dice, r.ce, r.slope, r.total}) detail::put(out, v);
    }
    detail::put(out, static_cast<std::uint64_t>(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& p = *params[k];
      detail::put(out, static_cast<std::uint32_t>(p.name.size()));
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      detail::put(out, static_cast<std::uint64_t>(p.size()));
      detail::put_span(out, p.value);
      detail::put_span(out, opt.first_moments()[k]);
      detail::put_span(out, opt.second_moments()[k]);
    }
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Restores parameters, moments and the log. Fingerprints must equal `expect`.
template <class T>
Header load(const std::filesystem::path& path, const Header& expect, std::vector<StepLog>& log,
            const nn::ParamList<T>& params, AdamW<T>& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError(path.string() + " is not a checkpoint");
  if (detail::get<std::uint32_t>(in) != kVersion) throw FormatError("unsupported checkpoint version");

  Header h;
  h.network_fingerprint = detail::get<std::uint64_t>(in);
  h.training_fingerprint = detail::get<std::uint64_t>(in);
  if (h.network_fingerprint != expect.network_fingerprint) {
    throw ConfigError("checkpoint was written for a different network configuration");
  }
  if (h.training_fingerprint != expect.training_fingerprint) {
    throw ConfigError("checkpoint was written for a different training configuration");
  }
  h.step = static_cast<long>(detail::get<std::int64_t>(in));

  const auto n_log = detail::get<std::uint64_t>(in);
  log.clear();
  for (std::uint64_t i = 0; i < n_log; ++i) {
    StepLog r;
    r.step = static_cast<long>(detail::get<std::int64_t>(in));
    r.lr = detail::get<double>(in);
    r.dice = detail::get<double>(in);
    r.ce = detail::get<double>(in);
    r.slope = detail::get<double>(in);
    r.total = detail::get<double>(in);
    log.push_back(r);
  }

  if (detail::get<std::uint64_t>(in) != params.size()) throw FormatError("checkpoint parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    std::string name(detail::get<std::uint32_t>(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (!in || name != p.name) throw FormatError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
    if (detail::get<std::uint64_t>(in) != p.size()) throw FormatError("checkpoint size mismatch for " + p.name);
    detail::get_span(in, p.value);
    detail::get_span(in, opt.first_moments()[k]);
    detail::get_span(in, opt.second_moments()[k]);
  }
  opt.set_step_count(h.step);
  return h;
}

}  // namespace ckpt
}  // namespace regfreenet
