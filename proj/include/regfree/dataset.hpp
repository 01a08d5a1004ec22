#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "regfree/io.hpp"
#include "regfree/labelgen.hpp"

namespace regfreenet {

namespace fs = std::filesystem;

/// Environment variable naming the directory relative manifest paths resolve against.
inline constexpr const char* kDataRootEnv = "REGFREE_DATA_ROOT";

struct ManifestEntry {
  fs::path volume;
  fs::path landmarks;
  std::string split;
  std::string patient_id;
};

/// Throws LeakageError when one patient id shows up under more than one split.
inline void check_patient_splits(const std::vector<ManifestEntry>& entries) {
  std::map<std::string, std::set<std::string>> splits_of;
  for (const auto& e : entries) splits_of[e.patient_id].insert(e.split);
  for (const auto& [patient, splits] : splits_of) {
    if (splits.size() > 1) {
      std::string joined;
      for (const auto& s : splits) joined += (joined.empty() ? "" : ", ") + s;
      throw LeakageError("patient '" + patient + "' appears in several splits: " + joined);
    }
  }
}

/// Manifest lines: `volume_path landmark_path split patient_id`, '#' comments.
/// Relative paths resolve against `root`; an empty root means $REGFREE_DATA_ROOT when
/// set, otherwise the manifest's own directory.
inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const fs::path& root,
                                                 const std::string& origin = "<manifest>") {
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 4) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected 'volume landmarks split patient_id'");
    }
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : root / p; };
    out.push_back({resolve(tok[0]), resolve(tok[1]), tok[2], tok[3]});
  }
  check_patient_splits(out);
  return out;
}

inline fs::path default_data_root(const fs::path& manifest) {
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return fs::path(env);
  return manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
}

inline std::vector<ManifestEntry> load_manifest(const fs::path& path, const fs::path& root = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, root.empty() ? default_data_root(path) : root, path.string());
}

inline std::vector<ManifestEntry> select_split(const std::vector<ManifestEntry>& entries, const std::string& split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (split.empty() || e.split == split) out.push_back(e);
  return out;
}

/// A loaded scan with its cylindrical label.
struct Scan {
  std::string id;
  std::string patient_id;
  VoxelVolume<float> volume;
  BinaryMask label;
};

inline std::string scan_id(const ManifestEntry& e) { return io::header_path(e.volume).stem().string(); }

inline Scan load_scan(const ManifestEntry& e, double label_radius) {
  Scan s;
  s.id = scan_id(e);
  s.patient_id = e.patient_id;
  s.volume = io::load_volume<float>(e.volume);
  const auto records = io::read_landmarks(e.landmarks);
  s.label = rasterize_implants(records, s.volume.shape(), label_radius);
  return s;
}

inline std::vector<Scan> load_scans(const std::vector<ManifestEntry>& entries, double label_radius) {
  std::vector<Scan> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(load_scan(e, label_radius));
  return out;
}

}  // namespace regfreenet
