#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/conversation.hpp"
#include "voxelbridge/error.hpp"

namespace voxelbridge {

namespace fs = std::filesystem;

struct ManifestRecord {
  std::string record_id;
  std::string subject_id;
  std::string volume_path;  // relative to the manifest's directory unless absolute
  std::string stimulus_id;
  int trial_index = 0;
};

/// Line-delimited JSON. The first line is a header object carrying
/// `targets_path`; every following line is one record.
struct DatasetManifest {
  fs::path base_dir;
  std::string targets_path;
  std::vector<ManifestRecord> records;

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }
  fs::path targets_dir() const { return resolve(targets_path); }

  void validate_unique() const {
    std::set<std::tuple<std::string, std::string, int>> seen;
    std::set<std::string> ids;
    for (const auto& r : records) {
      require(r.trial_index >= 0, ErrorKind::invalid_argument, "negative trial_index in " + r.record_id);
      require(seen.emplace(r.stimulus_id, r.subject_id, r.trial_index).second, ErrorKind::invalid_argument,
              "duplicate (stimulus, subject, trial) for record " + r.record_id);
      require(ids.insert(r.record_id).second, ErrorKind::invalid_argument, "duplicate record_id " + r.record_id);
    }
  }
};

inline std::string encode_manifest(const DatasetManifest& m) {
  std::string out = nlohmann::ordered_json{{"targets_path", m.targets_path}}.dump() + "\n";
  for (const auto& r : m.records) {
    nlohmann::ordered_json j{{"record_id", r.record_id},   {"subject_id", r.subject_id},
                             {"volume_path", r.volume_path}, {"stimulus_id", r.stimulus_id},
                             {"trial_index", r.trial_index}};
    out += j.dump() + "\n";
  }
  return out;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  m.validate_unique();
  io::write_file(path, encode_manifest(m));
}

inline DatasetManifest read_manifest(const fs::path& path) {
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::istringstream in(io::read_file(path));
  std::string line;
  bool header = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      if (header) {
        m.targets_path = j.at("targets_path").get<std::string>();
        header = false;
        continue;
      }
      ManifestRecord r;
      r.record_id = j.at("record_id").get<std::string>();
      r.subject_id = j.at("subject_id").get<std::string>();
      r.volume_path = j.at("volume_path").get<std::string>();
      r.stimulus_id = j.at("stimulus_id").get<std::string>();
      r.trial_index = j.at("trial_index").get<int>();
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  require(!header, ErrorKind::parse, path.string() + ": missing header line with targets_path");
  m.validate_unique();
  return m;
}

/// Ground truth for one stimulus.
struct StimulusTargets {
  std::string stimulus_id;
  std::vector<float> z_c;
  std::vector<float> z_v;
  std::vector<std::string> captions;
  std::vector<std::string> objects;  // concept strings for localization instructions
  std::vector<ConversationRecord> conversations;
  std::optional<fs::path> image_path;
};

namespace detail {
inline std::vector<std::string> read_lines(const fs::path& p) {
  std::vector<std::string> lines;
  if (!fs::exists(p)) return lines;
  std::istringstream in(io::read_file(p));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}
inline std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}
}  // namespace detail

/// Directory-per-stimulus store: z_c.f32, z_v.f32, captions.txt, objects.txt,
/// optional image.ppm and conversations/*.json.
class TargetStore {
 public:
  TargetStore(fs::path root, std::size_t d_c, std::size_t d_v) : root_(std::move(root)), d_c_(d_c), d_v_(d_v) {}

  /// Creates the store root and records its vector dims in store.json.
  static TargetStore create(fs::path root, std::size_t d_c, std::size_t d_v) {
    fs::create_directories(root);
    io::write_file(root / "store.json", nlohmann::ordered_json{{"d_c", d_c}, {"d_v", d_v}}.dump() + "\n");
    return TargetStore(std::move(root), d_c, d_v);
  }

  static TargetStore open(fs::path root) {
    try {
      const auto j = nlohmann::json::parse(io::read_file(root / "store.json"));
      return TargetStore(std::move(root), j.at("d_c").get<std::size_t>(), j.at("d_v").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::parse, "store.json: " + std::string(e.what()));
    }
  }

  const fs::path& root() const { return root_; }
  std::size_t d_c() const { return d_c_; }
  std::size_t d_v() const { return d_v_; }

  void write(const StimulusTargets& t) const {
    require(t.z_c.size() == d_c_ && t.z_v.size() == d_v_, ErrorKind::shape,
            "target dims mismatch for " + t.stimulus_id);
    const auto dir = root_ / t.stimulus_id;
    fs::create_directories(dir / "conversations");
    io::write_f32_file(dir / "z_c.f32", t.z_c);
    io::write_f32_file(dir / "z_v.f32", t.z_v);
    io::write_file(dir / "captions.txt", detail::join_lines(t.captions));
    if (!t.objects.empty()) io::write_file(dir / "objects.txt", detail::join_lines(t.objects));
    for (std::size_t i = 0; i < t.conversations.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%04zu.json", i);
      io::write_file(dir / "conversations" / name, to_json(t.conversations[i]).dump(1) + "\n");
    }
  }

  bool contains(const std::string& stimulus_id) const { return fs::is_directory(root_ / stimulus_id); }

  StimulusTargets read(const std::string& stimulus_id) const {
    const auto dir = root_ / stimulus_id;
    require(fs::is_directory(dir), ErrorKind::io, "no targets for stimulus " + stimulus_id);
    StimulusTargets t;
    t.stimulus_id = stimulus_id;
    t.z_c = io::read_f32_file(dir / "z_c.f32");
    t.z_v = io::read_f32_file(dir / "z_v.f32");
    require(t.z_c.size() == d_c_, ErrorKind::shape, stimulus_id + ": z_c length " + std::to_string(t.z_c.size()));
    require(t.z_v.size() == d_v_, ErrorKind::shape, stimulus_id + ": z_v length " + std::to_string(t.z_v.size()));
    t.captions = detail::read_lines(dir / "captions.txt");
    t.objects = detail::read_lines(dir / "objects.txt");
    if (fs::exists(dir / "image.ppm")) t.image_path = dir / "image.ppm";
    if (fs::is_directory(dir / "conversations")) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir / "conversations"))
        if (e.path().extension() == ".json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) t.conversations.push_back(conversation_from_json(nlohmann::json::parse(io::read_file(f))));
    }
    return t;
  }

  std::vector<std::string> stimulus_ids() const {
    std::vector<std::string> ids;
    if (!fs::is_directory(root_)) return ids;
    for (const auto& e : fs::directory_iterator(root_))
      if (e.is_directory()) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    return ids;
  }

 private:
  fs::path root_;
  std::size_t d_c_;
  std::size_t d_v_;
};

inline void check_manifest_targets(const DatasetManifest& m, const TargetStore& store) {
  for (const auto& r : m.records)
    require(store.contains(r.stimulus_id), ErrorKind::invalid_argument,
            "record " + r.record_id + " references missing stimulus " + r.stimulus_id);
}

}  // namespace voxelbridge
