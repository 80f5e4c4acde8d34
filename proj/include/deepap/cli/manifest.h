#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace deepap::cli {

inline constexpr const char* kArtifactVersion = "0.1.0";

std::string sha256_hex(std::string_view bytes);
// Throws DataError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

struct FileRecord {
  std::string path;  // relative to the run directory, '/' separated
  std::uintmax_t bytes = 0;
  std::string sha256;
};

struct StageRecord {
  std::string name;
  double wall_seconds = 0.0;
  std::vector<FileRecord> files;
};

// Line-oriented text:
//   deepap-manifest 1
//   artifact_version 0.1.0
//   config_sha256 <hex>
//   stage <name>
//   wall_seconds <s>
//   file <path> <bytes> <sha256>
//   end
// Each stage appends one stage..end block.
struct RunManifest {
  std::string artifact_version = kArtifactVersion;
  std::string config_sha256;
  std::vector<StageRecord> stages;

  const StageRecord* stage(const std::string& name) const;
  std::string header_text() const;
  static std::string stage_text(const StageRecord& stage);
  std::string to_text() const;
  // Throws DataError on malformed text.
  static RunManifest parse(const std::string& text);
  static RunManifest load(const std::filesystem::path& path);
};

// Digest of every listed file under `run_dir`. Returns one message per
// missing or altered file; empty when everything matches.
std::vector<std::string> verify_files(const std::filesystem::path& run_dir, const std::vector<FileRecord>& files);
std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest);

FileRecord record_file(const std::filesystem::path& run_dir, const std::filesystem::path& relative);

}  // namespace deepap::cli
