#include "deepap/cli/manifest.h"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "deepap/errors.h"

namespace deepap::cli {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("sha256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw std::runtime_error("sha256 final failed");
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
    return os.str();
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (is) {
    is.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  return h.hex();
}

const StageRecord* RunManifest::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::string RunManifest::header_text() const {
  return "deepap-manifest 1\nartifact_version " + artifact_version + "\nconfig_sha256 " + config_sha256 + "\n";
}

std::string RunManifest::stage_text(const StageRecord& stage) {
  std::ostringstream os;
  os << "stage " << stage.name << "\n";
  os << "wall_seconds " << std::fixed << std::setprecision(3) << stage.wall_seconds << "\n";
  for (const auto& f : stage.files) os << "file " << f.path << ' ' << f.bytes << ' ' << f.sha256 << "\n";
  os << "end\n";
  return os.str();
}

std::string RunManifest::to_text() const {
  std::string out = header_text();
  for (const auto& s : stages) out += stage_text(s);
  return out;
}

RunManifest RunManifest::parse(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    return DataError("manifest line " + std::to_string(lineno) + ": " + what);
  };
  auto next = [&]() -> bool {
    if (!std::getline(is, line)) return false;
    ++lineno;
    return true;
  };
  RunManifest m;
  if (!next() || line != "deepap-manifest 1") throw fail("not a deepap manifest");
  if (!next() || line.rfind("artifact_version ", 0) != 0) throw fail("expected artifact_version");
  m.artifact_version = line.substr(17);
  if (!next() || line.rfind("config_sha256 ", 0) != 0) throw fail("expected config_sha256");
  m.config_sha256 = line.substr(14);
  StageRecord* open = nullptr;
  while (next()) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "stage") {
      if (open) throw fail("stage block not closed");
      m.stages.emplace_back();
      open = &m.stages.back();
      ls >> open->name;
    } else if (word == "wall_seconds" && open) {
      ls >> open->wall_seconds;
    } else if (word == "file" && open) {
      FileRecord f;
      ls >> f.path >> f.bytes >> f.sha256;
      if (ls.fail() || f.sha256.size() != 64) throw fail("malformed file entry");
      open->files.push_back(f);
    } else if (word == "end" && open) {
      open = nullptr;
    } else {
      throw fail("unexpected '" + line + "'");
    }
  }
  // A stage interrupted before writing "end" is dropped.
  if (open) m.stages.pop_back();
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing manifest " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::vector<std::string> verify_files(const std::filesystem::path& run_dir, const std::vector<FileRecord>& files) {
  std::vector<std::string> problems;
  for (const auto& f : files) {
    const auto p = run_dir / f.path;
    if (!std::filesystem::exists(p)) {
      problems.push_back(f.path + ": missing");
    } else if (sha256_file(p) != f.sha256) {
      problems.push_back(f.path + ": digest mismatch");
    }
  }
  return problems;
}

std::vector<std::string> verify_manifest(const std::filesystem::path& run_dir, const RunManifest& manifest) {
  std::vector<std::string> problems;
  for (const auto& s : manifest.stages) {
    for (auto& p : verify_files(run_dir, s.files)) problems.push_back(s.name + " " + p);
  }
  return problems;
}

FileRecord record_file(const std::filesystem::path& run_dir, const std::filesystem::path& relative) {
  const auto p = run_dir / relative;
  return {relative.generic_string(), std::filesystem::file_size(p), sha256_file(p)};
}

}  // namespace deepap::cli
