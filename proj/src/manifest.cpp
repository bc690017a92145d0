#include "topocat/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace topocat {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("cannot initialise SHA-256");
    }
  }
  void update(const char* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw std::runtime_error("SHA-256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw std::runtime_error("SHA-256 final failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

void RunManifest::add_output(const std::filesystem::path& dir, const std::string& relative,
                             const std::string& description) {
  const auto full = dir / relative;
  outputs.push_back({relative, sha256_file(full), std::filesystem::file_size(full), description});
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json files = nlohmann::json::array();
  for (const auto& f : outputs) {
    files.push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}, {"description", f.description}});
  }
  nlohmann::json j{{"tool", "topocat"},
                   {"tool_version", tool_version},
                   {"scenario", scenario},
                   {"status", status},
                   {"parameters", parameters},
                   {"workers", workers},
                   {"started_utc", started_utc},
                   {"wall_clock_seconds", wall_clock_seconds},
                   {"outputs", files},
                   {"warnings", warnings}};
  if (!error.empty()) j["error"] = error;
  return j;
}

void RunManifest::write(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << to_json().dump(2) << "\n";
}

std::vector<std::string> RunManifest::verify(const std::filesystem::path& dir) const {
  std::vector<std::string> bad;
  for (const auto& f : outputs) {
    const auto full = dir / f.path;
    if (!std::filesystem::exists(full) || sha256_file(full) != f.sha256) bad.push_back(f.path);
  }
  return bad;
}

RunManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  const auto j = nlohmann::json::parse(in);
  RunManifest m;
  m.tool_version = j.at("tool_version");
  m.scenario = j.at("scenario");
  m.status = j.at("status");
  m.parameters = j.at("parameters");
  m.workers = j.at("workers");
  m.started_utc = j.value("started_utc", "");
  m.wall_clock_seconds = j.at("wall_clock_seconds");
  m.error = j.value("error", "");
  m.warnings = j.value("warnings", std::vector<std::string>{});
  for (const auto& f : j.at("outputs")) {
    m.outputs.push_back({f.at("path"), f.at("sha256"), f.at("bytes"), f.value("description", "")});
  }
  return m;
}

}  // namespace topocat
