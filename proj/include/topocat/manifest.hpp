#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace topocat {

std::string sha256_hex(const std::string& bytes);
// IOError-style failures surface as std::runtime_error.
std::string sha256_file(const std::filesystem::path& file);

struct OutputFile {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
  std::string description;
};

struct RunManifest {
  std::string tool_version = TOPOCAT_VERSION;
  std::string scenario;
  std::string status = "ok";  // ok | numerical_failure
  std::string error;
  nlohmann::json parameters;  // fully resolved scenario
  int workers = 1;
  double wall_clock_seconds = 0.0;
  std::string started_utc;
  std::vector<OutputFile> outputs;
  std::vector<std::string> warnings;

  // Hashes `relative` inside `dir` and appends it.
  void add_output(const std::filesystem::path& dir, const std::string& relative, const std::string& description);
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& file) const;
  // Recomputes every checksum; returns the paths that no longer match.
  std::vector<std::string> verify(const std::filesystem::path& dir) const;
};

RunManifest read_manifest(const std::filesystem::path& file);

}  // namespace topocat
