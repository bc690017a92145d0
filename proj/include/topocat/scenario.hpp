#pragma once

#include "topocat/errors.hpp"
#include "topocat/manifest.hpp"
#include "topocat/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace topocat {

// Config problem located by a JSON pointer into the scenario document.
class ValidationError : public UsageError {
 public:
  ValidationError(std::string pointer, const std::string& message)
      : UsageError(pointer.empty() ? message : pointer + ": " + message), pointer_(std::move(pointer)), message_(message) {}
  const std::string& pointer() const { return pointer_; }
  nlohmann::json to_json() const {
    return {{"error", "validation"}, {"pointer", pointer_}, {"message", message_}};
  }

 private:
  std::string pointer_;
  std::string message_;
};

inline const std::vector<std::string> kOutputKinds = {"spectrum", "winding",  "edge_profile", "excitation", "rk_sweep",
                                                      "evolve",   "wigner",   "metrics",      "transmission"};

struct Scenario {
  std::string name;
  std::string description;
  std::string variant;  // "", "desk" or "full"
  std::uint64_t seed = 2024;
  std::string output_dir;
  ArrayParams params;
  std::vector<int> cutoffs;  // resolved truncation, canonical mode order
  std::size_t dimension_cap = 0;
  int max_total_photons = -1;  // dense evolution only; < 0 keeps every product state
  std::vector<std::string> outputs;  // requested kinds, in kOutputKinds order
  nlohmann::json resolved;           // full document with every default filled in

  bool wants(const std::string& kind) const;
  const nlohmann::json& section(const std::string& kind) const { return resolved.at("outputs").at(kind); }
};

// Applies defaults and validates every field; throws ValidationError.
Scenario parse_scenario(const nlohmann::json& document);
Scenario parse_scenario_text(const std::string& text);
Scenario load_scenario(const std::filesystem::path& file);

// TOPOCAT_SCENARIO_DIR overrides the installed location.
std::filesystem::path scenario_directory();
std::vector<std::string> list_scenarios();
// A bundled name or a path to a file.
std::filesystem::path resolve_scenario(const std::string& name_or_path);

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // overrides the scenario's
  int workers = 0;
};

struct RunOutcome {
  int exit_code = 0;  // 0 ok, 3 numerical failure (partial outputs kept)
  std::filesystem::path output_dir;
  RunManifest manifest;
};

// Writes CSV outputs and manifest.json. Numerical failures are caught and
// reported through the exit code; other errors propagate.
RunOutcome run_scenario(const Scenario& scenario, const RunOptions& options = {});

}  // namespace topocat
