#include "topocat/scenario.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

// Exit codes: 0 ok, 1 unexpected error, 2 validation, 3 numerical failure.
int report_validation(const topocat::ValidationError& e, const std::string& file) {
  auto j = e.to_json();
  j["file"] = file;
  std::cout << j.dump() << std::endl;
  return 2;
}

int worker_count() {
  const char* env = std::getenv("TOPOCAT_WORKERS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw topocat::ValidationError("", std::string("TOPOCAT_WORKERS must be an integer in [1, 1024], got '") + env + "'");
  }
  return static_cast<int>(n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kerr-edged SSH cavity array simulator"};
  app.require_subcommand(1);

  std::string run_file, validate_file, out_dir;
  auto* run = app.add_subcommand("run", "Run a scenario file or bundled scenario name");
  run->add_option("file", run_file, "Scenario JSON file or bundled name")->required();
  run->add_option("-o,--output", out_dir, "Output directory (overrides the scenario)");
  auto* list = app.add_subcommand("list", "List bundled scenarios");
  auto* validate = app.add_subcommand("validate", "Check a scenario without running it");
  validate->add_option("file", validate_file, "Scenario JSON file or bundled name")->required();
  auto* version = app.add_subcommand("version", "Print the tool version");

  CLI11_PARSE(app, argc, argv);

  if (*version) {
    std::cout << "topocat " << TOPOCAT_VERSION << "\n";
    return 0;
  }
  if (*list) {
    for (const auto& name : topocat::list_scenarios()) std::cout << name << "\n";
    return 0;
  }
  if (*validate) {
    const auto path = topocat::resolve_scenario(validate_file);
    try {
      const auto sc = topocat::load_scenario(path);
      std::cout << nlohmann::json{{"valid", true}, {"name", sc.name}, {"resolved", sc.resolved}}.dump(2) << "\n";
      return 0;
    } catch (const topocat::ValidationError& e) {
      return report_validation(e, path.string());
    }
  }

  const auto path = topocat::resolve_scenario(run_file);
  try {
    topocat::RunOptions opt;
    opt.workers = worker_count();
    if (!out_dir.empty()) opt.output_dir = out_dir;
    const auto sc = topocat::load_scenario(path);
    const auto outcome = topocat::run_scenario(sc, opt);
    const auto& m = outcome.manifest;
    if (outcome.exit_code == 0) {
      std::cerr << sc.name << ": " << m.outputs.size() << " files in " << outcome.output_dir.string() << " ("
                << m.wall_clock_seconds << " s)\n";
    } else {
      std::cerr << sc.name << ": numerical failure: " << m.error << "\n"
                << "partial outputs and manifest in " << outcome.output_dir.string() << "\n";
    }
    return outcome.exit_code;
  } catch (const topocat::ValidationError& e) {
    return report_validation(e, path.string());
  } catch (const topocat::UsageError& e) {
    return report_validation(topocat::ValidationError("", e.what()), path.string());
  } catch (const topocat::CapacityError& e) {
    return report_validation(topocat::ValidationError("", e.what()), path.string());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
