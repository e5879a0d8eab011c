#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace shjb {

enum ExitCode { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3, kExitNotConverged = 4 };

// Schema violation at a JSON path such as "/lattice/cells/0".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& msg)
      : std::runtime_error(path + ": " + msg), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

std::vector<std::string> subcommands();

// 64-bit FNV-1a over the canonical (sorted-key) dump of the config.
std::string config_hash(const nlohmann::json& config);

// Runs one subcommand and writes its artifacts and manifest.json into out_dir.
// `halvings` overrides the convergence study depth when positive.
int run(const std::string& subcommand, const nlohmann::json& config, const std::filesystem::path& out_dir,
        int halvings = 0);

int run_cli(int argc, char** argv);

}  // namespace shjb
