#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>

#include <Eigen/Core>
#include <json.hpp>

#include "voxelbridge/binary_io.hpp"
#include "voxelbridge/config.hpp"
#include "voxelbridge/error.hpp"

namespace voxelbridge {

inline constexpr std::string_view kVersion = "0.1.0";

/// `<workdir>/runs/<command>-NNN`, the first free number. Existing run
/// directories are never reused.
inline std::filesystem::path make_run_dir(const std::filesystem::path& workdir, const std::string& command) {
  const auto runs = workdir / "runs";
  std::filesystem::create_directories(runs);
  for (int n = 1; n < 100000; ++n) {
    char name[32];
    std::snprintf(name, sizeof name, "-%03d", n);
    const auto dir = runs / (command + name);
    if (std::filesystem::create_directory(dir)) return dir;
  }
  fail(ErrorKind::io, "no free run directory under " + runs.string());
}

inline nlohmann::ordered_json versions() {
  return {{"voxelbridge", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

/// Wall clock of one subcommand plus the bookkeeping every run leaves behind.
class RunRecord {
 public:
  RunRecord(std::filesystem::path dir, std::string command, const RunConfig& config)
      : dir_(std::move(dir)), command_(std::move(command)), config_(config), start_(std::chrono::steady_clock::now()) {
    io::write_file(dir_ / "config.txt", config_.echo());
  }

  const std::filesystem::path& dir() const { return dir_; }

  void finish(int exit_code, const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) const {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::ordered_json j{{"command", command_},
                             {"seed", config_.str("seed")},
                             {"threads", config_.integer("threads")},
                             {"exit_code", exit_code},
                             {"wall_seconds", wall},
                             {"versions", versions()},
                             {"config", config_.to_json()}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    io::write_file(dir_ / "run.json", j.dump(2) + "\n");
  }

 private:
  std::filesystem::path dir_;
  std::string command_;
  RunConfig config_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace voxelbridge
