// Command-line entry: hsharp --manifest PATH [--workers N] [--out DIR] [--log-level LEVEL]

#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "hsharp/run.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Heisenberg-group Hessian toolkit"};
  std::string manifest_path, out_dir, level = "info";
  int workers = 1;
  app.add_option("--manifest", manifest_path, "manifest JSON")->required();
  app.add_option("--workers", workers, "worker threads (results do not depend on it)")->check(CLI::Range(1, 1024));
  app.add_option("--out", out_dir, "output directory (overrides the manifest)");
  app.add_option("--log-level", level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
  app.set_version_flag("--version", hsharp::kVersion);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 3;
  }
  spdlog::set_level(spdlog::level::from_str(level));
  spdlog::set_pattern("[%l] %v");

  try {
    const auto m = hsharp::cli::load_manifest(manifest_path);
    hsharp::cli::RunOptions ro;
    ro.workers = workers;
    if (!out_dir.empty()) ro.out_dir = out_dir;
    const auto s = hsharp::cli::run(m, ro);
    std::cout << fmt::format("{}: {} checks, {} passed, {} failed ({:.1f} s)\n", s.command, s.checks, s.passed,
                             s.failed, s.wall_time_s);
    return s.exit_code;
  } catch (const hsharp::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
