#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "pmdi/runner.hpp"
#include "version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Passive MDI-QKD key-rate simulator"};
  app.set_version_flag("--version", pmdi::kVersion);

  std::string config_path;
  std::string mode_str;
  std::string out_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = -1;

  app.add_option("--config", config_path, "run configuration file")
      ->required();
  app.add_option("--mode", mode_str,
                 "scan | optimize | smallring | baseline | verify");
  app.add_option("--out", out_path, "CSV output path");
  app.add_option("--seed", seed, "random seed override")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--threads", threads, "worker threads (0 = default)");

  CLI11_PARSE(app, argc, argv);

  try {
    pmdi::RunConfig cfg = pmdi::parse_config_file(config_path);
    if (!mode_str.empty()) cfg.mode = pmdi::run_mode_from_string(mode_str);
    if (!out_path.empty()) {
      cfg.csv_path = out_path;
      cfg.manifest_path = out_path + ".manifest.json";
    }
    if (seed_set) cfg.seed = seed;
    if (threads >= 0) cfg.threads = threads;

    const pmdi::RunArtifacts art = pmdi::run(cfg);
    if (cfg.mode != pmdi::RunMode::Verify) {
      std::printf("wrote %zu rows to %s (%.1f s)\n", art.rows.size(),
                  art.csv_path.c_str(), art.wall_seconds);
    }
    return art.exit_code;
  } catch (const pmdi::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
