// Command-line driver: analyze -> reduce -> normal-form -> predict ->
// oracle -> compare -> weyl over a JSON configuration or a bundled preset.

#include <CLI11.hpp>
#include <iostream>

#include "magnf/run.hpp"
#include "magnf/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"semiclassical normal forms for magnetic Schrodinger operators"};
  app.set_version_flag("--version", magnf::kVersion);

  std::string config_path, preset, out_dir;
  magnf::RunOptions opt;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--preset", preset,
                 "bundled preset (quadratic-well-2d, landau, block-4d)");
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_flag("--dump-jets", opt.dump_jets, "write full jet dumps");
  app.add_flag("--dump-matrix", opt.dump_matrix,
               "write the oracle matrix in triplet form");
  app.add_option("--threads", opt.threads, "worker threads for sweeps")
      ->default_val(1);

  app.require_subcommand(1);
  for (const char* name :
       {"analyze", "reduce", "normal-form", "predict", "oracle", "compare", "weyl"})
    app.add_subcommand(name);

  CLI11_PARSE(app, argc, argv);

  try {
    nlohmann::json j;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) {
        std::cerr << "cannot open config file: " << config_path << "\n";
        return 2;
      }
      in >> j;
    } else if (!preset.empty()) {
      j = magnf::preset_config(preset);
    } else {
      std::cerr << "one of --config or --preset is required\n";
      return 2;
    }
    magnf::RunConfig cfg = magnf::load_config(j);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    const std::string sub = app.get_subcommands().front()->get_name();
    return magnf::run_command(sub, cfg, opt, std::cout);
  } catch (const magnf::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
