#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <pathent/experiments.hpp>

namespace cli = pathent::cli;

int main(int argc, char** argv) {
  CLI::App app{"Path-entanglement device simulator"};
  cli::ExperimentSpec spec;
  bool print_preset = false;

  std::string names;
  for (const auto& e : cli::experiments()) names += std::string(names.empty() ? "" : ", ") + e.name;
  app.add_option("experiment", spec.experiment, "one of: " + names);
  app.add_option("-c,--config", spec.config_path, "INI config; keys left out keep their preset values");
  app.add_option("-o,--out", spec.out_dir, "output directory")->capture_default_str();
  app.add_option("-s,--seed", spec.seed, "master seed")->capture_default_str();
  app.add_option("--set", spec.overrides, "override a config key, key=value (repeatable)");
  app.add_flag("--print-preset", print_preset, "print every config key with its default and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(cli::ExitCode::usage);
  }

  if (print_preset) {
    std::cout << cli::preset_ini();
    return 0;
  }
  if (spec.experiment.empty()) {
    std::cerr << "error: no experiment given (one of " << names << ")\n";
    return static_cast<int>(cli::ExitCode::usage);
  }

  try {
    const auto result = cli::run(spec);
    std::cout << result.dump(2) << '\n';
  } catch (const cli::CliError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(cli::ExitCode::runtime_failure);
  }
  return 0;
}
