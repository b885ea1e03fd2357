#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mfdl/commands.hpp"
#include "mfdl/errors.hpp"

namespace {

const char* describe(const std::string& name) {
  if (name == "cov-heatmap") return "Product or local-product covariance heatmap of a trained model";
  if (name == "depth-gap") return "HMC mean-field gap (E_W, E_KL) across depths";
  if (name == "mvg-check") return "Matrix-variate Gaussian product covariance against Monte Carlo";
  if (name == "uat-demo") return "Two-layer mean-field network matching a target predictive";
  if (name == "train") return "Train a mean-field network";
  if (name == "prior-density") return "Prior density of one product-matrix element per depth";
  return "";
}

nlohmann::json read_config_file(const std::string& path) {
  if (path.empty()) return nullptr;
  std::ifstream in(path);
  if (!in) throw mfdl::ConfigError("cannot open config file " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw mfdl::ConfigError("config file " + path + " is not valid JSON");
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field deep network experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out = std::getenv("MFDL_OUT") ? std::getenv("MFDL_OUT") : "out";
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  int jobs = 1;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  CLI::Option* seed_opt = app.add_option("--seed", seed, "Master seed");
  app.add_option("--out", out, "Output directory (default: $MFDL_OUT or ./out)");
  app.add_option("--jobs", jobs, "Parallel jobs")->check(CLI::PositiveNumber);
  app.add_option("--set", overrides, "Config override key=value, repeatable (nested keys use dots)");
  app.add_flag_callback(
      "--print-defaults",
      [&]() {
        for (const std::string& name : mfdl::command_names()) {
          std::cout << name << ":\n" << mfdl::default_config(name).dump(2) << "\n";
        }
        std::exit(0);
      },
      "Print the default config of every command and exit");

  for (const std::string& name : mfdl::command_names()) {
    app.add_subcommand(name, describe(name))->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (seed_opt->count() > 0) overrides.push_back("seed=" + std::to_string(seed));
    const nlohmann::json config = mfdl::resolve_config(command, read_config_file(config_path), overrides);
    const mfdl::CommandResult result = mfdl::run_command(command, config, {out, jobs});
    for (const std::string& line : result.lines) std::cout << line << "\n";
    for (const auto& f : result.files) std::cout << "wrote " << f.string() << "\n";
    if (!result.failures.empty()) {
      std::cerr << result.failures.size() << " failure(s):\n";
      for (const std::string& f : result.failures) std::cerr << "  " << f << "\n";
      return 1;
    }
  } catch (const mfdl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << command << " failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
