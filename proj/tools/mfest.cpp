#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mfest/errors.hpp"
#include "mfest/harness.hpp"

namespace {

int run(const std::string& target, std::optional<std::uint64_t> seed, const std::string& out, std::size_t threads,
        std::optional<double> burn_in) {
  const auto file = mfest::resolve_config(target, mfest::default_preset_dir());
  std::ifstream in(file);
  auto j = nlohmann::json::parse(in);
  if (seed) j["seed"] = *seed;
  if (burn_in) j["burn_in"] = *burn_in;
  const auto cfg = mfest::ExperimentConfig::from_json(j, file.stem().string());

  const auto start = std::chrono::steady_clock::now();
  const auto result = mfest::run_experiment(cfg, {threads});
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto paths = mfest::write_outputs(out, cfg, result, wall);

  std::cout << cfg.name << " (" << cfg.experiment << ") finished in " << wall << " s\n";
  for (const auto& c : result.checks)
    std::cout << "  " << (c.pass ? "ok   " : "MISS ") << c.name << ": " << c.value << " (target " << c.target << ")\n";
  if (result.failed_estimates) std::cout << "  failed estimates: " << result.failed_estimates << '\n';
  for (const auto& p : paths) std::cout << "  wrote " << p.string() << '\n';
  if (result.failed_points) {
    std::cerr << result.failed_points << " grid point(s) produced no estimate\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Eigenfunction martingale estimators for interacting particle systems"};
  app.require_subcommand(1);

  auto* run_cmd = app.add_subcommand("run", "Run a preset or a JSON configuration file");
  std::string target;
  std::optional<std::uint64_t> seed;
  std::string out = "results";
  std::size_t threads = 1;
  std::optional<double> burn_in;
  run_cmd->add_option("config", target, "Preset name or path to a JSON configuration")->required();
  run_cmd->add_option("--seed", seed, "Override the master seed");
  run_cmd->add_option("--out", out, "Output directory")->capture_default_str();
  run_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
  run_cmd->add_option("--burn-in", burn_in, "Override the burn-in duration");

  auto* list_cmd = app.add_subcommand("list", "List the checked-in presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*list_cmd) {
      const auto dir = mfest::default_preset_dir();
      for (const auto& name : mfest::list_presets(dir)) {
        std::string note;
        try {
          const auto cfg = mfest::ExperimentConfig::load(dir / (name + ".json"));
          note = cfg.experiment + (cfg.note.empty() ? "" : ": " + cfg.note);
        } catch (const mfest::Error& e) {
          note = std::string("invalid: ") + e.what();
        }
        std::cout << name << "  " << note << '\n';
      }
      return 0;
    }
    return run(target, seed, out, threads, burn_in);
  } catch (const mfest::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
