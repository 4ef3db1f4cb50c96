// Command-line front end: subcommand dispatch plus config override plumbing.
// All real work lives in the library's run_subcommand.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rmoe/config.hpp"
#include "rmoe/runner.hpp"

namespace {

// One stderr line, no newlines inside, stable "error: " prefix.
int fail(const std::string& what) {
  std::string line = what;
  std::replace(line.begin(), line.end(), '\n', ';');
  std::fprintf(stderr, "error: %s\n", line.c_str());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixture-of-experts robustness workbench"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--set", sets, "override any config key (key=value)");

  // Shortcut flags for the keys that get swept in experiments. Collected as
  // strings so unset flags leave the config untouched.
  const std::vector<std::pair<std::string, std::string>> shortcuts = {
      {"--seed", "seed"},           {"--out", "out"},
      {"--epsilon", "attack.epsilon"}, {"--alpha", "dual.alpha"},
      {"--beta", "train.beta"},     {"--method", "train.method"},
      {"--routing", "model.routing"}, {"--experts", "model.experts"},
      {"--kl-variant", "train.kl_variant"}, {"--model", "io.model"},
      {"--model-b", "io.model_b"},  {"--standard", "io.standard"},
      {"--robust", "io.robust"},
  };
  std::vector<std::string> shortcut_values(shortcuts.size());
  for (std::size_t i = 0; i < shortcuts.size(); ++i)
    app.add_option(shortcuts[i].first, shortcut_values[i],
                   "sets " + shortcuts[i].second);

  for (const auto& name : rmoe::subcommands())
    app.add_subcommand(name)->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    rmoe::RunConfig cfg = config_path.empty()
                              ? rmoe::RunConfig()
                              : rmoe::RunConfig::from_file(config_path);
    cfg.apply_env();
    std::vector<std::string> overrides;
    for (std::size_t i = 0; i < shortcuts.size(); ++i)
      if (app.count(shortcuts[i].first) > 0)
        overrides.push_back(shortcuts[i].second + "=" + shortcut_values[i]);
    overrides.insert(overrides.end(), sets.begin(), sets.end());
    cfg.apply_overrides(overrides);

    rmoe::run_subcommand(app.get_subcommands().front()->get_name(), cfg,
                         std::cout);
  } catch (const std::exception& e) {
    return fail(e.what());
  }
  return 0;
}
