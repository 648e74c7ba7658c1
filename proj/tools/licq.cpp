// Command-line driver for the experiment pipeline.
//
//   licq --config configs/toy.json --stage train --out runs/toy
//   licq --config configs/toy.json --stage all
//
// Exit codes: 0 ok, 1 usage, 2 config, 3 data, 4 model, 5 numeric.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "licq/io/config.hpp"
#include "licq/io/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"learned image codec quantization toolkit"};
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::string stage;

  std::string stages = "all";
  for (const auto& s : licq::pipeline_stages()) stages += ", " + s;
  app.add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "overrides training.seed");
  app.add_option("--out", out, "output directory (overrides the config's output)");
  app.add_option("--stage", stage, "one of: " + stages)->required();
  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = licq::load_config(config_path);
    if (seed) cfg.training.seed = *seed;
    if (out) cfg.output = *out;
    licq::Pipeline p(cfg, cfg.output);
    const auto files = stage == "all" ? p.run_all() : p.run(stage);
    for (const auto& f : files) std::cout << f.string() << '\n';
    return 0;
  } catch (const licq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
