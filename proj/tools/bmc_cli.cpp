// Command-line driver for the model-comparison experiments.
#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "bmc/errors.hpp"
#include "bmc/experiments.hpp"
#include "bmc/io.hpp"

namespace {

bmc::ExperimentConfig load_config(const std::string& path, const std::string& output_override) {
  bmc::require_file(path, "config");
  auto cfg = bmc::ExperimentConfig::from_json(bmc::read_text(path));
  if (!output_override.empty()) cfg.output_dir = output_override;
  return cfg;
}

void print_files(const std::vector<std::string>& files) {
  for (const auto& f : files) std::cout << f << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian model comparison with mixture-density networks"};
  app.require_subcommand(1);
  std::string config_path, output_dir, target = "classifier", input = "test";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("-o,--output", output_dir, "override the configured output directory");
  };
  auto* gen = app.add_subcommand("gen-data", "simulate training and test sets");
  auto* pca = app.add_subcommand("build-pca", "simulate the trace corpus and build the PCA basis (channels)");
  auto* train = app.add_subcommand("train", "train the classifier or one posterior network");
  auto* predict = app.add_subcommand("predict", "predict model probabilities and parameter posteriors");
  auto* validate = app.add_subcommand("validate", "run the calibration diagnostics");
  auto* compare = app.add_subcommand("compare", "compare the network with the ABC baselines");
  auto* report = app.add_subcommand("report", "summarize validation and comparison outputs");
  for (auto* s : {gen, pca, train, predict, validate, compare, report}) add_common(s);
  train->add_option("-t,--target", target, "classifier | posterior:<model>");
  predict->add_option("-i,--input", input, "dataset CSV, or 'test'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const auto cfg = load_config(config_path, output_dir);
    if (gen->parsed()) print_files(bmc::cmd_gen_data(cfg));
    else if (pca->parsed()) print_files(bmc::cmd_build_pca(cfg));
    else if (train->parsed()) print_files(bmc::cmd_train(cfg, target));
    else if (predict->parsed()) print_files(bmc::cmd_predict(cfg, input));
    else if (validate->parsed()) print_files(bmc::cmd_validate(cfg));
    else if (compare->parsed()) print_files(bmc::cmd_compare(cfg));
    else if (report->parsed()) print_files(bmc::cmd_report(cfg));
  } catch (const bmc::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.error_class().c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 3;
  }
  return 0;
}
