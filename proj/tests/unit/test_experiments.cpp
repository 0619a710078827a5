#include <doctest.h>

#include <filesystem>
#include <json.hpp>

#include "bmc/errors.hpp"
#include "bmc/experiments.hpp"
#include "bmc/io.hpp"

using namespace bmc;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p.string();
}

std::string small_counts_config(const std::string& out, const std::string& experiment = "counts_easy") {
  nlohmann::json j = {
      {"experiment", experiment},
      {"seed", 7},
      {"n_train", 2000},
      {"n_test", 60},
      {"output_dir", out},
      {"classifier", {{"epochs", 3}}},
      {"posteriors", {{{"epochs", 3}}, {{"epochs", 3}}}},
      {"rejection", {{"pilot", 200}}},
      {"smc", {{"test_points", 3}, {"particles", 100}, {"budget", 1000}}},
      {"validation", {{"eigen_cases", 4}, {"eigen_samples", 300}, {"prior_consistency", false}}},
      {"grid", {{"k_nodes", 64}, {"theta_nodes", 64}}},
  };
  return j.dump();
}

}  // namespace

TEST_CASE("config defaults and parsing") {
  const auto easy = ExperimentConfig::from_json(R"({"experiment": "counts_easy"})");
  CHECK(easy.kind == ExperimentKind::CountsEasy);
  CHECK(easy.n_train == 100000);
  CHECK(easy.n_test == 1000);
  CHECK(easy.scenario.k2 == 20.0);
  CHECK(easy.classifier.hidden == std::vector<int>{10});
  CHECK(easy.posteriors[1].hidden == std::vector<int>{10, 10});
  CHECK(easy.classifier.train.components == 3);
  CHECK(easy.classifier.train.learning_rate == 0.01);
  const auto hard = ExperimentConfig::from_json(R"({"experiment": "counts_difficult", "seed": 3})");
  CHECK(hard.scenario.k2 == 1.0);
  CHECK(hard.seed == 3);
  const auto ch = ExperimentConfig::from_json(R"({"experiment": "channels"})");
  CHECK(ch.classifier.train.epochs == 10);
  CHECK(ch.posteriors[0].hidden == std::vector<int>{30, 30});
  CHECK_FALSE(ch.is_counts());

  // to_json round trips
  const auto back = ExperimentConfig::from_json(hard.to_json());
  CHECK(back.to_json() == hard.to_json());
  const auto ch_back = ExperimentConfig::from_json(ch.to_json());
  CHECK(ch_back.to_json() == ch.to_json());
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(ExperimentConfig::from_json("{"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json("{}"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"experiment": "bogus"})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"experiment": "counts_easy", "n_trian": 5})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"experiment": "counts_easy", "grid": {"nodes": 5}})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"experiment": "counts_easy", "n_train": 0})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"experiment": "counts_easy", "n_train": "many"})"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"experiment": "counts_easy", "posteriors": [{}]})"), ConfigError);
  try {
    ExperimentConfig::from_json(R"({"experiment": "counts_easy", "smc": {"partcles": 5}})");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("partcles") != std::string::npos);
  }
}

TEST_CASE("count pipeline end to end") {
  const std::string out = temp_dir("bmc_exp_counts");
  const auto cfg = ExperimentConfig::from_json(small_counts_config(out));

  // commands that need earlier outputs fail with an I/O error naming the file
  try {
    cmd_train(cfg, "classifier");
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("train.csv") != std::string::npos);
  }
  CHECK_THROWS_AS(cmd_build_pca(cfg), ConfigError);

  cmd_gen_data(cfg);
  const std::string train_a = read_text(out + "/data/train.csv");
  const std::string test_a = read_text(out + "/data/test.csv");
  cmd_gen_data(cfg);
  CHECK(read_text(out + "/data/train.csv") == train_a);
  CHECK(read_text(out + "/data/test.csv") == test_a);
  const auto train = read_dataset(out + "/data/train.csv");
  CHECK(train.size() == 2000);
  CHECK(train[0].counts.size() == 100);

  CHECK_THROWS_AS(cmd_predict(cfg, "test"), IoError);
  CHECK_THROWS_AS(cmd_train(cfg, "bogus"), ConfigError);
  cmd_train(cfg, "classifier");
  const std::string net_a = read_text(out + "/networks/classifier.json");
  cmd_train(cfg, "classifier");
  CHECK(read_text(out + "/networks/classifier.json") == net_a);
  const auto clf = load_classifier(out + "/networks/classifier.json");
  REQUIRE(clf.loss_trace.size() == 3);
  for (double l : clf.loss_trace) CHECK(std::isfinite(l));

  CHECK_THROWS_AS(cmd_validate(cfg), IoError);  // posteriors missing
  cmd_train(cfg, "posterior:poisson");
  cmd_train(cfg, "posterior:1");
  CHECK(fs::exists(out + "/networks/posterior_nb.json"));
  CHECK_THROWS_AS(cmd_train(cfg, "posterior:gamma"), ConfigError);

  const auto pred = cmd_predict(cfg, "test");
  const std::string table = read_text(pred.at(0));
  CHECK(table.rfind("id\tmodel\tp_poisson\tp_nb\tpoisson_lambda_mean", 0) == 0);

  cmd_validate(cfg);
  CHECK(fs::exists(out + "/validation/classifier_report.json"));
  CHECK(fs::exists(out + "/validation/posterior_poisson_lambda_report.json"));
  CHECK(fs::exists(out + "/validation/posterior_nb_eigen_report.json"));
  CHECK(fs::exists(out + "/data/exact_test.tsv"));

  cmd_compare(cfg);
  const std::string summary = read_text(out + "/compare/summary.tsv");
  for (const char* m : {"mdn\t", "rejection\t", "smc\t"}) CHECK(summary.find(m) != std::string::npos);
  cmd_report(cfg);
  CHECK(read_text(out + "/report.md").find("Method comparison") != std::string::npos);
  CHECK(fs::exists(out + "/logs/compare.json"));
  fs::remove_all(out);
}

TEST_CASE("channel pipeline produces 25 summaries") {
  const std::string out = temp_dir("bmc_exp_channels");
  nlohmann::json j = {{"experiment", "channels"},
                      {"seed", 3},
                      {"n_train", 30},
                      {"n_test", 6},
                      {"output_dir", out},
                      {"pca", {{"corpus_per_model", 8}}},
                      {"classifier", {{"epochs", 2}}},
                      {"posteriors", {{{"epochs", 2}, {"components", 1}}, {{"epochs", 2}, {"components", 1}}}}};
  const auto cfg = ExperimentConfig::from_json(j.dump());
  try {
    cmd_gen_data(cfg);
    FAIL("expected an I/O error");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("pca.bin") != std::string::npos);
  }
  cmd_build_pca(cfg);
  const auto basis = load_pca(out + "/pca/pca.bin");
  CHECK(basis.protocols.size() == 5);
  CHECK(basis.summary_size() == 25);
  CHECK(parse_protocols(read_text(out + "/pca/protocols.txt")).size() == 5);
  cmd_gen_data(cfg);
  const auto test = read_dataset(out + "/data/test.csv");
  REQUIRE(test.size() == 6);
  for (const auto& s : test) {
    CHECK(s.summary.size() == 25);
    CHECK(s.counts.empty());
    CHECK(s.params.size() == (s.model_index == 0 ? 8u : 5u));
  }
  cmd_train(cfg, "classifier");
  cmd_train(cfg, "posterior:kd");
  cmd_train(cfg, "posterior:ks");
  cmd_predict(cfg, "test");
  fs::remove_all(out);
}

TEST_CASE("output root") {
  auto cfg = ExperimentConfig::defaults(ExperimentKind::CountsEasy);
  cfg.output_dir = "runs/a";
  ::setenv("BMC_OUTPUT_ROOT", "/tmp/root", 1);
  CHECK(cfg.resolved_output_dir() == "/tmp/root/runs/a");
  cfg.output_dir = "/abs";
  CHECK(cfg.resolved_output_dir() == "/abs");
  ::unsetenv("BMC_OUTPUT_ROOT");
  cfg.output_dir = "runs/a";
  CHECK(cfg.resolved_output_dir() == "runs/a");
}
