#include "bmc/experiments.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <array>
#include <optional>
#include <set>
#include <sstream>

#include "bmc/errors.hpp"
#include "bmc/io.hpp"
#include "bmc/parallel.hpp"

namespace bmc {

using nlohmann::json;

namespace {

// Stream indices for the seeds derived from the experiment seed.
enum SeedSlot : std::uint64_t {
  kTrainData = 1,
  kTestData = 2,
  kCorpus = 3,
  kReference = 4,
  kSmc = 6,
  kValidation = 7,
  kConsistency = 8,
  kNetworks = 100,
};

const char* const kDataDir = "data";
const char* const kNetDir = "networks";

std::string model_name(const ExperimentConfig& cfg, int m) {
  static const char* counts[] = {"poisson", "nb"};
  static const char* channels[] = {"kd", "ks"};
  if (m < 0 || m > 1) return std::to_string(m);
  return cfg.is_counts() ? counts[m] : channels[m];
}

std::vector<std::string> param_names(const ExperimentConfig& cfg, int m) {
  if (cfg.is_counts()) return m == 0 ? std::vector<std::string>{"lambda"} : std::vector<std::string>{"k", "theta"};
  return m == 0 ? KdParams::free_names() : KsParams::free_names();
}

// Key-checked view of a JSON object: every key must be consumed.
class ConfigObject {
 public:
  ConfigObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("'" + where_ + "' must be an object");
  }
  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + where_ + key + "' has the wrong type");
    }
  }
  bool has(const std::string& key) const { return j_.contains(key); }
  const json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }
  void finish() const {
    for (const auto& item : j_.items())
      if (!used_.count(item.key())) throw ConfigError("unknown config key '" + where_ + item.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

#define BMC_PROTOCOL_FIELDS(X)                                                                                     \
  X(holding_v) X(dt) X(steps) X(lead_in) X(tail) X(act_low) X(act_high) X(act_duration) X(inact_low) X(inact_high) \
  X(inact_pre_duration) X(inact_test_v) X(inact_test_duration) X(deact_pre_v) X(deact_pre_duration) X(deact_low)   \
  X(deact_high) X(deact_duration) X(spikes) X(spike_rest) X(spike_peak) X(spike_width) X(spike_interval)           \
  X(ramp_slopes) X(ramp_low) X(ramp_high)

json network_json(const NetworkConfig& n) {
  const auto& t = n.train;
  return {{"hidden", n.hidden},    {"learning_rate", t.learning_rate}, {"batch_size", t.batch_size},
          {"epochs", t.epochs},    {"components", t.components},       {"seed", t.seed},
          {"beta1", t.beta1},      {"beta2", t.beta2},                 {"epsilon", t.epsilon}};
}

void read_network(const json& j, NetworkConfig& n, const std::string& where) {
  ConfigObject o(j, where);
  o.get("hidden", n.hidden);
  o.get("learning_rate", n.train.learning_rate);
  o.get("batch_size", n.train.batch_size);
  o.get("epochs", n.train.epochs);
  o.get("components", n.train.components);
  o.get("seed", n.train.seed);
  o.get("beta1", n.train.beta1);
  o.get("beta2", n.train.beta2);
  o.get("epsilon", n.train.epsilon);
  o.finish();
}

}  // namespace

std::string kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::CountsEasy: return "counts_easy";
    case ExperimentKind::CountsDifficult: return "counts_difficult";
    case ExperimentKind::Channels: return "channels";
  }
  return "unknown";
}

ExperimentKind kind_from_name(const std::string& name) {
  if (name == "counts_easy") return ExperimentKind::CountsEasy;
  if (name == "counts_difficult") return ExperimentKind::CountsDifficult;
  if (name == "channels") return ExperimentKind::Channels;
  throw ConfigError("unknown experiment '" + name + "' (expected counts_easy, counts_difficult or channels)");
}

ExperimentConfig ExperimentConfig::defaults(ExperimentKind kind, std::uint64_t seed) {
  ExperimentConfig c;
  c.kind = kind;
  c.seed = seed;
  c.scenario = kind == ExperimentKind::CountsDifficult ? CountScenario::difficult() : CountScenario::easy();
  c.classifier.hidden = {10};
  c.classifier.train.epochs = kind == ExperimentKind::Channels ? 10 : 100;
  c.posteriors.resize(2);
  if (kind == ExperimentKind::Channels) {
    c.posteriors[0].hidden = c.posteriors[1].hidden = {30, 30};
    c.smc.enabled = false;
  } else {
    c.posteriors[0].hidden = {10};
    c.posteriors[1].hidden = {10, 10};
  }
  c.classifier.train.seed = derive_seed(seed, kNetworks);
  for (std::size_t m = 0; m < c.posteriors.size(); ++m) c.posteriors[m].train.seed = derive_seed(seed, kNetworks + 1 + m);
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ConfigObject root(j, "");
  std::string experiment;
  root.get("experiment", experiment);
  if (experiment.empty()) throw ConfigError("config must name an 'experiment'");
  std::uint64_t seed = 1;
  root.get("seed", seed);
  ExperimentConfig c = defaults(kind_from_name(experiment), seed);
  root.get("n_train", c.n_train);
  root.get("n_test", c.n_test);
  root.get("output_dir", c.output_dir);
  root.get("model_prior", c.model_prior);
  if (const json* s = root.sub("counts")) {
    ConfigObject o(*s, "counts.");
    o.get("k2", c.scenario.k2);
    o.get("theta2", c.scenario.theta2);
    o.get("k3", c.scenario.k3);
    o.get("theta3", c.scenario.theta3);
    o.get("theta1", c.scenario.theta1);
    o.get("counts_per_sample", c.counts_per_sample);
    o.finish();
  }
  if (const json* s = root.sub("grid")) {
    ConfigObject o(*s, "grid.");
    o.get("k_nodes", c.grid.k_nodes);
    o.get("theta_nodes", c.grid.theta_nodes);
    o.get("tail", c.grid.tail);
    o.finish();
  }
  if (const json* s = root.sub("protocols")) {
    ConfigObject o(*s, "protocols.");
#define X(f) o.get(#f, c.protocols.f);
    BMC_PROTOCOL_FIELDS(X)
#undef X
    o.finish();
  }
  if (const json* s = root.sub("pca")) {
    ConfigObject o(*s, "pca.");
    o.get("corpus_per_model", c.pca.corpus_per_model);
    o.get("components", c.pca.components);
    o.finish();
  }
  if (const json* s = root.sub("classifier")) read_network(*s, c.classifier, "classifier.");
  if (const json* s = root.sub("posteriors")) {
    if (!s->is_array() || s->size() != c.posteriors.size())
      throw ConfigError("'posteriors' must be an array with one entry per model");
    for (std::size_t m = 0; m < c.posteriors.size(); ++m)
      read_network((*s)[m], c.posteriors[m], "posteriors[" + std::to_string(m) + "].");
  }
  if (const json* s = root.sub("rejection")) {
    ConfigObject o(*s, "rejection.");
    o.get("simulations", c.rejection.simulations);
    o.get("acceptance_fraction", c.rejection.acceptance_fraction);
    o.get("epsilon", c.rejection.epsilon);
    o.get("pilot", c.rejection.pilot);
    o.finish();
  }
  if (const json* s = root.sub("smc")) {
    ConfigObject o(*s, "smc.");
    o.get("enabled", c.smc.enabled);
    o.get("test_points", c.smc.test_points);
    o.get("rounds", c.smc.config.rounds);
    o.get("particles", c.smc.config.particles);
    o.get("budget", c.smc.config.budget);
    o.get("kernel_scale", c.smc.config.kernel_scale);
    o.get("model_jump", c.smc.config.model_jump);
    o.get("min_ess", c.smc.config.min_ess);
    o.finish();
  }
  if (const json* s = root.sub("validation")) {
    ConfigObject o(*s, "validation.");
    o.get("levels", c.validation.levels);
    o.get("eigen_cases", c.validation.eigen_cases);
    o.get("eigen_samples", c.validation.eigen_samples);
    o.get("prior_consistency", c.validation.prior_consistency);
    o.get("priors", c.validation.priors);
    o.get("consistency_train", c.validation.consistency_train);
    o.get("consistency_test", c.validation.consistency_test);
    o.get("quadrature_nodes", c.validation.quadrature_nodes);
    o.finish();
  }
  root.finish();
  c.validate();
  return c;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["experiment"] = kind_name(kind);
  j["seed"] = seed;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["output_dir"] = output_dir;
  j["model_prior"] = model_prior;
  j["counts"] = {{"k2", scenario.k2},         {"theta2", scenario.theta2}, {"k3", scenario.k3},
                 {"theta3", scenario.theta3}, {"theta1", scenario.theta1}, {"counts_per_sample", counts_per_sample}};
  j["grid"] = {{"k_nodes", grid.k_nodes}, {"theta_nodes", grid.theta_nodes}, {"tail", grid.tail}};
  json p;
#define X(f) p[#f] = protocols.f;
  BMC_PROTOCOL_FIELDS(X)
#undef X
  j["protocols"] = p;
  j["pca"] = {{"corpus_per_model", pca.corpus_per_model}, {"components", pca.components}};
  j["classifier"] = network_json(classifier);
  j["posteriors"] = json::array();
  for (const auto& n : posteriors) j["posteriors"].push_back(network_json(n));
  j["rejection"] = {{"simulations", rejection.simulations}, {"acceptance_fraction", rejection.acceptance_fraction},
                    {"epsilon", rejection.epsilon}, {"pilot", rejection.pilot}};
  j["smc"] = {{"enabled", smc.enabled},
              {"test_points", smc.test_points},
              {"rounds", smc.config.rounds},
              {"particles", smc.config.particles},
              {"budget", smc.config.budget},
              {"kernel_scale", smc.config.kernel_scale},
              {"model_jump", smc.config.model_jump},
              {"min_ess", smc.config.min_ess}};
  j["validation"] = {{"levels", validation.levels},
                     {"eigen_cases", validation.eigen_cases},
                     {"eigen_samples", validation.eigen_samples},
                     {"prior_consistency", validation.prior_consistency},
                     {"priors", validation.priors},
                     {"consistency_train", validation.consistency_train},
                     {"consistency_test", validation.consistency_test},
                     {"quadrature_nodes", validation.quadrature_nodes}};
  return j.dump(2) + "\n";
}

void ExperimentConfig::validate() const {
  if (n_train < 1) throw ConfigError("n_train must be >= 1");
  if (n_test < 1) throw ConfigError("n_test must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (model_prior.size() != 2) throw ConfigError("model_prior must have two entries");
  double total = 0.0;
  for (double p : model_prior) {
    if (!(p >= 0.0)) throw ConfigError("model_prior entries must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("model_prior must sum to 1");
  if (counts_per_sample < 2) throw ConfigError("counts.counts_per_sample must be >= 2");
  for (double v : {scenario.k2, scenario.theta2, scenario.k3, scenario.theta3, scenario.theta1})
    if (!(v > 0.0)) throw ConfigError("count hyperparameters must be positive");
  if (grid.k_nodes < 3 || grid.theta_nodes < 3 || !(grid.tail > 0.0 && grid.tail < 0.5))
    throw ConfigError("grid needs >= 3 nodes per axis and a tail in (0, 0.5)");
  if (pca.components < 1 || pca.corpus_per_model < 1) throw ConfigError("pca settings must be positive");
  if (classifier.hidden.empty()) throw ConfigError("classifier needs at least one hidden layer");
  classifier.train.validate();
  for (const auto& n : posteriors) {
    if (n.hidden.empty()) throw ConfigError("posterior networks need at least one hidden layer");
    n.train.validate();
  }
  if (!(rejection.acceptance_fraction > 0.0 && rejection.acceptance_fraction <= 1.0))
    throw ConfigError("rejection.acceptance_fraction must lie in (0, 1]");
  if (rejection.pilot < 2) throw ConfigError("rejection.pilot must be >= 2");
  if (smc.enabled) smc.config.validate();
  for (double l : validation.levels)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("validation.levels must lie in [0, 1]");
  for (double p : validation.priors)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("validation.priors must lie in [0, 1]");
  if (validation.quadrature_nodes < 3) throw ConfigError("validation.quadrature_nodes must be >= 3");
}

CountModelSpec ExperimentConfig::count_spec() const { return make_count_spec(scenario, model_prior, counts_per_sample); }

std::string ExperimentConfig::resolved_output_dir() const {
  const std::filesystem::path p(output_dir);
  if (const char* root = std::getenv("BMC_OUTPUT_ROOT"); root && *root && p.is_relative())
    return (std::filesystem::path(root) / p).string();
  return output_dir;
}

std::string ExperimentConfig::path(const std::string& file) const {
  return (std::filesystem::path(resolved_output_dir()) / file).string();
}

// ---------------------------------------------------------------- datasets

Eigen::MatrixXd summaries_matrix(const Dataset& ds) {
  if (ds.empty()) throw InputError("empty dataset");
  const auto d = static_cast<Eigen::Index>(ds.front().summary.size());
  Eigen::MatrixXd s(static_cast<Eigen::Index>(ds.size()), d);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (static_cast<Eigen::Index>(ds[i].summary.size()) != d) throw InputError("dataset rows differ in summary length");
    s.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(ds[i].summary.data(), d);
  }
  return s;
}

std::vector<int> labels_of(const Dataset& ds) {
  std::vector<int> l(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) l[i] = ds[i].model_index;
  return l;
}

Dataset subset_for_model(const Dataset& ds, int model) {
  Dataset out;
  for (const auto& s : ds)
    if (s.model_index == model) out.push_back(s);
  return out;
}

Eigen::MatrixXd params_matrix(const Dataset& ds) {
  if (ds.empty()) throw InputError("empty dataset");
  const auto d = static_cast<Eigen::Index>(ds.front().params.size());
  Eigen::MatrixXd p(static_cast<Eigen::Index>(ds.size()), d);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (static_cast<Eigen::Index>(ds[i].params.size()) != d) throw InputError("dataset rows differ in parameter count");
    p.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(ds[i].params.data(), d);
  }
  return p;
}

std::vector<Eigen::MatrixXd> simulate_channel_corpus(const std::vector<VoltageProtocol>& protocols,
                                                     std::size_t n_per_model, std::uint64_t seed) {
  const std::size_t n = 2 * n_per_model;
  std::vector<TraceSet> traces(n);
  parallel_for(n, [&](std::size_t i) {
    Rng rng = stream(seed, i);
    const int model = i < n_per_model ? 0 : 1;
    const auto free = sample_channel_prior(model, rng);
    traces[i] = simulate_all(channel_from_free(model, free), protocols);
  });
  std::vector<Eigen::MatrixXd> corpora;
  for (std::size_t p = 0; p < protocols.size(); ++p) {
    const auto len = static_cast<Eigen::Index>(traces.front().protocols[p].values.size());
    Eigen::MatrixXd c(static_cast<Eigen::Index>(n), len);
    for (std::size_t i = 0; i < n; ++i)
      c.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(traces[i].protocols[p].values.data(), len);
    corpora.push_back(std::move(c));
  }
  return corpora;
}

PcaBasis build_channel_pca(const ExperimentConfig& cfg) {
  const auto protocols = build_protocols(cfg.protocols);
  const auto corpora = simulate_channel_corpus(protocols, cfg.pca.corpus_per_model, derive_seed(cfg.seed, kCorpus));
  std::vector<std::string> names;
  for (const auto& p : protocols) names.push_back(p.name);
  return build_pca_basis(names, corpora, cfg.pca.components);
}

Eigen::VectorXd channel_summary(int model, std::span<const double> free, const std::vector<VoltageProtocol>& protocols,
                                const PcaBasis& basis) {
  return project_traces(simulate_all(channel_from_free(model, free), protocols), basis);
}

Dataset generate_channel_dataset(const std::vector<double>& model_prior, const std::vector<VoltageProtocol>& protocols,
                                 const PcaBasis& basis, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("dataset size must be >= 1");
  Dataset out(n);
  parallel_for(n, [&](std::size_t i) {
    Rng rng = stream(seed, i);
    LabeledSample& s = out[i];
    s.model_index = sample_model_index(model_prior, rng);
    s.params = sample_channel_prior(s.model_index, rng);
    const Eigen::VectorXd v = channel_summary(s.model_index, s.params, protocols, basis);
    s.summary.assign(v.data(), v.data() + v.size());
  });
  return out;
}

std::vector<ModelSimulator> channel_simulators(const std::vector<VoltageProtocol>& protocols, const PcaBasis& basis) {
  std::vector<ModelSimulator> sims;
  for (int m = 0; m < 2; ++m) {
    const auto [lo, hi] = channel_prior_bounds(m);
    double log_volume = 0.0;
    for (std::size_t i = 0; i < lo.size(); ++i) log_volume += std::log(hi[i] - lo[i]);
    sims.push_back(ModelSimulator{
        [m](Rng& rng) { return sample_channel_prior(m, rng); },
        [lo = lo, hi = hi, log_volume](std::span<const double> t) {
          for (std::size_t i = 0; i < t.size(); ++i)
            if (t[i] < lo[i] || t[i] > hi[i]) return -std::numeric_limits<double>::infinity();
          return -log_volume;
        },
        [m, &protocols, &basis](std::span<const double> t, Rng&) { return channel_summary(m, t, protocols, basis); }});
  }
  return sims;
}

std::uint64_t train_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, kTrainData); }
std::uint64_t test_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.seed, kTestData); }

Dataset make_dataset(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed, const PcaBasis* basis) {
  if (n == 0) throw ConfigError("dataset size must be >= 1");
  if (cfg.is_counts()) return generate_count_dataset(cfg.count_spec(), n, seed);
  if (!basis) throw InputError("channel datasets need a PCA basis");
  return generate_channel_dataset(cfg.model_prior, build_protocols(cfg.protocols), *basis, n, seed);
}

ClassifierModel train_classifier_on(const Dataset& ds, const NetworkConfig& net) {
  const auto labels = labels_of(ds);
  return fit_classifier(summaries_matrix(ds), labels, net.hidden, net.train);
}

PosteriorModel train_posterior_on(const Dataset& ds, int model, const NetworkConfig& net) {
  const Dataset sub = subset_for_model(ds, model);
  if (sub.size() < 2) throw InputError("too few samples of model " + std::to_string(model) + " to train its posterior");
  return fit_posterior(summaries_matrix(sub), params_matrix(sub), net.hidden, net.train);
}

Eigen::MatrixXd exact_model_posteriors(const ExperimentConfig& cfg, const Dataset& ds) {
  if (!cfg.is_counts()) throw InputError("exact posteriors exist only for the count experiments");
  const CountModelSpec spec = cfg.count_spec();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ds.size()), 2);
  parallel_for(ds.size(), [&](std::size_t i) {
    if (ds[i].counts.empty()) throw InputError("exact posteriors need the raw counts of every test point");
    const auto p = model_posterior_exact(ds[i].counts, spec, cfg.grid);
    out(static_cast<Eigen::Index>(i), 0) = p[0];
    out(static_cast<Eigen::Index>(i), 1) = p[1];
  });
  return out;
}

ReferenceTable reference_table_from(const Dataset& ds) {
  ReferenceTable t;
  for (const auto& s : ds) {
    t.models.push_back(s.model_index);
    t.params.push_back(s.params);
    t.summaries.push_back(Eigen::Map<const Eigen::VectorXd>(s.summary.data(), static_cast<Eigen::Index>(s.summary.size())));
  }
  return t;
}

RejectionRun run_rejection_on_table(const ExperimentConfig& cfg, const ReferenceTable& table,
                                const std::vector<Eigen::VectorXd>& observed, SummaryDistance* distance_out) {
  // The leading rows of the table are themselves prior-predictive draws and
  // serve as the pilot for the z-scaling and the tolerance.
  const std::size_t n_pilot = std::min(cfg.rejection.pilot, table.size());
  Eigen::MatrixXd pilot(static_cast<Eigen::Index>(n_pilot), table.summaries.front().size());
  std::vector<Eigen::VectorXd> pilot_obs;
  for (std::size_t i = 0; i < n_pilot; ++i) {
    pilot.row(static_cast<Eigen::Index>(i)) = table.summaries[i].transpose();
    if (i < 200) pilot_obs.push_back(table.summaries[i]);
  }
  const SummaryDistance distance{ZScaler::fit(pilot)};
  if (distance_out) *distance_out = distance;
  RejectionRun run;
  run.budget = table.size();
  run.epsilon = cfg.rejection.epsilon >= 0.0
                    ? cfg.rejection.epsilon
                    : epsilon_for_acceptance(table, pilot_obs, distance, cfg.rejection.acceptance_fraction);
  const auto M = static_cast<std::size_t>(cfg.n_models());
  run.estimates.resize(static_cast<Eigen::Index>(observed.size()), static_cast<Eigen::Index>(M));
  run.undefined.assign(observed.size(), 0);
  parallel_for(observed.size(), [&](std::size_t i) {
    const auto r = reject_models_from_table(table, M, observed[i], distance, run.epsilon);
    run.undefined[i] = r.undefined;
    for (std::size_t m = 0; m < M; ++m)
      run.estimates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) =
          r.undefined ? cfg.model_prior[m] : r.estimate[m];
  });
  return run;
}

RejectionRun run_rejection(const ExperimentConfig& cfg, const std::vector<ModelSimulator>& sims,
                           const std::vector<Eigen::VectorXd>& observed) {
  const std::size_t budget = cfg.rejection.simulations ? cfg.rejection.simulations : cfg.n_train;
  const auto table = build_reference_table(cfg.model_prior, sims, budget, derive_seed(cfg.seed, kReference));
  return run_rejection_on_table(cfg, table, observed, nullptr);
}

Eigen::MatrixXd classifier_predictions(const ClassifierModel& m, const Dataset& ds) {
  const Eigen::MatrixXd s = summaries_matrix(ds);
  Eigen::MatrixXd out(s.rows(), m.net.head.n_models());
  parallel_for(static_cast<std::size_t>(s.rows()), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.row(r) = m.predict(s.row(r).transpose()).transpose();
  });
  return out;
}

// ---------------------------------------------------------------- commands

namespace {

std::string data_path(const ExperimentConfig& cfg, const std::string& f) { return cfg.path(std::string(kDataDir) + "/" + f); }
std::string net_path(const ExperimentConfig& cfg, const std::string& f) { return cfg.path(std::string(kNetDir) + "/" + f); }
std::string pca_path(const ExperimentConfig& cfg) { return cfg.path("pca/pca.bin"); }
std::string classifier_path(const ExperimentConfig& cfg) { return net_path(cfg, "classifier.json"); }
std::string posterior_path(const ExperimentConfig& cfg, int m) {
  return net_path(cfg, "posterior_" + model_name(cfg, m) + ".json");
}

void log_command(const ExperimentConfig& cfg, const std::string& command, const json& args) {
  json j;
  j["command"] = command;
  j["args"] = args;
  j["config"] = json::parse(cfg.to_json());
  write_text_file(cfg.path("logs/" + command + ".json"), j.dump(2) + "\n");
}

Dataset load_split(const ExperimentConfig& cfg, const std::string& split) {
  return read_dataset(data_path(cfg, split + ".csv"));
}

PcaBasis require_pca(const ExperimentConfig& cfg) {
  const std::string p = pca_path(cfg);
  if (!std::filesystem::is_regular_file(p))
    throw IoError("missing PCA basis: expected file '" + p + "' (run build-pca first)");
  return load_pca(p);
}

std::string loss_tsv(const std::vector<double>& loss) {
  Table t{{"epoch", "loss"}, {}};
  for (std::size_t e = 0; e < loss.size(); ++e) t.add({std::to_string(e + 1), fmt(loss[e])});
  return t.str();
}

int parse_model_target(const ExperimentConfig& cfg, const std::string& s) {
  for (int m = 0; m < cfg.n_models(); ++m)
    if (s == model_name(cfg, m) || s == std::to_string(m)) return m;
  throw ConfigError("unknown model '" + s + "' in train target");
}

std::vector<Eigen::VectorXd> summary_vectors(const Dataset& ds) {
  std::vector<Eigen::VectorXd> v;
  v.reserve(ds.size());
  for (const auto& s : ds)
    v.push_back(Eigen::Map<const Eigen::VectorXd>(s.summary.data(), static_cast<Eigen::Index>(s.summary.size())));
  return v;
}

Eigen::MatrixXd load_or_compute_exact(const ExperimentConfig& cfg, const Dataset& test) {
  const std::string p = data_path(cfg, "exact_test.tsv");
  if (std::filesystem::is_regular_file(p)) {
    std::istringstream in(read_text(p));
    std::string line;
    std::getline(in, line);
    std::vector<std::array<double, 2>> rows;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::size_t id;
      std::array<double, 2> r;
      if (ls >> id >> r[0] >> r[1]) rows.push_back(r);
    }
    if (rows.size() == test.size()) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), 2);
      for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) << rows[i][0], rows[i][1];
      return out;
    }
  }
  const Eigen::MatrixXd exact = exact_model_posteriors(cfg, test);
  Table t{{"id", "p_poisson", "p_nb"}, {}};
  for (Eigen::Index i = 0; i < exact.rows(); ++i) t.add({std::to_string(i), fmt(exact(i, 0)), fmt(exact(i, 1))});
  write_text_file(p, t.str());
  return exact;
}

void add_quantile_report(CalibrationReport& r, const std::vector<Posterior1D>& post, const std::vector<double>& truth,
                         const std::vector<double>& levels) {
  const auto q = quantile_check(post, truth);
  r.quantiles = q.quantiles;
  r.ks = q.ks;
  r.ks_critical = q.ks_critical;
  r.levels = levels;
  r.coverage = credible_coverage(post, truth, levels);
}

// Per-coordinate marginal calibration of one model's posterior network.
std::vector<CalibrationReport> marginal_reports(const ExperimentConfig& cfg, const Dataset& test, int m,
                                                const PosteriorModel& net) {
  const Dataset sub = subset_for_model(test, m);
  std::vector<CalibrationReport> out;
  if (sub.empty()) return out;
  std::vector<MoGPosterior> q(sub.size());
  parallel_for(sub.size(), [&](std::size_t i) {
    q[i] = net.predict(Eigen::Map<const Eigen::VectorXd>(sub[i].summary.data(),
                                                         static_cast<Eigen::Index>(sub[i].summary.size())));
  });
  const auto names = param_names(cfg, m);
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<Posterior1D> post;
    std::vector<double> truth;
    for (std::size_t i = 0; i < sub.size(); ++i) {
      post.push_back(mog_posterior_1d(q[i].marginal(static_cast<int>(j))));
      truth.push_back(sub[i].params[j]);
    }
    CalibrationReport r;
    r.name = "posterior_" + model_name(cfg, m) + "_" + names[j];
    add_quantile_report(r, post, truth, cfg.validation.levels);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<std::string> cmd_gen_data(const ExperimentConfig& cfg) {
  cfg.validate();
  log_command(cfg, "gen-data", json::object());
  PcaBasis basis;
  if (!cfg.is_counts()) basis = require_pca(cfg);
  const PcaBasis* b = cfg.is_counts() ? nullptr : &basis;
  const Dataset train = make_dataset(cfg, cfg.n_train, train_seed(cfg), b);
  const Dataset test = make_dataset(cfg, cfg.n_test, test_seed(cfg), b);
  std::vector<std::string> files{data_path(cfg, "train.csv"), data_path(cfg, "test.csv"),
                                 data_path(cfg, "dataset.meta.json")};
  write_dataset(files[0], train);
  write_dataset(files[1], test);
  std::filesystem::remove(data_path(cfg, "exact_test.tsv"));

  json meta;
  meta["experiment"] = kind_name(cfg.kind);
  meta["seed"] = cfg.seed;
  meta["train"] = {{"n", cfg.n_train}, {"seed", train_seed(cfg)}};
  meta["test"] = {{"n", cfg.n_test}, {"seed", test_seed(cfg)}};
  meta["model_prior"] = cfg.model_prior;
  meta["models"] = {model_name(cfg, 0), model_name(cfg, 1)};
  meta["parameters"] = {param_names(cfg, 0), param_names(cfg, 1)};
  if (cfg.is_counts()) {
    const auto spec = cfg.count_spec();
    meta["scenario"] = cfg.scenario.name;
    meta["counts_per_sample"] = cfg.counts_per_sample;
    meta["hyperparameters"] = {{"poisson_rate", {spec.poisson_rate_prior.shape, spec.poisson_rate_prior.scale}},
                               {"nb_shape", {spec.nb_shape_prior.shape, spec.nb_shape_prior.scale}},
                               {"nb_scale", {spec.nb_scale_prior.shape, spec.nb_scale_prior.scale}}};
    meta["summaries"] = {"mean", "variance"};
  } else {
    meta["scenario"] = "channels";
    meta["summary_size"] = basis.summary_size();
    meta["pca_file"] = pca_path(cfg);
  }
  write_text_file(files[2], meta.dump(2) + "\n");
  return files;
}

std::vector<std::string> cmd_build_pca(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.is_counts()) throw ConfigError("build-pca applies to the channels experiment only");
  log_command(cfg, "build-pca", json::object());
  const PcaBasis basis = build_channel_pca(cfg);
  const std::string p = pca_path(cfg);
  save_pca(basis, p);
  Table t{{"protocol", "component", "explained", "cumulative", "reduced_rank"}, {}};
  for (const auto& pb : basis.protocols) {
    double cum = 0.0;
    for (Eigen::Index c = 0; c < pb.explained.size(); ++c) {
      cum += pb.explained(c);
      t.add({pb.name, std::to_string(c + 1), fmt(pb.explained(c)), fmt(cum), pb.reduced_rank ? "1" : "0"});
    }
  }
  const std::string tsv = cfg.path("pca/explained.tsv");
  write_text_file(tsv, t.str());
  write_text_file(cfg.path("pca/protocols.txt"), format_protocols(build_protocols(cfg.protocols)));
  return {p, tsv, cfg.path("pca/protocols.txt")};
}

std::vector<std::string> cmd_train(const ExperimentConfig& cfg, const std::string& target) {
  cfg.validate();
  log_command(cfg, "train", {{"target", target}});
  const Dataset train = load_split(cfg, "train");
  if (target == "classifier") {
    const ClassifierModel m = train_classifier_on(train, cfg.classifier);
    const std::string p = classifier_path(cfg);
    save_classifier(m, p);
    write_text_file(net_path(cfg, "classifier.loss.tsv"), loss_tsv(m.loss_trace));
    return {p, net_path(cfg, "classifier.loss.tsv")};
  }
  const std::string prefix = "posterior:";
  if (target.rfind(prefix, 0) != 0) throw ConfigError("train target must be 'classifier' or 'posterior:<model>'");
  const int model = parse_model_target(cfg, target.substr(prefix.size()));
  const PosteriorModel m = train_posterior_on(train, model, cfg.posteriors[static_cast<std::size_t>(model)]);
  const std::string p = posterior_path(cfg, model);
  const std::string l = net_path(cfg, "posterior_" + model_name(cfg, model) + ".loss.tsv");
  save_posterior(m, p);
  write_text_file(l, loss_tsv(m.loss_trace));
  return {p, l};
}

std::vector<std::string> cmd_predict(const ExperimentConfig& cfg, const std::string& input) {
  cfg.validate();
  log_command(cfg, "predict", {{"input", input}});
  const std::string in = input.empty() || input == "test" ? data_path(cfg, "test.csv") : input;
  const Dataset ds = read_dataset(in);
  const ClassifierModel clf = load_classifier(classifier_path(cfg));
  std::vector<std::optional<PosteriorModel>> post(static_cast<std::size_t>(cfg.n_models()));
  std::vector<std::string> columns{"id", "model"};
  for (int m = 0; m < cfg.n_models(); ++m) columns.push_back("p_" + model_name(cfg, m));
  for (int m = 0; m < cfg.n_models(); ++m) {
    if (!std::filesystem::is_regular_file(posterior_path(cfg, m))) continue;
    post[static_cast<std::size_t>(m)] = load_posterior(posterior_path(cfg, m));
    for (const auto& n : param_names(cfg, m)) {
      columns.push_back(model_name(cfg, m) + "_" + n + "_mean");
      columns.push_back(model_name(cfg, m) + "_" + n + "_std");
    }
  }
  const Eigen::MatrixXd probs = classifier_predictions(clf, ds);
  std::vector<std::vector<std::string>> rows(ds.size());
  parallel_for(ds.size(), [&](std::size_t i) {
    auto& r = rows[i];
    r = {std::to_string(i), std::to_string(ds[i].model_index)};
    for (Eigen::Index m = 0; m < probs.cols(); ++m) r.push_back(fmt(probs(static_cast<Eigen::Index>(i), m)));
    const Eigen::Map<const Eigen::VectorXd> s(ds[i].summary.data(), static_cast<Eigen::Index>(ds[i].summary.size()));
    for (const auto& p : post) {
      if (!p) continue;
      const MoGPosterior q = p->predict(s);
      const Eigen::VectorXd mean = q.mean();
      const Eigen::MatrixXd cov = q.covariance();
      for (int j = 0; j < q.dim(); ++j) {
        r.push_back(fmt(mean(j)));
        r.push_back(fmt(std::sqrt(cov(j, j))));
      }
    }
  });
  Table t{columns, {}};
  for (auto& r : rows) t.add(std::move(r));
  const std::string out =
      cfg.path("predictions/" + std::filesystem::path(in).stem().string() + ".predictions.tsv");
  write_text_file(out, t.str());
  return {out};
}

std::vector<std::string> cmd_validate(const ExperimentConfig& cfg) {
  cfg.validate();
  log_command(cfg, "validate", json::object());
  const Dataset test = load_split(cfg, "test");
  const ClassifierModel clf = load_classifier(classifier_path(cfg));
  std::vector<PosteriorModel> post;
  for (int m = 0; m < cfg.n_models(); ++m) post.push_back(load_posterior(posterior_path(cfg, m)));
  const std::string dir = cfg.path("validation");
  std::vector<CalibrationReport> reports;

  const Eigen::MatrixXd probs = classifier_predictions(clf, test);
  const auto labels = labels_of(test);
  {
    CalibrationReport r;
    r.name = "classifier";
    const Eigen::MatrixXd exact = cfg.is_counts() ? load_or_compute_exact(cfg, test) : Eigen::MatrixXd();
    const MethodOutput out{"mdn", probs};
    r.methods = compare_methods(std::span(&out, 1), exact, labels);
    reports.push_back(r);
    Table t{{"id", "model", "p_true"}, {}};
    for (std::size_t i = 0; i < labels.size(); ++i)
      t.add({std::to_string(i), std::to_string(labels[i]), fmt(probs(static_cast<Eigen::Index>(i), labels[i]))});
    write_text_file(dir + "/classifier_true_model_probability.tsv", t.str());
  }

  for (int m = 0; m < cfg.n_models(); ++m)
    for (auto& r : marginal_reports(cfg, test, m, post[static_cast<std::size_t>(m)])) reports.push_back(std::move(r));

  if (cfg.is_counts()) {
    const CountModelSpec spec = cfg.count_spec();
    // Poisson: exact conjugate posterior, normalized KL
    const Dataset pois = subset_for_model(test, 0);
    std::vector<double> nkl(pois.size());
    parallel_for(pois.size(), [&](std::size_t i) {
      const auto& s = pois[i];
      const GammaParams exact = poisson_posterior(s.counts, spec.poisson_rate_prior);
      const MoGPosterior q = post[0].predict(Eigen::Map<const Eigen::VectorXd>(s.summary.data(), 2));
      const auto grid = gamma_grid(exact, cfg.validation.quadrature_nodes);
      nkl[i] = normalized_kl(gamma_density(exact), mog_density(q), gamma_density(spec.poisson_rate_prior), grid).value;
    });
    for (auto& r : reports)
      if (r.name == "posterior_poisson_lambda") r.normalized_kl = nkl;

    // NB: eigenstructure of the joint posterior against the grid oracle
    const Dataset nb = subset_for_model(test, 1);
    const std::size_t n_eigen = std::min(cfg.validation.eigen_cases, nb.size());
    std::vector<double> angles(n_eigen);
    parallel_for(n_eigen, [&](std::size_t i) {
      const auto& s = nb[i];
      const auto g = nb_grid_posterior(s.counts, spec.nb_shape_prior, spec.nb_scale_prior, cfg.grid);
      Rng rng = stream(derive_seed(cfg.seed, kValidation), i);
      const auto pts = grid_sample(g, cfg.validation.eigen_samples, rng);
      Eigen::MatrixXd samples(static_cast<Eigen::Index>(pts.size()), 2);
      for (std::size_t k = 0; k < pts.size(); ++k) samples.row(static_cast<Eigen::Index>(k)) = pts[k].transpose();
      const MoGPosterior q = post[1].predict(Eigen::Map<const Eigen::VectorXd>(s.summary.data(), 2));
      angles[i] = eigen_check(samples, q, cfg.validation.eigen_samples, rng).angle_deg;
    });
    CalibrationReport r;
    r.name = "posterior_nb_eigen";
    r.eigen_angles = angles;
    reports.push_back(r);

    if (cfg.validation.prior_consistency) {
      const std::size_t n_train = cfg.validation.consistency_train ? cfg.validation.consistency_train : cfg.n_train;
      const auto rows = prior_consistency(cfg.scenario, cfg.validation.priors, n_train, cfg.validation.consistency_test,
                                          cfg.classifier.hidden, cfg.classifier.train,
                                          derive_seed(cfg.seed, kConsistency));
      Table t{{"prior", "mean_posterior"}, {}};
      for (const auto& row : rows) t.add({fmt(row.prior), fmt(row.mean_posterior)});
      write_text_file(dir + "/prior_consistency.tsv", t.str());
    }
  }

  std::vector<std::string> files;
  for (const auto& r : reports) {
    r.write(dir);
    files.push_back(dir + "/" + r.name + "_report.json");
  }
  return files;
}

std::vector<std::string> cmd_compare(const ExperimentConfig& cfg) {
  cfg.validate();
  log_command(cfg, "compare", json::object());
  const Dataset train = load_split(cfg, "train");
  const Dataset test = load_split(cfg, "test");
  const ClassifierModel clf = load_classifier(classifier_path(cfg));
  const auto labels = labels_of(test);
  const auto observed = summary_vectors(test);

  PcaBasis basis;
  std::vector<VoltageProtocol> protocols;
  std::vector<ModelSimulator> sims;
  if (cfg.is_counts()) {
    sims = count_simulators(cfg.count_spec());
  } else {
    basis = require_pca(cfg);
    protocols = build_protocols(cfg.protocols);
    sims = channel_simulators(protocols, basis);
  }

  // Equal budget: by default the rejection table is the training set itself.
  SummaryDistance distance;
  RejectionRun rej;
  if (cfg.rejection.simulations == 0 || cfg.rejection.simulations == train.size()) {
    rej = run_rejection_on_table(cfg, reference_table_from(train), observed, &distance);
  } else {
    const auto table = build_reference_table(cfg.model_prior, sims, cfg.rejection.simulations,
                                             derive_seed(cfg.seed, kReference));
    rej = run_rejection_on_table(cfg, table, observed, &distance);
  }

  std::vector<MethodOutput> methods{{"mdn", classifier_predictions(clf, test)}, {"rejection", rej.estimates}};
  const Eigen::MatrixXd exact = cfg.is_counts() ? load_or_compute_exact(cfg, test) : Eigen::MatrixXd();

  std::vector<MethodScore> scores = compare_methods(methods, exact, labels);
  const std::size_t M = static_cast<std::size_t>(cfg.n_models());
  std::vector<std::string> columns{"method", "test_id", "model"};
  for (std::size_t m = 0; m < M; ++m) columns.push_back("p_" + model_name(cfg, static_cast<int>(m)));
  for (const char* c : {"budget", "seed", "note"}) columns.push_back(c);
  Table rows{columns, {}};
  auto emit = [&](const std::string& method, const Eigen::MatrixXd& p, std::size_t budget, std::uint64_t seed,
                  auto note) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      std::vector<std::string> r{method, std::to_string(i), std::to_string(labels[static_cast<std::size_t>(i)])};
      for (Eigen::Index m = 0; m < p.cols(); ++m) r.push_back(fmt(p(i, m)));
      r.push_back(std::to_string(budget));
      r.push_back(std::to_string(seed));
      r.push_back(note(static_cast<std::size_t>(i)));
      rows.add(std::move(r));
    }
  };
  emit("mdn", methods[0].probabilities, train.size(), cfg.classifier.train.seed, [](std::size_t) { return ""; });
  emit("rejection", rej.estimates, rej.budget, cfg.seed,
       [&](std::size_t i) { return rej.undefined[i] ? std::string("undefined_prior_used") : std::string(); });
  if (cfg.is_counts()) emit("exact", exact, 0, cfg.seed, [](std::size_t) { return ""; });

  if (cfg.smc.enabled) {
    const std::size_t n = std::min(cfg.smc.test_points, test.size());
    Eigen::MatrixXd est(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(M));
    std::vector<char> degenerate(n, 0);
    const std::uint64_t smc_seed = derive_seed(cfg.seed, kSmc);
    parallel_for(n, [&](std::size_t i) {
      const SmcResult r = smc_models(cfg.model_prior, sims, observed[i], distance, cfg.smc.config, derive_seed(smc_seed, i));
      degenerate[i] = r.degenerate;
      for (std::size_t m = 0; m < M; ++m) est(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)) = r.estimate()[m];
    });
    emit("smc", est, cfg.smc.config.budget, smc_seed,
         [&](std::size_t i) { return degenerate[i] ? std::string("degenerate") : std::string(); });
    // paired scores on the SMC subset
    const std::vector<int> sub_labels(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    const auto rows_n = static_cast<Eigen::Index>(n);
    std::vector<MethodOutput> subset{{"mdn_smc_subset", methods[0].probabilities.topRows(rows_n)},
                                     {"rejection_smc_subset", methods[1].probabilities.topRows(rows_n)},
                                     {"smc", est}};
    const Eigen::MatrixXd ref = exact.size() ? Eigen::MatrixXd(exact.topRows(rows_n)) : Eigen::MatrixXd();
    for (auto& s : compare_methods(subset, ref, sub_labels)) scores.push_back(s);
  }

  const std::string detail = cfg.path("compare/compare.tsv");
  write_text_file(detail, rows.str());
  Table summary{{"method", "mae", "cross_entropy", "n"}, {}};
  for (const auto& s : scores) summary.add({s.method, fmt(s.mae), fmt(s.cross_entropy), std::to_string(s.n)});
  const std::string sum = cfg.path("compare/summary.tsv");
  write_text_file(sum, summary.str());
  json meta{{"rejection_epsilon", rej.epsilon},
            {"rejection_budget", rej.budget},
            {"rejection_undefined", std::count(rej.undefined.begin(), rej.undefined.end(), 1)}};
  write_text_file(cfg.path("compare/rejection.json"), meta.dump(2) + "\n");
  return {detail, sum, cfg.path("compare/rejection.json")};
}

std::vector<std::string> cmd_report(const ExperimentConfig& cfg) {
  cfg.validate();
  log_command(cfg, "report", json::object());
  std::string md = "# Experiment report: " + kind_name(cfg.kind) + "\n\n";
  md += "seed " + std::to_string(cfg.seed) + ", n_train " + std::to_string(cfg.n_train) + ", n_test " +
        std::to_string(cfg.n_test) + "\n\n";
  const std::filesystem::path vdir = cfg.path("validation");
  if (std::filesystem::is_directory(vdir)) {
    md += "## Validation\n\n| report | KS | KS 1% critical | max coverage gap | median normalized KL | median eigen angle |\n";
    md += "|---|---|---|---|---|---|\n";
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(vdir))
      if (e.path().string().ends_with("_report.json")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    auto short_num = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4g", v);
      return std::string(buf);
    };
    auto cell = [&](const json& j, const char* key) {
      return j.contains(key) && j[key].is_number() ? short_num(j[key].get<double>()) : std::string("-");
    };
    std::string scores;
    for (const auto& f : files) {
      const json j = json::parse(read_text(f.string()));
      const bool has_quantiles = !j["quantiles"].empty();
      std::string gap = "-";
      if (!j["levels"].empty() && !j["coverage"].empty()) {
        double g = 0.0;
        for (std::size_t i = 0; i < j["levels"].size(); ++i)
          g = std::max(g, std::abs(j["coverage"][i].get<double>() - j["levels"][i].get<double>()));
        gap = short_num(g);
      }
      md += "| " + j["name"].get<std::string>() + " | " + (has_quantiles ? cell(j, "ks") : "-") + " | " +
            (has_quantiles ? cell(j, "ks_critical") : "-") + " | " + gap + " | " + cell(j, "median_normalized_kl") +
            " | " + cell(j, "median_eigen_angle") + " |\n";
      for (const auto& m : j["methods"])
        scores += "- " + j["name"].get<std::string>() + " / " + m["method"].get<std::string>() + ": MAE " +
                  cell(m, "mae") + ", cross-entropy " + cell(m, "cross_entropy") + "\n";
    }
    if (!scores.empty()) md += "\n### Model-probability scores\n\n" + scores;
    md += "\n";
    if (std::filesystem::is_regular_file(vdir / "prior_consistency.tsv"))
      md += "### Prior consistency\n\n```\n" + read_text((vdir / "prior_consistency.tsv").string()) + "```\n\n";
  }
  const std::string sum = cfg.path("compare/summary.tsv");
  if (std::filesystem::is_regular_file(sum)) md += "## Method comparison\n\n```\n" + read_text(sum) + "```\n";
  const std::string out = cfg.path("report.md");
  write_text_file(out, md);
  return {out};
}

}  // namespace bmc
