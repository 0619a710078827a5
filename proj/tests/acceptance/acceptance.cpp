// Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "bmc/errors.hpp"
#include "bmc/experiments.hpp"
#include "bmc/io.hpp"
#include "bmc/parallel.hpp"
#include "oracle_helpers.hpp"

using namespace bmc;
namespace fs = std::filesystem;
namespace th = testing_helpers;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1

Outcome oracle_poisson() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst_z = 0.0, worst_moment = 0.0;
  for (int c = 0; c < 100; ++c) {
    const int n = 1 + static_cast<int>(rng.below(200));
    const double lambda = 0.1 + 50.0 * rng.uniform();
    const GammaParams prior{1.0 + 29.0 * rng.uniform(), 0.1 + 4.9 * rng.uniform()};
    const auto x = simulate_poisson(lambda, n, rng);

    const double ref = th::poisson_evidence_quadrature(x, prior);
    worst_z = std::max(worst_z, std::abs(poisson_log_evidence(x, prior) - ref) / std::abs(ref));

    // posterior mean and variance by quadrature of lambda^j L(lambda) p(lambda)
    const th::PoissonStats st(x);
    const double a = prior.shape + st.sum, b = st.n + 1.0 / prior.scale;
    const double center = a / b, scale = 1.0 / std::sqrt(a);
    auto log_f = [&](double l) { return st.loglik(l) + th::gamma_logpdf(l, prior.shape, prior.scale); };
    const double m1 = std::exp(th::log_integral_1d([&](double l) { return log_f(l) + std::log(l); }, center, scale) - ref);
    const double m2 =
        std::exp(th::log_integral_1d([&](double l) { return log_f(l) + 2.0 * std::log(l); }, center, scale) - ref);
    const GammaParams post = poisson_posterior(x, prior);
    const double mean = post.shape * post.scale, var = post.shape * post.scale * post.scale;
    worst_moment = std::max({worst_moment, std::abs(mean - m1) / m1, std::abs(var - (m2 - m1 * m1)) / var});
  }
  const double t = seconds_since(t0);
  return {worst_z < 1e-6 && worst_moment < 1e-6 && t < 10.0,
          "max rel err evidence " + num(worst_z) + ", posterior moments " + num(worst_moment) + ", " + num(t, 3) + " s"};
}

// ---------------------------------------------------------------- 2

// Prior-predictive Monte Carlo on the count histogram (n draws).
th::McEvidence nb_evidence_mc_hist(const std::vector<std::int64_t>& x, const GammaParams& kp, const GammaParams& tp,
                                   std::size_t n, std::uint64_t seed) {
  std::map<std::int64_t, double> hist;
  for (auto v : x) hist[v] += 1.0;
  double const_term = 0.0, sum_x = 0.0;
  for (const auto& [v, c] : hist) {
    const_term -= c * std::lgamma(static_cast<double>(v) + 1.0);
    sum_x += c * static_cast<double>(v);
  }
  const double C = static_cast<double>(x.size());
  Rng rng(seed);
  std::vector<double> ll(n);
  double peak = -INFINITY;
  for (auto& l : ll) {
    const double k = gamma_variate(rng, kp.shape, kp.scale);
    const double t = gamma_variate(rng, tp.shape, tp.scale);
    double s = const_term - C * std::lgamma(k) - C * k * std::log1p(t) + sum_x * (std::log(t) - std::log1p(t));
    for (const auto& [v, c] : hist) s += c * std::lgamma(static_cast<double>(v) + k);
    l = s;
    peak = std::max(peak, l);
  }
  double s1 = 0.0, s2 = 0.0;
  for (double l : ll) {
    const double w = std::exp(l - peak);
    s1 += w;
    s2 += w * w;
  }
  const double nn = static_cast<double>(n);
  const double mean = s1 / nn;
  const double var = (s2 / nn - mean * mean) * nn / (nn - 1.0);
  return {peak + std::log(mean), std::sqrt(var / nn) / mean};
}

Outcome oracle_nb() {
  int within = 0;
  double worst_sigma = 0.0, worst_grid = 0.0;
  for (int c = 0; c < 20; ++c) {
    const auto spec = make_count_spec(c % 2 ? CountScenario::difficult() : CountScenario::easy());
    Rng rng = stream(202, static_cast<std::uint64_t>(c));
    const auto s = draw_count_sample(spec, c % 4 < 3 ? 1 : 0, rng);
    const auto ev = nb_log_evidence(s.counts, spec.nb_shape_prior, spec.nb_scale_prior);
    const auto mc = nb_evidence_mc_hist(s.counts, spec.nb_shape_prior, spec.nb_scale_prior, 1000000,
                                        derive_seed(203, static_cast<std::uint64_t>(c)));
    // Z ratio in units of the Monte Carlo standard error
    const double sigma = std::abs(std::expm1(ev.log_evidence - mc.log_z)) / mc.rel_se;
    worst_sigma = std::max(worst_sigma, sigma);
    within += sigma <= 3.0;
    const auto fine = nb_log_evidence(s.counts, spec.nb_shape_prior, spec.nb_scale_prior, GridConfig{512, 512, 1e-4});
    worst_grid = std::max(worst_grid, std::abs(fine.log_evidence - ev.log_evidence));
  }
  return {within == 20 && worst_grid < 1e-3, std::to_string(within) + "/20 within 3 MC SE (max " + num(worst_sigma, 3) +
                                                 " SE), max grid-doubling change " + num(worst_grid)};
}

// ---------------------------------------------------------------- 3

template <class Net, class Loss>
double relative_gradient_error(const Net& net, const Net& grad, Loss&& loss) {
  Eigen::VectorXd p = pack(net);
  const Eigen::VectorXd analytic = pack(grad);
  Eigen::VectorXd numeric(p.size());
  Net work = net;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p(i);
    p(i) = keep + h;
    unpack(p, work);
    const double up = loss(work);
    p(i) = keep - h;
    unpack(p, work);
    const double down = loss(work);
    p(i) = keep;
    numeric(i) = (up - down) / (2.0 * h);
  }
  return (analytic - numeric).norm() / std::max({analytic.norm(), numeric.norm(), 1e-12});
}

Outcome gradient_checks() {
  Rng rng(303);
  double worst_cls = 0.0, worst_mog = 0.0;
  auto random_hidden = [&] {
    std::vector<int> h(1 + rng.below(2));
    for (auto& v : h) v = 2 + static_cast<int>(rng.below(5));
    return h;
  };
  auto random_matrix = [&](int r, int c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  for (int n = 0; n < 20; ++n) {
    const int in = 1 + static_cast<int>(rng.below(4));
    const int models = 2 + static_cast<int>(rng.below(2));
    const ClassifierNet cls = make_classifier(in, random_hidden(), models, rng.next());
    const Eigen::MatrixXd x = random_matrix(6, in);
    std::vector<int> labels(6);
    for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(models)));
    ClassifierNet g;
    classifier_loss_and_gradient(cls, x, labels, &g);
    worst_cls = std::max(worst_cls, relative_gradient_error(cls, g, [&](const ClassifierNet& w) {
                           return classifier_loss_and_gradient(w, x, labels, nullptr);
                         }));

    const int d = 1 + static_cast<int>(rng.below(3));
    const int k = 1 + static_cast<int>(rng.below(3));
    MogNet mog = make_mog(in, random_hidden(), k, d, rng.next());
    Eigen::VectorXd p = pack(mog);
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += 0.3 * rng.normal();
    unpack(p, mog);
    const Eigen::MatrixXd t = random_matrix(6, d);
    MogNet mg = mog;
    mog_loss_and_gradient(mog, x, t, &mg);
    worst_mog = std::max(worst_mog, relative_gradient_error(mog, mg, [&](const MogNet& w) {
                           return mog_loss_and_gradient(w, x, t, nullptr);
                         }));
  }
  return {worst_cls < 1e-4 && worst_mog < 1e-4,
          "max relative error classifier " + num(worst_cls) + ", mixture " + num(worst_mog)};
}

// ---------------------------------------------------------------- 4 to 7

struct CountRun {
  ExperimentConfig cfg;
  Dataset train;
};

CountRun desk_counts() {
  CountRun r{ExperimentConfig::defaults(ExperimentKind::CountsEasy, 404), {}};
  r.cfg.n_train = 20000;
  r.cfg.n_test = 500;
  r.train = make_dataset(r.cfg, r.cfg.n_train, train_seed(r.cfg));
  return r;
}

// Includes generating the training set, which `run` receives.
Outcome counts_classifier(CountRun& run) {
  const auto t0 = std::chrono::steady_clock::now();
  run = desk_counts();
  const auto& cfg = run.cfg;
  const Dataset test = make_dataset(cfg, cfg.n_test, test_seed(cfg));
  const ClassifierModel clf = train_classifier_on(run.train, cfg.classifier);
  const Eigen::MatrixXd exact = exact_model_posteriors(cfg, test);
  std::vector<Eigen::VectorXd> observed;
  for (const auto& s : test) observed.push_back(Eigen::Map<const Eigen::VectorXd>(s.summary.data(), 2));
  const RejectionRun rej = run_rejection(cfg, count_simulators(cfg.count_spec()), observed);
  const std::vector<MethodOutput> methods{{"mdn", classifier_predictions(clf, test)}, {"rejection", rej.estimates}};
  const auto scores = compare_methods(methods, exact, labels_of(test));
  const double t = seconds_since(t0);
  const std::size_t undefined = static_cast<std::size_t>(std::count(rej.undefined.begin(), rej.undefined.end(), 1));
  return {scores[0].mae < 0.05 && scores[0].mae < scores[1].mae && t < 600.0,
          "MAE mdn " + num(scores[0].mae) + " vs rejection " + num(scores[1].mae) + " (budget " +
              std::to_string(rej.budget) + ", eps " + num(rej.epsilon) + ", " + std::to_string(undefined) +
              " undefined), " + num(t, 3) + " s"};
}

Outcome prior_consistency_check(const CountRun& run) {
  const std::vector<double> priors{0.1, 0.3, 0.5, 0.7, 0.9};
  const auto rows = prior_consistency(run.cfg.scenario, priors, 20000, 2000, run.cfg.classifier.hidden,
                                      run.cfg.classifier.train, derive_seed(run.cfg.seed, 8));
  bool pass = true;
  std::string detail;
  for (const auto& r : rows) {
    pass = pass && std::abs(r.mean_posterior - r.prior) < 0.05;
    detail += (detail.empty() ? "" : ", ") + num(r.prior, 2) + "->" + num(r.mean_posterior, 3);
  }
  return {pass, detail};
}

Dataset draws_from_model(const CountModelSpec& spec, int model, std::size_t n, std::uint64_t seed) {
  Dataset out(n);
  parallel_for(n, [&](std::size_t i) {
    Rng rng = stream(seed, i);
    out[i] = draw_count_sample(spec, model, rng);
  });
  return out;
}

Outcome poisson_calibration(const CountRun& run) {
  const auto& cfg = run.cfg;
  const auto spec = cfg.count_spec();
  const PosteriorModel post = train_posterior_on(run.train, 0, cfg.posteriors[0]);
  const Dataset test = draws_from_model(spec, 0, 500, derive_seed(cfg.seed, 505));
  std::vector<Posterior1D> marg(test.size());
  std::vector<double> truth(test.size()), nkl(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    const Eigen::Map<const Eigen::VectorXd> s(test[i].summary.data(), 2);
    const MoGPosterior q = post.predict(s);
    marg[i] = mog_posterior_1d(q.marginal(0));
    truth[i] = test[i].params[0];
    const GammaParams exact = poisson_posterior(test[i].counts, spec.poisson_rate_prior);
    nkl[i] = normalized_kl(gamma_density(exact), mog_density(q), gamma_density(spec.poisson_rate_prior),
                           gamma_grid(exact, cfg.validation.quadrature_nodes))
                 .value;
  });
  const auto q = quantile_check(marg, truth);
  const auto levels = default_levels();
  const auto cov = credible_coverage(marg, truth, levels);
  double gap = 0.0;
  for (std::size_t l = 0; l < levels.size(); ++l) gap = std::max(gap, std::abs(cov[l] - levels[l]));
  const double med = median_of(nkl);
  return {q.uniform() && gap < 0.07 && med < 0.15, "KS " + num(q.ks) + " (1% critical " + num(q.ks_critical) +
                                                       "), max coverage gap " + num(gap) + ", median normalized KL " +
                                                       num(med)};
}

Outcome nb_eigen(const CountRun& run) {
  const auto& cfg = run.cfg;
  const auto spec = cfg.count_spec();
  const PosteriorModel post = train_posterior_on(run.train, 1, cfg.posteriors[1]);
  const Dataset test = draws_from_model(spec, 1, 100, derive_seed(cfg.seed, 606));
  std::vector<double> angles(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    const auto g = nb_grid_posterior(test[i].counts, spec.nb_shape_prior, spec.nb_scale_prior, cfg.grid);
    Rng rng = stream(derive_seed(cfg.seed, 607), i);
    const auto pts = grid_sample(g, 5000, rng);
    Eigen::MatrixXd samples(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t k = 0; k < pts.size(); ++k) samples.row(static_cast<Eigen::Index>(k)) = pts[k].transpose();
    const MoGPosterior q = post.predict(Eigen::Map<const Eigen::VectorXd>(test[i].summary.data(), 2));
    angles[i] = eigen_check(samples, q, 5000, rng).angle_deg;
  });
  const auto undefined = std::count_if(angles.begin(), angles.end(), [](double a) { return std::isnan(a); });
  const double med = median_of(angles);
  return {med < 15.0, "median angle " + num(med) + " deg over " + std::to_string(angles.size() - undefined) +
                          " cases (" + std::to_string(undefined) + " near-isotropic)"};
}

// ---------------------------------------------------------------- 8 to 10

Outcome channel_comparison(const ExperimentConfig& cfg, const PcaBasis& basis) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train = make_dataset(cfg, 20000, train_seed(cfg), &basis);
  const Dataset test = make_dataset(cfg, 500, test_seed(cfg), &basis);
  const ClassifierModel clf = train_classifier_on(train, cfg.classifier);
  const Eigen::MatrixXd probs = classifier_predictions(clf, test);
  const auto labels = labels_of(test);
  std::size_t confident = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) confident += probs(static_cast<Eigen::Index>(i), labels[i]) > 0.9;

  std::vector<Eigen::VectorXd> observed;
  for (const auto& s : test)
    observed.push_back(Eigen::Map<const Eigen::VectorXd>(s.summary.data(), static_cast<Eigen::Index>(s.summary.size())));
  const RejectionRun rej = run_rejection_on_table(cfg, reference_table_from(train), observed);
  const std::vector<MethodOutput> methods{{"mdn", probs}, {"rejection", rej.estimates}};
  const auto scores = compare_methods(methods, Eigen::MatrixXd(), labels);
  const double frac = static_cast<double>(confident) / static_cast<double>(labels.size());
  return {frac >= 0.9 && scores[0].cross_entropy < scores[1].cross_entropy,
          "true model > 0.9 on " + num(100.0 * frac, 4) + "% of traces, cross-entropy mdn " +
              num(scores[0].cross_entropy) + " vs rejection " + num(scores[1].cross_entropy) + ", " +
              num(seconds_since(t0), 3) + " s"};
}

Outcome channel_physics() {
  const auto protocols = build_protocols();
  Rng rng(909);
  bool gates_ok = true;
  double worst_zero = 0.0, worst_dt = 0.0;
  auto fine = protocols;
  for (auto& p : fine) p.dt *= 0.5;
  for (int draw = 0; draw < 6; ++draw) {
    const int m = draw % 2;
    const ChannelParams params =
        draw < 2 ? (m == 0 ? ChannelParams{KdParams{}} : ChannelParams{KsParams{}}) : channel_from_free(m, sample_channel_prior(m, rng));
    for (const auto& proto : protocols)
      for (const auto& sw : proto.sweeps) {
        std::vector<double> gate;
        double total = 0.0;
        for (const auto& seg : sw) total += seg.duration;
        simulate_sweep(params, sw, proto.dt, subsample_times(total), proto.holding_v, &gate);
        for (double g : gate) gates_ok = gates_ok && g >= 0.0 && g <= 1.0;
      }
    const double ek = std::visit([](const auto& p) { return p.E_K; }, params);
    VoltageProtocol clamp{"reversal", {{{300.0, ek, ek}}, {{100.0, -40.0, -40.0}, {200.0, ek, ek}}}, 0.025, ek};
    const auto z = simulate_clamp(params, clamp);
    for (int j = 0; j < kSamplesPerSweep; ++j) worst_zero = std::max(worst_zero, std::abs(z.values[static_cast<std::size_t>(j)]));
    const auto a = simulate_all(params, protocols), b = simulate_all(params, fine);
    for (std::size_t i = 0; i < protocols.size(); ++i)
      for (std::size_t j = 0; j < a.protocols[i].values.size(); ++j)
        worst_dt = std::max(worst_dt, std::abs(a.protocols[i].values[j] - b.protocols[i].values[j]));
  }
  const KdParams gt;
  const double limit = kd_rates(gt.V_T + gt.th_alpha, gt).alpha;
  const bool pass = gates_ok && worst_zero == 0.0 && worst_dt < 1e-3 && std::abs(limit - 0.16) < 1e-12;
  return {pass, std::string("gates in [0,1]: ") + (gates_ok ? "yes" : "no") + ", max |I| at E_K " + num(worst_zero) +
                    ", max dt-halving change " + num(worst_dt) + ", alpha limit " + num(limit, 12)};
}

Outcome pca_variance(const PcaBasis& basis) {
  bool pass = true;
  std::string detail;
  for (const auto& p : basis.protocols) {
    const double v = p.explained.sum();
    pass = pass && v >= 0.95;
    detail += (detail.empty() ? "" : ", ") + p.name + " " + num(100.0 * v, 4) + "%";
  }
  return {pass, detail};
}

// ---------------------------------------------------------------- 11

std::map<std::string, std::string> snapshot(const std::string& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text(e.path().string());
  return files;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "bmc_acceptance_determinism";
  fs::remove_all(root);
  const nlohmann::json counts = {
      {"experiment", "counts_difficult"},
      {"seed", 1111},
      {"n_train", 3000},
      {"n_test", 80},
      {"output_dir", (root / "counts").string()},
      {"classifier", {{"epochs", 5}}},
      {"posteriors", {{{"epochs", 5}}, {{"epochs", 5}}}},
      {"validation", {{"eigen_cases", 5}, {"eigen_samples", 500}, {"consistency_train", 1000}, {"consistency_test", 100}}},
      {"grid", {{"k_nodes", 96}, {"theta_nodes", 96}}}};
  const nlohmann::json channels = {{"experiment", "channels"},
                                   {"seed", 2222},
                                   {"n_train", 60},
                                   {"n_test", 10},
                                   {"output_dir", (root / "channels").string()},
                                   {"pca", {{"corpus_per_model", 10}}},
                                   {"classifier", {{"epochs", 3}}},
                                   {"posteriors", {{{"epochs", 3}}, {{"epochs", 3}}}}};
  const auto cc = ExperimentConfig::from_json(counts.dump());
  const auto ch = ExperimentConfig::from_json(channels.dump());
  auto pipeline = [&] {
    cmd_gen_data(cc);
    cmd_train(cc, "classifier");
    cmd_train(cc, "posterior:0");
    cmd_train(cc, "posterior:1");
    cmd_validate(cc);
    cmd_build_pca(ch);
    cmd_gen_data(ch);
    cmd_train(ch, "classifier");
    cmd_train(ch, "posterior:0");
    cmd_train(ch, "posterior:1");
    cmd_validate(ch);
  };
  const char* prev = std::getenv("BMC_THREADS");
  const std::string saved = prev ? prev : "";
  ::setenv("BMC_THREADS", "1", 1);
  pipeline();
  const auto first = snapshot(root.string());
  fs::remove_all(root);
  ::setenv("BMC_THREADS", "3", 1);
  pipeline();
  const auto second = snapshot(root.string());
  if (prev) ::setenv("BMC_THREADS", saved.c_str(), 1);
  else ::unsetenv("BMC_THREADS");
  fs::remove_all(root);

  std::size_t differing = 0;
  std::string first_diff;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) {
      ++differing;
      if (first_diff.empty()) first_diff = name;
    }
  }
  const bool pass = differing == 0 && first.size() == second.size();
  return {pass, std::to_string(first.size()) + " files compared across 1 and 3 threads, " + std::to_string(differing) +
                    " differ" + (first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& title, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2d %s  %s: %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", title.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  };

  report(1, "Poisson oracle vs quadrature", oracle_poisson);
  report(2, "NB evidence vs Monte Carlo and grid doubling", oracle_nb);
  report(3, "MDN gradient checks", gradient_checks);

  CountRun counts;
  report(4, "desk-scale count model comparison", [&] { return counts_classifier(counts); });
  report(5, "prior consistency", [&] { return prior_consistency_check(counts); });
  report(6, "Poisson posterior calibration", [&] { return poisson_calibration(counts); });
  report(7, "NB joint posterior eigenvectors", [&] { return nb_eigen(counts); });

  const ExperimentConfig channels = ExperimentConfig::defaults(ExperimentKind::Channels, 808);
  PcaBasis basis;
  report(10, "PCA explained variance", [&] {
    basis = build_channel_pca(channels);
    return pca_variance(basis);
  });
  report(8, "channel model comparison", [&] { return channel_comparison(channels, basis); });
  report(9, "channel simulator physics", channel_physics);
  report(11, "pipeline determinism", determinism);

  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
