#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pnrtomo/detector.hpp"
#include "pnrtomo/eme.hpp"
#include "pnrtomo/metrics.hpp"
#include "pnrtomo/probes.hpp"
#include "pnrtomo/rng.hpp"
#include "pnrtomo/tomography.hpp"

using namespace pnrtomo;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double log_likelihood(const Vector& clicks, const Matrix& povm, const Vector& f) {
  Vector q = povm.transpose() * f;
  double ll = 0.0;
  for (Eigen::Index n = 0; n < clicks.size(); ++n)
    if (clicks[n] > 0.0) ll += clicks[n] * std::log(q[n]);
  return ll;
}

detector::DetectorConfig balanced70() {
  detector::DetectorConfig cfg;
  cfg.n_pixels = 70;
  cfg.coupling_efficiency = 0.99;
  cfg.splitting_weights = Vector::Constant(70, 1.0 / 70.0);
  cfg.intrinsic_efficiencies = Vector::Constant(70, 0.92);
  cfg.seed = 0;
  return cfg;
}

}  // namespace

TEST_CASE("perfect photon counter with no entropy term lands on the data") {
  Matrix id = Matrix::Identity(3, 3);
  Vector p = vec({0.4, 0.35, 0.25});
  eme::EmeOptions opts;
  opts.lambda = 0.0;
  eme::EmeResult r = eme::eme_reconstruct(p, id, opts);
  CHECK(r.converged);
  CHECK(r.iterations <= 3);
  CHECK((r.f - p).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(r.lambda == 0.0);
}

TEST_CASE("uniform data through the identity stays uniform immediately") {
  Matrix id = Matrix::Identity(4, 4);
  Vector p = Vector::Constant(4, 0.25);
  eme::EmeOptions opts;
  opts.lambda = 0.0;
  eme::EmeResult r = eme::eme_reconstruct(p, id, opts);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK((r.f.array() - 0.25).abs().maxCoeff() == 0.0);
}

TEST_CASE("plain em steps never decrease the likelihood") {
  detector::DetectorConfig cfg = detector::sample_detector(4, 6);
  // blend in a uniform floor so every povm column is strictly positive
  Matrix exact = detector::exact_povm(cfg, 12);
  Matrix povm = 0.9 * exact + 0.1 * Matrix::Constant(13, 5, 0.2);
  Vector clicks = detector::coherent_click_distribution(cfg, 2.0);

  eme::EmeOptions opts;
  opts.lambda = 0.0;
  double prev = -1e300;
  for (int cap = 1; cap <= 25; ++cap) {
    opts.max_iter = cap;
    eme::EmeResult r = eme::eme_reconstruct(clicks, povm, opts);
    double ll = log_likelihood(clicks, povm, r.f);
    CHECK(ll >= prev - 1e-9);
    prev = ll;
  }
}

TEST_CASE("every iterate is a valid distribution, not only the last") {
  detector::DetectorConfig cfg = detector::sample_detector(3, 11);
  Matrix povm = detector::exact_povm(cfg, 10);
  Vector clicks = detector::thermal_click_distribution(cfg, 1.5);
  eme::EmeOptions opts;
  for (int cap : {1, 2, 3, 5, 8, 20}) {
    opts.max_iter = cap;
    eme::EmeResult r = eme::eme_reconstruct(clicks, povm, opts);
    CHECK(r.f.minCoeff() > 0.0);
    CHECK_THAT(r.f.sum(), Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("impossible outcomes raise a model mismatch naming the outcome") {
  Matrix povm(3, 3);
  povm << 1, 0, 0, 1, 0, 0, 1, 0, 0;  // detector that never clicks
  Vector clicks = vec({0.5, 0.5, 0.0});
  CHECK_THROWS_WITH(eme::eme_reconstruct(clicks, povm),
                    Catch::Matchers::ContainsSubstring("outcome 1"));
}

TEST_CASE("input validation") {
  Matrix id = Matrix::Identity(3, 3);
  CHECK_THROWS_AS(eme::eme_reconstruct(vec({0.5, 0.5}), id), std::invalid_argument);
  CHECK_THROWS_AS(eme::eme_reconstruct(vec({0.7, 0.2, 0.2}), id), std::invalid_argument);
  CHECK_THROWS_AS(eme::eme_reconstruct(vec({1.2, -0.2, 0.0}), id), std::invalid_argument);

  eme::EmeOptions bad;
  bad.lambda = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.floor_eps = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.floor_eps = 1e-7;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.convergence_tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.max_iter = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("reconstruction is deterministic") {
  detector::DetectorConfig cfg = detector::sample_detector(5, 3);
  Matrix povm = detector::exact_povm(cfg, 14);
  Vector clicks = detector::coherent_click_distribution(cfg, 3.0);
  eme::EmeResult a = eme::eme_reconstruct(clicks, povm);
  eme::EmeResult b = eme::eme_reconstruct(clicks, povm);
  CHECK(a.f == b.f);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("bright coherent light on a 70-pixel array reconstructs faithfully") {
  detector::DetectorConfig cfg = balanced70();
  const int truncation = 122;
  Matrix povm = detector::exact_povm(cfg, truncation);
  Vector clicks = detector::coherent_click_distribution(cfg, 50.0);

  eme::EmeResult r = eme::eme_reconstruct(clicks, povm);  // default lambda 0.02
  REQUIRE(r.converged);
  Vector truth = metrics::poisson_pnd(50.0, truncation);
  CHECK(metrics::fidelity(r.f, truth) > 0.999);
  CHECK_THAT(metrics::g2(r.f), Catch::Matchers::WithinAbs(1.0, 0.05));
}

TEST_CASE("lambda sweep mechanics") {
  detector::DetectorConfig cfg = detector::sample_detector(4, 19);
  Matrix povm = detector::exact_povm(cfg, 12);
  std::vector<eme::ReconProblem> problems{
      {detector::coherent_click_distribution(cfg, 2.0), metrics::poisson_pnd(2.0, 12)}};

  std::vector<eme::LambdaRow> one = eme::lambda_sweep(problems, povm, {0.02});
  REQUIRE(one.size() == 1);
  CHECK(one[0].lambda == 0.02);
  CHECK(one[0].mean_fidelity > 0.0);
  CHECK(one[0].mean_fidelity <= 1.0);

  std::vector<double> lams{0.001, 0.01, 0.1};
  std::vector<eme::LambdaRow> rows = eme::lambda_sweep(problems, povm, lams);
  REQUIRE(rows.size() == 3);
  for (size_t i = 0; i < 3; ++i) CHECK(rows[i].lambda == lams[i]);

  CHECK_THROWS_AS(eme::lambda_sweep({}, povm, lams), std::invalid_argument);
  CHECK_THROWS_AS(eme::lambda_sweep(problems, povm, {}), std::invalid_argument);
}

TEST_CASE("entropy weight has an interior sweet spot on noisy data") {
  // tomography fixture: 20-pixel detector probed on the integer grid
  detector::DetectorConfig cfg = detector::sample_detector(20, 11);
  probes::ProbePlan plan = probes::grid_plan(1.0, 78.0, 117, 100000);
  Matrix F = probes::build_probe_matrix(plan);
  const int d = static_cast<int>(plan.alpha_sq_values.size());
  Matrix P(d, 21);
  detector::NoiseModel noise{0.0188};
  rng::Key pkey{5};
  for (int i = 0; i < d; ++i)
    P.row(i) = detector::simulate_coherent_probe(cfg, plan.alpha_sq_values[i], noise,
                                                 plan.pulses_per_probe, pkey.split(1000 + i))
                   .probs;
  tomo::QpSolution sol = tomo::solve_mdt(P, F, 1e-4);
  REQUIRE(sol.converged);

  // short reconstructions of known states, deliberately noisy
  std::vector<eme::ReconProblem> problems;
  rng::Key skey{77};
  int salt = 0;
  for (double mean : {5.0, 10.0}) {
    problems.push_back(
        {detector::simulate_coherent_probe(cfg, mean, {}, 10000, skey.split(salt++)).probs,
         metrics::poisson_pnd(mean, 117)});
    problems.push_back({detector::simulate_thermal(cfg, mean, 10000, skey.split(salt++)).probs,
                        metrics::thermal_pnd(mean, 117)});
  }

  std::vector<double> lams{0.001, 0.005, 0.02, 0.05, 0.1};
  std::vector<eme::LambdaRow> rows = eme::lambda_sweep(problems, sol.povm, lams);
  REQUIRE(rows.size() == lams.size());

  size_t best = 0;
  for (size_t i = 1; i < rows.size(); ++i)
    if (rows[i].mean_fidelity > rows[best].mean_fidelity) best = i;
  CHECK(best > 0);
  CHECK(best + 1 < rows.size());
  CHECK(rows[best].mean_fidelity > rows.front().mean_fidelity);
  CHECK(rows[best].mean_fidelity > rows.back().mean_fidelity);
}
