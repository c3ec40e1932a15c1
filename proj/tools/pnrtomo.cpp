// command-line driver: simulate click statistics, run tomography, reconstruct
// photon-number distributions, benchmark solver scaling
#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pnrtomo/bench.hpp"
#include "pnrtomo/detector.hpp"
#include "pnrtomo/eme.hpp"
#include "pnrtomo/io.hpp"
#include "pnrtomo/metrics.hpp"
#include "pnrtomo/probes.hpp"
#include "pnrtomo/tomography.hpp"

namespace {

using namespace pnrtomo;
using nlohmann::json;

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

// measurement and probe matrices as stored on disk: leading alpha_sq column
void write_simulation(const io::ExperimentConfig& cfg, const std::string& hash) {
  detector::DetectorConfig det = cfg.resolve_detector();
  probes::ProbePlan plan = cfg.resolve_plan();
  Matrix F = probes::build_probe_matrix(plan);

  const int d = static_cast<int>(plan.alpha_sq_values.size());
  detector::NoiseModel noise{cfg.amplitude_noise};
  Matrix P(d, det.n_pixels + 1);
  rng::Key key{cfg.seed};
  for (int i = 0; i < d; ++i) {
    detector::ClickStatistics st = detector::simulate_coherent_probe(
        det, plan.alpha_sq_values[static_cast<size_t>(i)], noise, plan.pulses_per_probe,
        key.split(1000 + static_cast<std::uint64_t>(i)), cfg.threads);
    P.row(i) = st.probs.transpose();
  }

  std::filesystem::create_directories(cfg.output_dir);
  io::write_json(join_path(cfg.output_dir, "detector.json"), io::detector_to_json(det));

  std::vector<std::string> fh{"alpha_sq"};
  for (int k = 0; k <= plan.truncation; ++k) fh.push_back("f" + std::to_string(k));
  Matrix fbody(d, plan.truncation + 2);
  for (int i = 0; i < d; ++i) {
    fbody(i, 0) = plan.alpha_sq_values[static_cast<size_t>(i)];
    fbody.row(i).tail(plan.truncation + 1) = F.row(i);
  }
  io::write_csv(join_path(cfg.output_dir, "probes.csv"), fh, fbody);
  io::write_sidecar(join_path(cfg.output_dir, "probes.csv"), hash);

  std::vector<std::string> ph{"alpha_sq"};
  for (int n = 0; n <= det.n_pixels; ++n) ph.push_back("p" + std::to_string(n));
  Matrix pbody(d, det.n_pixels + 2);
  for (int i = 0; i < d; ++i) {
    pbody(i, 0) = plan.alpha_sq_values[static_cast<size_t>(i)];
    pbody.row(i).tail(det.n_pixels + 1) = P.row(i);
  }
  io::write_csv(join_path(cfg.output_dir, "measurements.csv"), ph, pbody);
  io::write_sidecar(join_path(cfg.output_dir, "measurements.csv"), hash);
}

struct Problem {
  Matrix P;  // D x (N+1)
  Matrix F;  // D x (M+1)
};

Problem load_problem(const std::string& dir) {
  io::Csv meas = io::read_csv(join_path(dir, "measurements.csv"));
  io::Csv prob = io::read_csv(join_path(dir, "probes.csv"));
  if (meas.values.rows() != prob.values.rows())
    throw std::runtime_error("measurements.csv and probes.csv disagree on probe count");
  Problem pr;
  pr.P = meas.values.rightCols(meas.values.cols() - 1);
  pr.F = prob.values.rightCols(prob.values.cols() - 1);
  return pr;
}

void write_povm(const std::string& path, const Matrix& povm, const std::string& hash) {
  std::vector<std::string> h{"photon_number"};
  for (int n = 0; n < povm.cols(); ++n) h.push_back("click" + std::to_string(n));
  Matrix body(povm.rows(), povm.cols() + 1);
  for (Eigen::Index k = 0; k < povm.rows(); ++k) {
    body(k, 0) = static_cast<double>(k);
    body.row(k).tail(povm.cols()) = povm.row(k);
  }
  io::write_csv(path, h, body);
  io::write_sidecar(path, hash);
}

json solution_stats(const tomo::QpSolution& sol) {
  json j;
  j["p_dark"] = tomo::dark_count_probability(sol.povm);
  j["masked_fraction"] = sol.masked_fraction;
  j["objective"] = sol.objective;
  j["kkt_primal_residual"] = sol.kkt_primal_residual;
  j["kkt_dual_residual"] = sol.kkt_dual_residual;
  j["kkt_comp_residual"] = sol.kkt_comp_residual;
  j["iterations"] = sol.iterations;
  j["converged"] = sol.converged;
  j["wall_time_s"] = sol.wall_time;
  j["assembly_time_s"] = sol.assembly_time;
  j["peak_memory_bytes"] = sol.peak_memory;
  return j;
}

void run_tomo(const io::ExperimentConfig& cfg, const std::string& method,
              const std::string& hash) {
  Problem pr = load_problem(cfg.output_dir);
  qp::QpOptions opts;
  opts.threads = cfg.threads;
  json stats;
  tomo::QpSolution sdt, mdt;
  bool want_sdt = method == "sdt" || method == "both";
  bool want_mdt = method == "mdt" || method == "both";
  if (want_sdt) {
    sdt = tomo::solve_sdt(pr.P, pr.F, cfg.gamma, opts);
    write_povm(join_path(cfg.output_dir, "povm_sdt.csv"), sdt.povm, hash);
    stats["sdt"] = solution_stats(sdt);
  }
  if (want_mdt) {
    mdt = tomo::solve_mdt(pr.P, pr.F, cfg.gamma, opts);
    write_povm(join_path(cfg.output_dir, "povm_mdt.csv"), mdt.povm, hash);
    stats["mdt"] = solution_stats(mdt);
  }
  if (want_sdt && want_mdt) {
    double rel = tomo::povm_relative_error(mdt.povm, sdt.povm);
    stats["mdt_vs_sdt_relative_error"] = rel;
    std::cout << "mdt vs sdt relative error: " << rel << "\n";
  }
  stats["gamma"] = cfg.gamma;
  io::write_json(join_path(cfg.output_dir, "solver_stats.json"), stats);
}

Matrix load_povm(const std::string& dir) {
  for (const char* name : {"povm_mdt.csv", "povm_sdt.csv"}) {
    std::string path = join_path(dir, name);
    if (std::filesystem::exists(path)) {
      io::Csv csv = io::read_csv(path);
      return csv.values.rightCols(csv.values.cols() - 1);
    }
  }
  throw std::runtime_error("no POVM file in " + dir + "; run the tomo step first");
}

Vector simulate_input_clicks(const detector::DetectorConfig& det, const std::string& kind,
                             double mean, long pulses, rng::Key key, int threads) {
  if (kind == "coherent")
    return detector::simulate_coherent_probe(det, mean, {}, pulses, key, threads).probs;
  if (kind == "thermal") return detector::simulate_thermal(det, mean, pulses, key, threads).probs;
  throw std::invalid_argument("input kind must be coherent or thermal");
}

void run_reconstruct(const io::ExperimentConfig& cfg, const std::string& kind, double mean,
                     int repeat, const std::string& hash) {
  if (mean < 0.0) throw std::invalid_argument("--mean must be >= 0");
  if (repeat < 1) throw std::invalid_argument("--repeat must be >= 1");
  detector::DetectorConfig det = io::detector_from_json(
      io::read_json(join_path(cfg.output_dir, "detector.json")));
  Matrix povm = load_povm(cfg.output_dir);
  const int m = static_cast<int>(povm.rows()) - 1;

  eme::EmeOptions eopts;
  eopts.lambda = cfg.lambda;
  Vector truth = kind == "coherent" ? metrics::poisson_pnd(mean, m) : metrics::thermal_pnd(mean, m);

  Matrix fs(m + 1, repeat);
  std::vector<metrics::MetricReport> reports;
  json diag;
  rng::Key key{cfg.seed};
  for (int r = 0; r < repeat; ++r) {
    Vector clicks = simulate_input_clicks(det, kind, mean, cfg.pulses,
                                          key.split(0xEC0 + static_cast<std::uint64_t>(r)),
                                          cfg.threads);
    eme::EmeResult rec = eme::eme_reconstruct(clicks, povm, eopts);
    fs.col(r) = rec.f;
    reports.push_back(metrics::make_report(rec.f, truth));
    if (r == 0) {
      diag["iterations"] = rec.iterations;
      diag["final_change"] = rec.final_change;
      diag["lambda"] = rec.lambda;
      diag["converged"] = rec.converged;
    }
  }

  std::filesystem::create_directories(cfg.output_dir);
  Vector fmean = fs.rowwise().mean();
  if (repeat == 1) {
    Matrix body(m + 1, 2);
    for (int k = 0; k <= m; ++k) body.row(k) << k, fmean[k];
    io::write_csv(join_path(cfg.output_dir, "pnd.csv"), {"k", "probability"}, body);
  } else {
    Matrix body(m + 1, 3);
    for (int k = 0; k <= m; ++k) {
      double var = (fs.row(k).array() - fmean[k]).square().sum() / (repeat - 1);
      body.row(k) << k, fmean[k], std::sqrt(var);
    }
    io::write_csv(join_path(cfg.output_dir, "pnd.csv"), {"k", "probability", "stddev"}, body);
  }
  io::write_sidecar(join_path(cfg.output_dir, "pnd.csv"), hash);

  auto stat = [&](auto pick) {
    double s = 0.0;
    for (const auto& rep : reports) s += pick(rep);
    double avg = s / reports.size();
    double var = 0.0;
    for (const auto& rep : reports) var += (pick(rep) - avg) * (pick(rep) - avg);
    return std::pair<double, double>(avg, reports.size() > 1 ? std::sqrt(var / (reports.size() - 1))
                                                             : 0.0);
  };
  json mj;
  auto put = [&](const char* name, auto pick) {
    auto [avg, sd] = stat(pick);
    mj[name] = avg;
    if (repeat > 1) mj[std::string(name) + "_stddev"] = sd;
  };
  put("fidelity", [](const metrics::MetricReport& r) { return r.fidelity; });
  put("tvd", [](const metrics::MetricReport& r) { return r.tvd; });
  put("g2", [](const metrics::MetricReport& r) { return r.g2; });
  put("g3", [](const metrics::MetricReport& r) { return r.g3; });
  put("mean", [](const metrics::MetricReport& r) { return r.mean; });
  mj["input"] = kind;
  mj["input_mean"] = mean;
  mj["repeat"] = repeat;
  mj["eme"] = diag;
  io::write_json(join_path(cfg.output_dir, "metrics.json"), mj);
  std::cout << "fidelity " << mj["fidelity"].get<double>() << ", tvd "
            << mj["tvd"].get<double>() << "\n";
}

void run_bench(const io::ExperimentConfig& cfg, const std::vector<int>& pixels, int reps,
               double budget_gb, const std::string& hash) {
  qp::QpOptions opts;
  opts.threads = cfg.threads;
  std::vector<bench::ScalingRecord> records =
      bench::run_scaling(pixels, reps, opts, cfg.seed, cfg.pulses);

  std::filesystem::create_directories(cfg.output_dir);
  Matrix body(static_cast<Eigen::Index>(records.size()), 6);
  for (size_t i = 0; i < records.size(); ++i) {
    const bench::ScalingRecord& r = records[i];
    body.row(static_cast<Eigen::Index>(i)) << r.n_pixels, (r.method == "sdt" ? 0.0 : 1.0),
        r.solve_time, static_cast<double>(r.peak_memory), r.masked_fraction, r.truncation;
  }
  io::write_csv(join_path(cfg.output_dir, "scaling.csv"),
                {"n_pixels", "method", "time_s", "mem_bytes", "masked_fraction", "M"}, body);
  io::write_sidecar(join_path(cfg.output_dir, "scaling.csv"), hash);

  json fits;
  for (const std::string& method : {std::string("sdt"), std::string("mdt")}) {
    std::vector<double> n, t, m;
    for (const bench::ScalingRecord& r : records)
      if (r.method == method && r.ok) {
        n.push_back(r.n_pixels);
        t.push_back(r.solve_time);
        m.push_back(static_cast<double>(r.peak_memory));
      }
    if (n.size() < 3) continue;
    bench::FitResult ft = bench::fit_power_law(n, t);
    bench::FitResult fm = bench::fit_power_law(n, m);
    fits["time_" + method] = {{"a", ft.a}, {"b", ft.b}, {"residual", ft.residual}};
    fits["mem_" + method] = {{"a", fm.a}, {"b", fm.b}, {"residual", fm.residual}};
    std::cout << method << ": time ~ " << ft.a << " * N^" << ft.b << ", mem ~ " << fm.a
              << " * N^" << fm.b << "\n";
    if (method == "mdt" && budget_gb > 0.0) {
      bench::FitResult gb{fm.a / std::pow(2.0, 30), fm.b, fm.residual};
      int max_n = bench::extrapolate(gb, budget_gb);
      fits["max_pixels_mdt"] = max_n;
      std::cout << "budget " << budget_gb << " GB -> max pixels " << max_n << "\n";
    }
  }
  if (fits.empty()) throw NumericalError("bench: too few successful records to fit");
  io::write_json(join_path(cfg.output_dir, "fits.json"), fits);
}

void run_sweep_gamma(const io::ExperimentConfig& cfg, const std::vector<double>& gammas,
                     const std::string& hash) {
  Problem pr = load_problem(cfg.output_dir);
  qp::QpOptions opts;
  opts.threads = cfg.threads;
  std::vector<tomo::GammaRow> rows = tomo::gamma_sweep(pr.P, pr.F, gammas, opts);
  Matrix body(static_cast<Eigen::Index>(rows.size()), 3);
  for (size_t i = 0; i < rows.size(); ++i)
    body.row(static_cast<Eigen::Index>(i)) << rows[i].gamma, rows[i].p_dark, rows[i].objective;
  io::write_csv(join_path(cfg.output_dir, "gamma_sweep.csv"), {"gamma", "p_dark", "objective"},
                body);
  io::write_sidecar(join_path(cfg.output_dir, "gamma_sweep.csv"), hash);
}

void run_sweep_lambda(const io::ExperimentConfig& cfg, const std::vector<double>& lambdas,
                      const std::vector<double>& means, const std::string& hash) {
  detector::DetectorConfig det = io::detector_from_json(
      io::read_json(join_path(cfg.output_dir, "detector.json")));
  Matrix povm = load_povm(cfg.output_dir);
  const int m = static_cast<int>(povm.rows()) - 1;

  std::vector<eme::ReconProblem> problems;
  rng::Key key{cfg.seed};
  std::uint64_t salt = 0xA11;
  for (double mean : means) {
    problems.push_back({simulate_input_clicks(det, "coherent", mean, cfg.pulses,
                                              key.split(salt++), cfg.threads),
                        metrics::poisson_pnd(mean, m)});
    problems.push_back({simulate_input_clicks(det, "thermal", mean, cfg.pulses,
                                              key.split(salt++), cfg.threads),
                        metrics::thermal_pnd(mean, m)});
  }
  std::vector<eme::LambdaRow> rows = eme::lambda_sweep(problems, povm, lambdas);
  Matrix body(static_cast<Eigen::Index>(rows.size()), 2);
  for (size_t i = 0; i < rows.size(); ++i)
    body.row(static_cast<Eigen::Index>(i)) << rows[i].lambda, rows[i].mean_fidelity;
  io::write_csv(join_path(cfg.output_dir, "lambda_sweep.csv"), {"lambda", "mean_fidelity"}, body);
  io::write_sidecar(join_path(cfg.output_dir, "lambda_sweep.csv"), hash);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiplexed click-detector simulation, tomography and reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags are accepted after the subcommand name

  std::string config_path, output_dir;
  std::uint64_t seed = 0;
  double gamma = 0.0, lambda = -1.0;
  long pulses = 0;
  int threads = 0;
  app.add_option("--config", config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed, "RNG seed (mandatory unless in config)");
  auto* gamma_opt = app.add_option("--gamma", gamma, "smoothing weight (default 1e-4)");
  auto* lambda_opt = app.add_option("--lambda", lambda, "entropy weight (default 0.02)");
  auto* pulses_opt = app.add_option("--pulses", pulses, "pulses per probe (default 100000)");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads");
  app.add_option("--output", output_dir, "output directory (default .)");

  CLI::App* c_sim = app.add_subcommand("simulate", "sample a detector and simulate probe data");
  int sim_pixels = 0;
  c_sim->add_option("--pixels", sim_pixels, "detector size when no config is given");

  CLI::App* c_tomo = app.add_subcommand("tomo", "solve detector tomography from simulated data");
  std::string method = "both";
  c_tomo->add_option("--method", method, "sdt, mdt or both")
      ->check(CLI::IsMember({"sdt", "mdt", "both"}));

  CLI::App* c_rec = app.add_subcommand("reconstruct", "reconstruct a photon-number distribution");
  std::string input_kind = "coherent";
  double input_mean = 1.0;
  int repeat = 1;
  c_rec->add_option("--input", input_kind, "input state: coherent or thermal")
      ->check(CLI::IsMember({"coherent", "thermal"}));
  c_rec->add_option("--mean", input_mean, "input mean photon number")->required();
  c_rec->add_option("--repeat", repeat, "independent repetitions (adds stddev columns)");

  CLI::App* c_bench = app.add_subcommand("bench", "time SDT/MDT solves across pixel counts");
  std::vector<int> pixel_list{20, 40, 60};
  int reps = 3;
  double budget_gb = 0.0;
  c_bench->add_option("--pixels", pixel_list, "pixel counts")->delimiter(',');
  c_bench->add_option("--reps", reps, "repetitions per solve (median reported)");
  c_bench->add_option("--budget", budget_gb, "memory budget in GB for extrapolation");

  CLI::App* c_sg = app.add_subcommand("sweep-gamma", "dark-count probability versus gamma");
  std::vector<double> gammas{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1};
  c_sg->add_option("--gammas", gammas, "gamma values")->delimiter(',');

  CLI::App* c_sl = app.add_subcommand("sweep-lambda", "mean fidelity versus lambda");
  std::vector<double> lambdas{0.001, 0.005, 0.02, 0.05, 0.1};
  std::vector<double> sweep_means{5.0, 10.0};
  c_sl->add_option("--lambdas", lambdas, "lambda values")->delimiter(',');
  c_sl->add_option("--means", sweep_means, "input mean photon numbers")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    io::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = io::config_from_json(io::read_json(config_path));
    if (seed_opt->count()) {
      cfg.seed = seed;
      cfg.seed_set = true;
    }
    if (gamma_opt->count()) cfg.gamma = gamma;
    if (lambda_opt->count()) cfg.lambda = lambda;
    if (pulses_opt->count()) cfg.pulses = pulses;
    if (threads_opt->count()) cfg.threads = threads;
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (sim_pixels > 0) {
      cfg.n_pixels = sim_pixels;
      cfg.has_detector = false;
    }
    cfg.validate();
    std::string hash = io::config_hash_hex(cfg.to_json());

    if (c_sim->parsed()) write_simulation(cfg, hash);
    if (c_tomo->parsed()) run_tomo(cfg, method, hash);
    if (c_rec->parsed()) run_reconstruct(cfg, input_kind, input_mean, repeat, hash);
    if (c_bench->parsed()) run_bench(cfg, pixel_list, reps, budget_gb, hash);
    if (c_sg->parsed()) run_sweep_gamma(cfg, gammas, hash);
    if (c_sl->parsed()) run_sweep_lambda(cfg, lambdas, sweep_means, hash);
  } catch (const pnrtomo::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
