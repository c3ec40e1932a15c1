#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "pnrtomo/io.hpp"
#include "pnrtomo/probes.hpp"

using namespace pnrtomo;
namespace fs = std::filesystem;

namespace {

fs::path case_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "pnrtomo_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// run the installed binary, capture combined output, return the exit code
int run_cli(const std::string& args, const fs::path& dir, std::string* output = nullptr) {
  fs::path log = dir / "cli_log.txt";
  std::string cmd = std::string("\"") + PNRTOMO_CLI_PATH + "\" " + args + " > \"" +
                    log.string() + "\" 2>&1";
  int raw = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    std::ostringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("simulate writes the data files and reruns byte-identically") {
  fs::path dir = case_dir("simulate");
  REQUIRE(run_cli("simulate --pixels 6 --seed 9 --pulses 20000 --output " + dir.string(),
                  dir) == 0);
  for (const char* name : {"detector.json", "probes.csv", "measurements.csv",
                           "probes.csv.meta.json", "measurements.csv.meta.json"})
    CHECK(fs::exists(dir / name));

  io::Csv meas = io::read_csv((dir / "measurements.csv").string());
  CHECK(meas.header.front() == "alpha_sq");
  CHECK(meas.header.back() == "p6");
  CHECK(meas.values.rows() == probes::choose_alpha_max(6));
  for (Eigen::Index r = 0; r < meas.values.rows(); ++r)
    CHECK_THAT(meas.values.row(r).tail(7).sum(), Catch::Matchers::WithinAbs(1.0, 1e-12));

  io::Csv prob = io::read_csv((dir / "probes.csv").string());
  CHECK(prob.values.rows() == meas.values.rows());
  for (Eigen::Index r = 0; r < prob.values.rows(); ++r) {
    double s = prob.values.row(r).tail(prob.values.cols() - 1).sum();
    CHECK(s <= 1.0 + 1e-12);
    CHECK(s >= 1.0 - 1e-4);
  }

  std::string first_meas = slurp(dir / "measurements.csv");
  std::string first_det = slurp(dir / "detector.json");
  REQUIRE(run_cli("simulate --pixels 6 --seed 9 --pulses 20000 --output " + dir.string(),
                  dir) == 0);
  CHECK(slurp(dir / "measurements.csv") == first_meas);
  CHECK(slurp(dir / "detector.json") == first_det);
}

TEST_CASE("tomography pipeline on a ten-pixel run") {
  fs::path dir = case_dir("pipeline");
  REQUIRE(run_cli("simulate --pixels 10 --seed 7 --output " + dir.string(), dir) == 0);
  std::string out;
  REQUIRE(run_cli("tomo --method both --seed 7 --output " + dir.string(), dir, &out) == 0);
  CHECK(out.find("relative error") != std::string::npos);

  io::json stats = io::read_json((dir / "solver_stats.json").string());
  CHECK(stats.at("sdt").at("converged").get<bool>());
  CHECK(stats.at("mdt").at("converged").get<bool>());
  CHECK(stats.at("mdt").at("masked_fraction").get<double>() > 0.1);
  CHECK(stats.at("gamma").get<double>() == 1e-4);
  CHECK(stats.at("mdt_vs_sdt_relative_error").get<double>() < 0.03);
  CHECK(stats.at("sdt").at("p_dark").get<double>() < 0.10);

  for (const char* name : {"povm_sdt.csv", "povm_mdt.csv"}) {
    io::Csv povm = io::read_csv((dir / name).string());
    CHECK(povm.header.front() == "photon_number");
    CHECK(povm.header.back() == "click10");
    for (Eigen::Index k = 0; k < povm.values.rows(); ++k)
      CHECK_THAT(povm.values.row(k).tail(11).sum(), Catch::Matchers::WithinAbs(1.0, 1e-8));
    CHECK(povm.values.rightCols(11).minCoeff() >= -1e-10);
  }

  // vacuum input reconstructs to the zero-photon state
  std::string rec_out;
  REQUIRE(run_cli("reconstruct --input coherent --mean 0 --lambda 0 --seed 7 --output " +
                      dir.string(),
                  dir, &rec_out) == 0);
  io::Csv pnd = io::read_csv((dir / "pnd.csv").string());
  CHECK(pnd.header == std::vector<std::string>{"k", "probability"});
  CHECK(pnd.values(0, 1) > 1.0 - 1e-6);
  io::json rec_metrics = io::read_json((dir / "metrics.json").string());
  CHECK(rec_metrics.at("fidelity").get<double>() > 1.0 - 1e-6);
  CHECK(rec_metrics.at("input").get<std::string>() == "coherent");

  // repeated reconstructions add spread columns
  REQUIRE(run_cli("reconstruct --input thermal --mean 2 --repeat 3 --pulses 20000 --seed 7 "
                  "--output " +
                      dir.string(),
                  dir) == 0);
  pnd = io::read_csv((dir / "pnd.csv").string());
  CHECK(pnd.header == std::vector<std::string>{"k", "probability", "stddev"});
  CHECK(pnd.values.col(2).maxCoeff() > 0.0);
  rec_metrics = io::read_json((dir / "metrics.json").string());
  CHECK(rec_metrics.contains("fidelity_stddev"));
  CHECK(rec_metrics.at("repeat").get<int>() == 3);

  // gamma sweep table
  REQUIRE(run_cli("sweep-gamma --gammas 1e-4 --seed 7 --output " + dir.string(), dir) == 0);
  io::Csv gsweep = io::read_csv((dir / "gamma_sweep.csv").string());
  CHECK(gsweep.header == std::vector<std::string>{"gamma", "p_dark", "objective"});
  CHECK(gsweep.values.rows() == 1);
  CHECK(gsweep.values(0, 0) == 1e-4);

  // lambda sweep table, one row per lambda
  REQUIRE(run_cli("sweep-lambda --lambdas 0.01,0.05 --means 2 --pulses 2000 --seed 7 "
                  "--output " +
                      dir.string(),
                  dir) == 0);
  io::Csv lsweep = io::read_csv((dir / "lambda_sweep.csv").string());
  CHECK(lsweep.header == std::vector<std::string>{"lambda", "mean_fidelity"});
  REQUIRE(lsweep.values.rows() == 2);
  CHECK(lsweep.values(0, 0) == 0.01);
  CHECK(lsweep.values(1, 0) == 0.05);
  CHECK(lsweep.values.col(1).minCoeff() > 0.0);
}

TEST_CASE("bench subcommand writes records and fits") {
  fs::path dir = case_dir("bench");
  std::string out;
  REQUIRE(run_cli("bench --pixels 4,5,6 --reps 1 --pulses 5000 --budget 1 --seed 2 --output " +
                      dir.string(),
                  dir, &out) == 0);
  io::Csv scaling = io::read_csv((dir / "scaling.csv").string());
  CHECK(scaling.values.rows() == 6);
  CHECK(scaling.values.col(2).minCoeff() > 0.0);

  io::json fits = io::read_json((dir / "fits.json").string());
  for (const char* key : {"time_sdt", "time_mdt", "mem_sdt", "mem_mdt"}) {
    REQUIRE(fits.contains(key));
    CHECK(fits.at(key).at("a").get<double>() > 0.0);
  }
  CHECK(fits.contains("max_pixels_mdt"));
  CHECK(out.find("max pixels") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1") {
  fs::path dir = case_dir("usage");
  std::string out;

  // no subcommand
  CHECK(run_cli("--seed 1", dir, &out) == 1);
  // unknown flag
  CHECK(run_cli("simulate --bogus 3 --seed 1", dir, &out) == 1);
  // seed is mandatory
  CHECK(run_cli("simulate --pixels 4 --output " + dir.string(), dir, &out) == 1);
  CHECK(out.find("seed") != std::string::npos);
  // reconstruct requires --mean
  CHECK(run_cli("reconstruct --input thermal --seed 1 --output " + dir.string(), dir, &out) == 1);
  // method whitelist
  CHECK(run_cli("tomo --method fancy --seed 1 --output " + dir.string(), dir, &out) == 1);
  // missing inputs
  CHECK(run_cli("tomo --seed 1 --output " + dir.string(), dir, &out) == 1);
  CHECK(out.find("measurements.csv") != std::string::npos);
  // detector present but no povm: points at the missing pipeline stage
  io::write_json((dir / "detector.json").string(),
                 io::detector_to_json(detector::sample_detector(2, 1)));
  CHECK(run_cli("reconstruct --input thermal --mean 1 --seed 1 --output " + dir.string(), dir,
                &out) == 1);
  CHECK(out.find("tomo step") != std::string::npos);
  // help is not an error
  CHECK(run_cli("--help", dir, &out) == 0);
  CHECK(out.find("simulate") != std::string::npos);
}

TEST_CASE("corrupt measurement data is a parse error") {
  fs::path dir = case_dir("corrupt");
  std::ofstream(dir / "measurements.csv") << "";
  std::ofstream(dir / "probes.csv") << "alpha_sq,f0\n1.0,0.5\n";
  std::string out;
  CHECK(run_cli("tomo --seed 1 --output " + dir.string(), dir, &out) == 1);
  CHECK(out.find("measurements.csv") != std::string::npos);
}

TEST_CASE("model mismatch surfaces as a numerical failure") {
  fs::path dir = case_dir("mismatch");
  detector::DetectorConfig det = detector::sample_detector(3, 4);
  io::write_json((dir / "detector.json").string(), io::detector_to_json(det));
  // a povm that never clicks cannot explain thermal light
  Matrix body(5, 5);
  for (int k = 0; k < 5; ++k) body.row(k) << k, 1.0, 0.0, 0.0, 0.0;
  io::write_csv((dir / "povm_mdt.csv").string(),
                {"photon_number", "click0", "click1", "click2", "click3"}, body);
  std::string out;
  CHECK(run_cli("reconstruct --input thermal --mean 1 --seed 5 --output " + dir.string(), dir,
                &out) == 2);
  CHECK(out.find("numerical failure") != std::string::npos);
  CHECK(out.find("outcome") != std::string::npos);
}

TEST_CASE("bright thermal light on a large multiplexed detector") {
  fs::path dir = case_dir("bright");
  detector::DetectorConfig det;
  det.n_pixels = 70;
  det.coupling_efficiency = 0.99;
  det.splitting_weights = Vector::Constant(70, 1.0 / 70.0);
  det.intrinsic_efficiencies = Vector::Constant(70, 0.92);
  det.validate();
  io::write_json((dir / "detector.json").string(), io::detector_to_json(det));

  // the POVM has to span the long thermal tail at mean 50, well past the
  // probe-grid default, so build it exactly instead of running tomo
  const int truncation = 500;
  Matrix povm = detector::exact_povm(det, truncation);
  Matrix body(truncation + 1, det.n_pixels + 2);
  std::vector<std::string> header{"photon_number"};
  for (int n = 0; n <= det.n_pixels; ++n) header.push_back("click" + std::to_string(n));
  for (int k = 0; k <= truncation; ++k) {
    body(k, 0) = k;
    body.row(k).tail(det.n_pixels + 1) = povm.row(k);
  }
  io::write_csv((dir / "povm_mdt.csv").string(), header, body);

  REQUIRE(run_cli("reconstruct --input thermal --mean 50 --pulses 1000000 --seed 5 --output " +
                      dir.string(),
                  dir) == 0);
  io::json metrics = io::read_json((dir / "metrics.json").string());
  CHECK(metrics.at("fidelity").get<double>() > 0.999);
  CHECK_THAT(metrics.at("g2").get<double>(), Catch::Matchers::WithinAbs(2.0, 0.15));
}
