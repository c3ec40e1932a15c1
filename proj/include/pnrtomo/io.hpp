#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "pnrtomo/common.hpp"
#include "pnrtomo/detector.hpp"
#include "pnrtomo/metrics.hpp"
#include "pnrtomo/probes.hpp"

namespace pnrtomo::io {

using nlohmann::json;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Csv {
  std::vector<std::string> header;
  Matrix values;
};

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Matrix& values) {
  if (header.size() != static_cast<size_t>(values.cols()))
    throw std::invalid_argument("write_csv: header width mismatch for " + path);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c)
      out << (c ? "," : "") << format_double(values(r, c));
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Csv read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw std::runtime_error("empty or headerless CSV: " + path);
  Csv csv;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) csv.header.push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      // strtod instead of stod: subnormal values underflow legitimately
      const char* begin = cell.c_str();
      char* end = nullptr;
      errno = 0;
      double v = std::strtod(begin, &end);
      bool overflow = errno == ERANGE && std::abs(v) == HUGE_VAL;
      if (cell.empty() || end != begin + cell.size() || overflow)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad number '" + cell +
                                 "'");
      row.push_back(v);
    }
    if (row.size() != csv.header.size())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(csv.header.size()) + " columns, got " +
                               std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("CSV has no data rows: " + path);
  csv.values.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(csv.header.size()));
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c)
      csv.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return csv;
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return j;
}

inline std::string config_hash_hex(const json& j) { return hex64(fnv1a64(j.dump())); }

// every CSV gets a sibling <file>.meta.json tying it to the run; contents
// are stable across reruns so outputs stay byte-identical
inline void write_sidecar(const std::string& csv_path, const std::string& config_hash) {
  json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["config_hash"] = config_hash;
  write_json(csv_path + ".meta.json", j);
}

inline json detector_to_json(const detector::DetectorConfig& cfg) {
  json j;
  j["n_pixels"] = cfg.n_pixels;
  j["coupling_efficiency"] = cfg.coupling_efficiency;
  j["splitting_weights"] = std::vector<double>(cfg.splitting_weights.begin(),
                                               cfg.splitting_weights.end());
  j["intrinsic_efficiencies"] = std::vector<double>(cfg.intrinsic_efficiencies.begin(),
                                                    cfg.intrinsic_efficiencies.end());
  j["seed"] = cfg.seed;
  return j;
}

inline detector::DetectorConfig detector_from_json(const json& j) {
  detector::DetectorConfig cfg;
  cfg.n_pixels = j.at("n_pixels").get<int>();
  cfg.coupling_efficiency = j.at("coupling_efficiency").get<double>();
  auto w = j.at("splitting_weights").get<std::vector<double>>();
  auto e = j.at("intrinsic_efficiencies").get<std::vector<double>>();
  cfg.splitting_weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  cfg.intrinsic_efficiencies =
      Eigen::Map<const Vector>(e.data(), static_cast<Eigen::Index>(e.size()));
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

inline json metrics_to_json(const metrics::MetricReport& r) {
  json j;
  j["fidelity"] = r.fidelity;
  j["tvd"] = r.tvd;
  j["g2"] = r.g2;
  j["g3"] = r.g3;
  j["mean"] = r.mean;
  return j;
}

// everything a run needs, loadable from JSON with flag overrides on top
struct ExperimentConfig {
  int n_pixels = 10;
  bool has_detector = false;
  detector::DetectorConfig detector_cfg;  // used when has_detector
  std::uint64_t detector_seed = 0;
  bool detector_seed_set = false;

  double alpha_step = 1.0;
  double alpha_max = 0.0;  // 0 means derive from n_pixels
  int truncation = 0;      // 0 means derive from alpha_max
  double probe_threshold = 0.9;
  double amplitude_noise = 0.0;  // relative sigma on probe energy

  double gamma = 1e-4;
  double lambda = 0.02;
  long pulses = 100000;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string output_dir = ".";
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  void validate() const {
    if (!seed_set) throw std::invalid_argument("config: seed is mandatory");
    if (n_pixels < 1) throw std::invalid_argument("config: n_pixels must be >= 1");
    if (gamma < 0.0) throw std::invalid_argument("config: gamma must be >= 0");
    if (lambda < 0.0) throw std::invalid_argument("config: lambda must be >= 0");
    if (pulses < 1) throw std::invalid_argument("config: pulses must be >= 1");
    if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
    if (alpha_step <= 0.0) throw std::invalid_argument("config: alpha_step must be > 0");
    if (amplitude_noise < 0.0) throw std::invalid_argument("config: amplitude_noise must be >= 0");
  }

  detector::DetectorConfig resolve_detector() const {
    if (has_detector) return detector_cfg;
    std::uint64_t s = detector_seed_set ? detector_seed : rng::Key{seed}.split(0xD37).value;
    return detector::sample_detector(n_pixels, s);
  }

  probes::ProbePlan resolve_plan() const {
    double amax = alpha_max > 0.0
                      ? alpha_max
                      : static_cast<double>(probes::choose_alpha_max(n_pixels, probe_threshold));
    return probes::grid_plan(alpha_step, amax, truncation, pulses);
  }

  json to_json() const {
    json j;
    if (has_detector) {
      j["detector"] = detector_to_json(detector_cfg);
    } else {
      j["detector"] = {{"n_pixels", n_pixels}};
      if (detector_seed_set) j["detector"]["seed"] = detector_seed;
    }
    json probe;
    probe["alpha_step"] = alpha_step;
    if (alpha_max > 0.0) probe["alpha_max"] = alpha_max;
    if (truncation > 0) probe["truncation"] = truncation;
    probe["threshold"] = probe_threshold;
    if (amplitude_noise > 0.0) probe["amplitude_noise"] = amplitude_noise;
    j["probe"] = probe;
    j["gamma"] = gamma;
    j["lambda"] = lambda;
    j["pulses"] = pulses;
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    j["threads"] = threads;
    return j;
  }
};

inline ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("detector")) {
    const json& d = j.at("detector");
    if (d.contains("splitting_weights")) {
      cfg.detector_cfg = detector_from_json(d);
      cfg.has_detector = true;
      cfg.n_pixels = cfg.detector_cfg.n_pixels;
    } else {
      if (d.contains("n_pixels")) cfg.n_pixels = d.at("n_pixels").get<int>();
      if (d.contains("seed")) {
        cfg.detector_seed = d.at("seed").get<std::uint64_t>();
        cfg.detector_seed_set = true;
      }
    }
  }
  if (j.contains("probe")) {
    const json& p = j.at("probe");
    if (p.contains("alpha_step")) cfg.alpha_step = p.at("alpha_step").get<double>();
    if (p.contains("alpha_max")) cfg.alpha_max = p.at("alpha_max").get<double>();
    if (p.contains("truncation")) cfg.truncation = p.at("truncation").get<int>();
    if (p.contains("threshold")) cfg.probe_threshold = p.at("threshold").get<double>();
    if (p.contains("amplitude_noise"))
      cfg.amplitude_noise = p.at("amplitude_noise").get<double>();
  }
  if (j.contains("gamma")) cfg.gamma = j.at("gamma").get<double>();
  if (j.contains("lambda")) cfg.lambda = j.at("lambda").get<double>();
  if (j.contains("pulses")) cfg.pulses = j.at("pulses").get<long>();
  if (j.contains("seed")) {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.seed_set = true;
  }
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
  return cfg;
}

}  // namespace pnrtomo::io
