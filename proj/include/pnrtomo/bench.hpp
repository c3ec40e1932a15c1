#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

#include "pnrtomo/common.hpp"
#include "pnrtomo/detector.hpp"
#include "pnrtomo/probes.hpp"
#include "pnrtomo/tomography.hpp"

namespace pnrtomo::bench {

class WallTimer {
 public:
  WallTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// process high-water mark from the kernel, for logging next to the solver's
// own accounting; 0 when the proc file is unavailable
inline std::int64_t rss_high_water_bytes() {
  std::ifstream in("/proc/self/status");
  std::string word;
  while (in >> word) {
    if (word == "VmHWM:") {
      std::int64_t kb = 0;
      in >> kb;
      return kb * 1024;
    }
  }
  return 0;
}

struct ScalingRecord {
  int n_pixels = 0;
  std::string method;       // "sdt" or "mdt"
  double solve_time = 0.0;  // seconds, median across repetitions
  std::int64_t peak_memory = 0;
  double masked_fraction = 0.0;
  int truncation = 0;
  bool ok = true;  // false when the solve ran out of memory
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

}  // namespace detail

// one tomography problem per pixel count: sample a detector, build the
// default probe plan, simulate the measurement matrix once, then time SDT
// and MDT solves across repetitions and keep the medians
inline std::vector<ScalingRecord> run_scaling(const std::vector<int>& pixel_list, int repetitions,
                                              const qp::QpOptions& opts, std::uint64_t seed,
                                              long pulses_per_probe = 100000) {
  if (repetitions < 1) throw std::invalid_argument("run_scaling: repetitions must be >= 1");
  for (int n : pixel_list)
    if (n < 2) throw std::invalid_argument("run_scaling: pixel counts must be >= 2");

  std::vector<ScalingRecord> records;
  for (int n : pixel_list) {
    rng::Key key{seed};
    rng::Key det_key = key.split(static_cast<std::uint64_t>(n));
    detector::DetectorConfig cfg = detector::sample_detector(n, det_key.value);
    probes::ProbePlan plan = probes::default_plan(n, 0.9, pulses_per_probe);
    Matrix F = probes::build_probe_matrix(plan);

    const int d = static_cast<int>(plan.alpha_sq_values.size());
    Matrix P(d, n + 1);
    for (int i = 0; i < d; ++i) {
      detector::ClickStatistics st = detector::simulate_coherent_probe(
          cfg, plan.alpha_sq_values[static_cast<size_t>(i)], {}, plan.pulses_per_probe,
          det_key.split(1000 + static_cast<std::uint64_t>(i)));
      P.row(i) = st.probs.transpose();
    }

    ScalingRecord sdt{n, "sdt", 0.0, 0, 0.0, plan.truncation, true};
    ScalingRecord mdt{n, "mdt", 0.0, 0, 0.0, plan.truncation, true};
    std::vector<double> st_time, st_mem, mt_time, mt_mem;
    for (int rep = 0; rep < repetitions; ++rep) {
      try {
        tomo::QpSolution a = tomo::solve_sdt(P, F, 1e-4, opts);
        st_time.push_back(a.wall_time);
        st_mem.push_back(static_cast<double>(a.peak_memory));
      } catch (const std::bad_alloc&) {
        sdt.ok = false;
      }
      try {
        tomo::QpSolution b = tomo::solve_mdt(P, F, 1e-4, opts);
        mt_time.push_back(b.wall_time);
        mt_mem.push_back(static_cast<double>(b.peak_memory));
        mdt.masked_fraction = b.masked_fraction;
      } catch (const std::bad_alloc&) {
        mdt.ok = false;
      }
    }
    if (!st_time.empty()) {
      sdt.solve_time = detail::median(st_time);
      sdt.peak_memory = static_cast<std::int64_t>(detail::median(st_mem));
    }
    if (!mt_time.empty()) {
      mdt.solve_time = detail::median(mt_time);
      mdt.peak_memory = static_cast<std::int64_t>(detail::median(mt_mem));
    }
    records.push_back(sdt);
    records.push_back(mdt);
  }
  return records;
}

struct FitResult {
  double a = 0.0;
  double b = 0.0;
  double residual = 0.0;  // weighted RMS
};

enum class WeightScheme { relative, equal };

// weighted least squares for y = a n^b, Gauss-Newton refinement seeded by
// ordinary least squares on the log-log form; relative weighting 1/y makes
// every decade contribute equally
inline FitResult fit_power_law(const std::vector<double>& n, const std::vector<double>& y,
                               WeightScheme scheme = WeightScheme::relative) {
  if (n.size() != y.size()) throw std::invalid_argument("fit_power_law: length mismatch");
  if (n.size() < 3) throw std::invalid_argument("fit_power_law: underdetermined, need >= 3 points");
  const size_t m = n.size();
  for (size_t i = 0; i < m; ++i)
    if (n[i] <= 0.0 || y[i] <= 0.0)
      throw std::invalid_argument("fit_power_law: points must be positive");

  // log-log ordinary least squares seed
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < m; ++i) {
    double lx = std::log(n[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double dm = static_cast<double>(m);
  double b = (dm * sxy - sx * sy) / (dm * sxx - sx * sx);
  double a = std::exp((sy - b * sx) / dm);

  auto weight = [&](size_t i) { return scheme == WeightScheme::relative ? 1.0 / y[i] : 1.0; };
  auto chi2 = [&](double pa, double pb) {
    double s = 0.0;
    for (size_t i = 0; i < m; ++i) {
      double r = (pa * std::pow(n[i], pb) - y[i]) * weight(i);
      s += r * r;
    }
    return s;
  };

  double cur = chi2(a, b);
  for (int it = 0; it < 200; ++it) {
    // normal equations of the 2-parameter Jacobian
    double j11 = 0, j12 = 0, j22 = 0, g1 = 0, g2 = 0;
    for (size_t i = 0; i < m; ++i) {
      double w = weight(i);
      double model = a * std::pow(n[i], b);
      double r = (model - y[i]) * w;
      double da = std::pow(n[i], b) * w;
      double db = model * std::log(n[i]) * w;
      j11 += da * da;
      j12 += da * db;
      j22 += db * db;
      g1 += da * r;
      g2 += db * r;
    }
    double det = j11 * j22 - j12 * j12;
    if (std::abs(det) < 1e-300) break;
    double step_a = (-g1 * j22 + g2 * j12) / det;
    double step_b = (-g2 * j11 + g1 * j12) / det;
    double scale = 1.0;
    double next = cur;
    for (int back = 0; back < 40; ++back) {
      double ta = a + scale * step_a, tb = b + scale * step_b;
      if (ta > 0.0) {
        next = chi2(ta, tb);
        if (next <= cur) {
          a = ta;
          b = tb;
          break;
        }
      }
      scale *= 0.5;
    }
    if (cur - next <= 1e-30 + 1e-16 * cur) {
      cur = std::min(cur, next);
      break;
    }
    cur = next;
  }

  FitResult fit;
  fit.a = a;
  fit.b = b;
  fit.residual = std::sqrt(chi2(a, b) / dm);
  return fit;
}

// largest integer N with a N^b within the budget; 0 when even N=1 is not
inline int extrapolate(const FitResult& fit, double budget) {
  if (fit.b <= 0.0) throw std::invalid_argument("extrapolate: exponent must be > 0");
  if (fit.a <= 0.0) throw std::invalid_argument("extrapolate: prefactor must be > 0");
  if (budget < fit.a) return 0;
  int n = static_cast<int>(std::floor(std::pow(budget / fit.a, 1.0 / fit.b)));
  while (n > 1 && fit.a * std::pow(n, fit.b) > budget) --n;
  while (fit.a * std::pow(n + 1, fit.b) <= budget) ++n;
  return n;
}

}  // namespace pnrtomo::bench
