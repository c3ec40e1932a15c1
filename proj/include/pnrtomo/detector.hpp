#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include "pnrtomo/common.hpp"
#include "pnrtomo/rng.hpp"

namespace pnrtomo::detector {

// ground truth for one multiplexed click detector: light couples in with
// efficiency c, splits over N pixels with weights w, and pixel j fires on an
// arriving photon with probability eta_j
struct DetectorConfig {
  int n_pixels = 0;
  double coupling_efficiency = 0.0;
  Vector splitting_weights;
  Vector intrinsic_efficiencies;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_pixels < 1) throw std::invalid_argument("DetectorConfig: n_pixels must be >= 1");
    if (coupling_efficiency < 0.0 || coupling_efficiency > 1.0)
      throw std::invalid_argument("DetectorConfig: coupling_efficiency outside [0,1]");
    if (splitting_weights.size() != n_pixels || intrinsic_efficiencies.size() != n_pixels)
      throw std::invalid_argument("DetectorConfig: vector sizes do not match n_pixels");
    if (std::abs(splitting_weights.sum() - 1.0) > 1e-12)
      throw std::invalid_argument("DetectorConfig: splitting_weights must sum to 1");
    for (int j = 0; j < n_pixels; ++j) {
      if (splitting_weights[j] < 0.0)
        throw std::invalid_argument("DetectorConfig: negative splitting weight");
      if (intrinsic_efficiencies[j] < 0.0 || intrinsic_efficiencies[j] > 1.0)
        throw std::invalid_argument("DetectorConfig: efficiency outside [0,1]");
    }
  }

  // per-pixel registration probability for a single photon
  Vector rates() const {
    return coupling_efficiency *
           (splitting_weights.array() * intrinsic_efficiencies.array()).matrix();
  }
};

// pulse-to-pulse energy jitter of the probe laser, as a relative sigma on
// the mean photon number
struct NoiseModel {
  double sigma_rel = 0.0;

  void validate() const {
    if (sigma_rel < 0.0) throw std::invalid_argument("NoiseModel: sigma_rel must be >= 0");
  }
};

// normalized histogram over click counts 0..N
struct ClickStatistics {
  Vector probs;
  long n_samples = 0;

  void validate() const {
    if (probs.size() < 1) throw std::invalid_argument("ClickStatistics: empty");
    if (std::abs(probs.sum() - 1.0) > 1e-12)
      throw std::invalid_argument("ClickStatistics: probabilities must sum to 1");
    if (probs.minCoeff() < 0.0)
      throw std::invalid_argument("ClickStatistics: negative probability");
  }
};

// draw a detector with c = 0.99, weights (1/N)(1 + eps), eps ~ N(0, 0.02),
// clamped nonnegative and renormalized, and efficiencies uniform on
// [0.90, 0.95]; fully determined by the seed
inline DetectorConfig sample_detector(int n_pixels, std::uint64_t seed) {
  if (n_pixels < 1) throw std::invalid_argument("sample_detector: n_pixels must be >= 1");
  rng::Key key{seed};
  rng::Stream wstream = key.stream(0);
  rng::Stream estream = key.stream(1);

  DetectorConfig cfg;
  cfg.n_pixels = n_pixels;
  cfg.coupling_efficiency = 0.99;
  cfg.seed = seed;
  cfg.splitting_weights.resize(n_pixels);
  cfg.intrinsic_efficiencies.resize(n_pixels);
  for (int j = 0; j < n_pixels; ++j) {
    double w = (1.0 / n_pixels) * (1.0 + wstream.normal(0.0, 0.02));
    cfg.splitting_weights[j] = w > 0.0 ? w : 0.0;
  }
  double total = cfg.splitting_weights.sum();
  if (total <= 0.0) throw NumericalError("sample_detector: all splitting weights clamped to 0");
  cfg.splitting_weights /= total;
  for (int j = 0; j < n_pixels; ++j)
    cfg.intrinsic_efficiencies[j] = 0.90 + 0.05 * estream.uniform();
  cfg.validate();
  return cfg;
}

namespace detail {

// Walker alias table over {0..n-1}; one uniform per draw
class AliasTable {
 public:
  explicit AliasTable(const std::vector<double>& p) {
    const int n = static_cast<int>(p.size());
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    std::vector<int> small, large;
    for (int i = 0; i < n; ++i) {
      scaled[i] = p[i] * n;
      (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
      int s = small.back();
      small.pop_back();
      int l = large.back();
      large.pop_back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] = (scaled[l] + scaled[s]) - 1.0;
      (scaled[l] < 1.0 ? small : large).push_back(l);
    }
    for (int i : large) prob_[i] = 1.0;
    for (int i : small) prob_[i] = 1.0;  // leftover from rounding
    n_ = n;
  }

  int sample(rng::Stream& g) const {
    double u = g.uniform() * n_;
    int i = static_cast<int>(u);
    return (u - i) < prob_[i] ? i : alias_[i];
  }

 private:
  std::vector<double> prob_;
  std::vector<int> alias_;
  int n_ = 0;
};

}  // namespace detail

// samples click counts for pulses of known photon number; reusable across
// pulses, one instance per thread
class PulseSampler {
 public:
  explicit PulseSampler(const DetectorConfig& cfg)
      : table_(make_outcome_probs(cfg)),
        stamp_(static_cast<size_t>(cfg.n_pixels) + 1, 0),
        epoch_(0) {}

  // each photon lands on pixel j with probability r_j = c w_j eta_j or is
  // lost with probability 1 - sum r_j; the click count is the number of
  // distinct pixels hit at least once
  int simulate(long photon_number, rng::Stream& g) {
    ++epoch_;
    int clicks = 0;
    for (long i = 0; i < photon_number; ++i) {
      int outcome = table_.sample(g);
      if (outcome != 0 && stamp_[static_cast<size_t>(outcome)] != epoch_) {
        stamp_[static_cast<size_t>(outcome)] = epoch_;
        ++clicks;
      }
    }
    return clicks;
  }

 private:
  static std::vector<double> make_outcome_probs(const DetectorConfig& cfg) {
    cfg.validate();
    Vector r = cfg.rates();
    std::vector<double> p(static_cast<size_t>(cfg.n_pixels) + 1);
    p[0] = 1.0 - r.sum();
    for (int j = 0; j < cfg.n_pixels; ++j) p[static_cast<size_t>(j) + 1] = r[j];
    return p;
  }

  detail::AliasTable table_;
  std::vector<std::uint64_t> stamp_;
  std::uint64_t epoch_;
};

inline int simulate_pulse(const DetectorConfig& cfg, long photon_number, rng::Stream& g) {
  if (photon_number < 0) throw std::invalid_argument("simulate_pulse: negative photon number");
  PulseSampler sampler(cfg);
  return sampler.simulate(photon_number, g);
}

namespace detail {

// run n_pulses pulses, each on its own stream keyed by pulse index, so the
// histogram is identical for any worker count
template <typename PhotonDraw>
ClickStatistics simulate_batch(const DetectorConfig& cfg, long n_pulses, rng::Key key,
                               PhotonDraw&& draw, int threads) {
  if (n_pulses < 1) throw std::invalid_argument("simulate: n_pulses must be >= 1");
  if (threads < 1) threads = 1;
  const int nbins = cfg.n_pixels + 1;

  auto run_range = [&](long begin, long end, std::vector<long>& hist) {
    PulseSampler sampler(cfg);
    for (long i = begin; i < end; ++i) {
      rng::Stream g = key.stream(static_cast<std::uint64_t>(i));
      long k = draw(g);
      int clicks = sampler.simulate(k, g);
      ++hist[static_cast<size_t>(clicks)];
    }
  };

  std::vector<long> hist(static_cast<size_t>(nbins), 0);
  if (threads == 1) {
    run_range(0, n_pulses, hist);
  } else {
    std::vector<std::vector<long>> partial(static_cast<size_t>(threads),
                                           std::vector<long>(static_cast<size_t>(nbins), 0));
    std::vector<std::thread> pool;
    long chunk = (n_pulses + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      long begin = t * chunk;
      long end = std::min(n_pulses, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run_range, begin, end, std::ref(partial[static_cast<size_t>(t)]));
    }
    for (auto& th : pool) th.join();
    for (const auto& part : partial)
      for (int b = 0; b < nbins; ++b) hist[static_cast<size_t>(b)] += part[static_cast<size_t>(b)];
  }

  ClickStatistics stats;
  stats.n_samples = n_pulses;
  stats.probs.resize(nbins);
  for (int b = 0; b < nbins; ++b)
    stats.probs[b] = static_cast<double>(hist[static_cast<size_t>(b)]) / n_pulses;
  return stats;
}

}  // namespace detail

// Monte Carlo click statistics for pulses with a fixed photon number
inline ClickStatistics simulate_fock(const DetectorConfig& cfg, long photon_number,
                                     long n_pulses, rng::Key key, int threads = 1) {
  if (photon_number < 0) throw std::invalid_argument("simulate_fock: negative photon number");
  return detail::simulate_batch(
      cfg, n_pulses, key, [photon_number](rng::Stream&) { return photon_number; }, threads);
}

// coherent probe: per pulse the energy jitters as N(alpha_sq, sigma_rel *
// alpha_sq) clamped at 0, the photon number is Poisson with that mean
inline ClickStatistics simulate_coherent_probe(const DetectorConfig& cfg, double alpha_sq,
                                               const NoiseModel& noise, long n_pulses,
                                               rng::Key key, int threads = 1) {
  if (alpha_sq < 0.0) throw std::invalid_argument("simulate_coherent_probe: negative alpha_sq");
  noise.validate();
  const double sigma = noise.sigma_rel * alpha_sq;
  return detail::simulate_batch(
      cfg, n_pulses, key,
      [alpha_sq, sigma](rng::Stream& g) {
        double beta_sq = alpha_sq;
        if (sigma > 0.0) beta_sq = std::max(0.0, g.normal(alpha_sq, sigma));
        return g.poisson(beta_sq);
      },
      threads);
}

// thermal source: photon number is geometric (Bose-Einstein) with the given
// mean; no technical noise on top
inline ClickStatistics simulate_thermal(const DetectorConfig& cfg, double mean_n, long n_pulses,
                                        rng::Key key, int threads = 1) {
  if (mean_n < 0.0) throw std::invalid_argument("simulate_thermal: negative mean");
  return detail::simulate_batch(
      cfg, n_pulses, key, [mean_n](rng::Stream& g) { return g.geometric_from_mean(mean_n); },
      threads);
}

namespace detail {

// click-count law for equal per-pixel rates, any N: feed photons in one at
// a time; each is lost or absorbed by an already-clicked pixel (r0 + c r)
// or clicks a fresh one ((N - c + 1) r).  All terms nonnegative, so this
// stays stable where the inclusion-exclusion sum would cancel losing digits
inline Vector symmetric_click_recursion(int n_pixels, double r0, double r_pix,
                                        long photon_number) {
  Vector pmf = Vector::Zero(n_pixels + 1);
  pmf[0] = 1.0;
  Vector next(n_pixels + 1);
  for (long k = 0; k < photon_number; ++k) {
    for (int c = 0; c <= n_pixels; ++c) {
      next[c] = pmf[c] * (r0 + c * r_pix);
      if (c > 0) next[c] += pmf[c - 1] * (n_pixels - c + 1) * r_pix;
    }
    pmf = next;
  }
  return pmf;
}

}  // namespace detail

// exact click distribution for a k-photon pulse by inclusion-exclusion over
// click sets: P(exact set S) = sum over subsets T of S of
// (-1)^(|S|-|T|) (r0 + sum_{j in T} r_j)^k.  Cost grows as 3^N, so unequal
// rates are limited to N <= 12; equal rates take a stable O(kN) recursion
inline Vector exact_click_distribution(const DetectorConfig& cfg, long photon_number) {
  cfg.validate();
  if (photon_number < 0)
    throw std::invalid_argument("exact_click_distribution: negative photon number");

  const int N = cfg.n_pixels;
  Vector out = Vector::Zero(N + 1);
  if (photon_number == 0) {
    out[0] = 1.0;
    return out;
  }

  Vector r = cfg.rates();
  if ((r.array() - r[0]).abs().maxCoeff() <= 1e-15) {
    out = detail::symmetric_click_recursion(N, 1.0 - r.sum(), r[0], photon_number);
    if (std::abs(out.sum() - 1.0) > 1e-10)
      throw NumericalError("exact_click_distribution: probabilities do not sum to 1");
    return out;
  }
  if (cfg.n_pixels > 12)
    throw std::invalid_argument(
        "exact_click_distribution: unequal rates are supported only for N <= 12");
  const double r0 = 1.0 - r.sum();
  const unsigned full = 1u << N;
  std::vector<double> subsum(full, 0.0);
  for (unsigned m = 1; m < full; ++m) {
    unsigned low = m & (~m + 1u);
    subsum[m] = subsum[m ^ low] + r[std::countr_zero(low)];
  }

  const double k = static_cast<double>(photon_number);
  for (unsigned s = 0; s < full; ++s) {
    const int sbits = std::popcount(s);
    double acc = 0.0;
    unsigned t = s;
    for (;;) {
      double term = std::pow(r0 + subsum[t], k);
      acc += ((sbits - std::popcount(t)) & 1) ? -term : term;
      if (t == 0) break;
      t = (t - 1) & s;
    }
    out[sbits] += acc;
  }

  if (std::abs(out.sum() - 1.0) > 1e-10)
    throw NumericalError("exact_click_distribution: probabilities do not sum to 1");
  for (int n = 0; n <= N; ++n) {
    if (out[n] < 0.0) {
      if (out[n] < -1e-10)
        throw NumericalError("exact_click_distribution: negative probability");
      out[n] = 0.0;
    }
  }
  return out;
}

// ground-truth POVM: row k is the exact click distribution for k photons
inline Matrix exact_povm(const DetectorConfig& cfg, int truncation) {
  if (truncation < 0) throw std::invalid_argument("exact_povm: negative truncation");
  Matrix povm(truncation + 1, cfg.n_pixels + 1);
  for (int k = 0; k <= truncation; ++k)
    povm.row(k) = exact_click_distribution(cfg, k).transpose();
  return povm;
}

namespace detail {

// distribution of the number of successes of independent Bernoulli trials
inline Vector poisson_binomial(const Vector& q) {
  const int n = static_cast<int>(q.size());
  Vector pmf = Vector::Zero(n + 1);
  pmf[0] = 1.0;
  for (int j = 0; j < n; ++j) {
    for (int b = j + 1; b >= 1; --b) pmf[b] = pmf[b] * (1.0 - q[j]) + pmf[b - 1] * q[j];
    pmf[0] *= 1.0 - q[j];
  }
  return pmf;
}

}  // namespace detail

// exact click distribution for a coherent input of the given mean photon
// number: pixel arrivals are independent Poisson thinnings, so pixel j
// clicks independently with probability 1 - exp(-mean r_j)
inline Vector coherent_click_distribution(const DetectorConfig& cfg, double mean) {
  cfg.validate();
  if (mean < 0.0) throw std::invalid_argument("coherent_click_distribution: negative mean");
  Vector r = cfg.rates();
  Vector q = (1.0 - (-mean * r.array()).exp()).matrix();
  return detail::poisson_binomial(q);
}

// exact click distribution for a thermal input: a thermal state is an
// exponential mixture of coherent-like intensities, so integrate the
// coherent click law against exp(-x) with panelwise Gauss-Legendre
inline Vector thermal_click_distribution(const DetectorConfig& cfg, double mean) {
  cfg.validate();
  if (mean < 0.0) throw std::invalid_argument("thermal_click_distribution: negative mean");
  const int N = cfg.n_pixels;
  Vector out = Vector::Zero(N + 1);
  if (mean == 0.0) {
    out[0] = 1.0;
    return out;
  }

  static const double nodes[4] = {0.1834346424956498, 0.5255324099163290,
                                  0.7966664774136267, 0.9602898564975363};
  static const double weights[4] = {0.3626837833783620, 0.3137066458778873,
                                    0.2223810344533745, 0.1012285362903763};
  const Vector r = cfg.rates();
  const int panels = 64;
  const double upper = 50.0;  // exp(-50) ~ 2e-22, far below target accuracy
  const double h = upper / panels;
  for (int p = 0; p < panels; ++p) {
    const double mid = (p + 0.5) * h;
    for (int i = 0; i < 4; ++i) {
      for (double sgn : {-1.0, 1.0}) {
        const double x = mid + sgn * 0.5 * h * nodes[i];
        Vector q = (1.0 - (-mean * x * r.array()).exp()).matrix();
        out += (0.5 * h * weights[i] * std::exp(-x)) * detail::poisson_binomial(q);
      }
    }
  }
  out /= out.sum();
  return out;
}

}  // namespace pnrtomo::detector
