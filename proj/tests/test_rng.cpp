#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pnrtomo/rng.hpp"

using namespace pnrtomo;

namespace {

// exact Poisson pmf in log space, the reference for the sampler tests
double poisson_pmf(double mean, long k) {
  return std::exp(k * std::log(mean) - mean - std::lgamma(static_cast<double>(k) + 1.0));
}

double histogram_tvd(const std::vector<long>& draws, double mean) {
  long maxk = 0;
  for (long d : draws) maxk = std::max(maxk, d);
  std::vector<double> hist(static_cast<size_t>(maxk) + 1, 0.0);
  for (long d : draws) hist[static_cast<size_t>(d)] += 1.0 / draws.size();
  double tvd = 0.0;
  double tail = 1.0;
  for (long k = 0; k <= maxk; ++k) {
    double p = poisson_pmf(mean, k);
    tvd += std::abs(hist[static_cast<size_t>(k)] - p);
    tail -= p;
  }
  return 0.5 * (tvd + std::max(tail, 0.0));
}

}  // namespace

TEST_CASE("streams are deterministic and distinct") {
  rng::Key key{12345};
  rng::Stream a = key.stream(7);
  rng::Stream b = key.stream(7);
  rng::Stream c = key.stream(8);
  bool same = true, diff = false;
  for (int i = 0; i < 100; ++i) {
    auto va = a.next_u64();
    same = same && (va == b.next_u64());
    diff = diff || (va != c.next_u64());
  }
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("key splits decorrelate") {
  rng::Key key{9};
  CHECK(key.split(1).value != key.split(2).value);
  CHECK(key.split(1).value == key.split(1).value);
  CHECK(key.split(1).split(3).value != key.split(3).split(1).value);
}

TEST_CASE("uniform stays inside the open unit interval") {
  rng::Stream s = rng::Key{4}.stream(0);
  double lo = 1.0, hi = 0.0, acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = s.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    acc += u;
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
  CHECK(std::abs(acc / n - 0.5) < 0.01);
}

TEST_CASE("normal moments") {
  rng::Stream s = rng::Key{5}.stream(0);
  const int n = 100000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = s.normal();
    acc += x;
    acc2 += x * x;
  }
  CHECK(std::abs(acc / n) < 0.02);
  CHECK(std::abs(acc2 / n - 1.0) < 0.03);
  rng::Stream t = rng::Key{5}.stream(1);
  double y = t.normal(10.0, 0.5);
  CHECK(std::abs(y - 10.0) < 5.0);
}

TEST_CASE("poisson sampler matches the pmf in both regimes") {
  // the implementation switches algorithms around mean 30; check both sides
  for (double mean : {4.2, 42.0}) {
    rng::Stream s = rng::Key{77}.stream(static_cast<std::uint64_t>(mean));
    std::vector<long> draws(1000000);
    for (long& d : draws) d = s.poisson(mean);
    CHECK(histogram_tvd(draws, mean) < 5e-3);
  }
}

TEST_CASE("poisson edge cases") {
  rng::Stream s = rng::Key{3}.stream(0);
  CHECK(s.poisson(0.0) == 0);
  long total = 0;
  for (int i = 0; i < 1000; ++i) total += s.poisson(1e-9);
  CHECK(total <= 1);
}

TEST_CASE("geometric sampler matches the Bose-Einstein law") {
  const double mean = 1.5;
  rng::Stream s = rng::Key{8}.stream(0);
  const int n = 1000000;
  std::vector<double> hist;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    long d = s.geometric_from_mean(mean);
    acc += static_cast<double>(d);
    if (static_cast<size_t>(d) >= hist.size()) hist.resize(static_cast<size_t>(d) + 1, 0.0);
    hist[static_cast<size_t>(d)] += 1.0 / n;
  }
  CHECK(std::abs(acc / n - mean) < 0.02);
  // pmf of the thermal photon-number law: mean^k / (1+mean)^(k+1)
  double tvd = 0.0, tail = 1.0;
  for (size_t k = 0; k < hist.size(); ++k) {
    double p = std::pow(mean, static_cast<double>(k)) /
               std::pow(1.0 + mean, static_cast<double>(k) + 1.0);
    tvd += std::abs(hist[k] - p);
    tail -= p;
  }
  CHECK(0.5 * (tvd + std::max(tail, 0.0)) < 5e-3);
}
