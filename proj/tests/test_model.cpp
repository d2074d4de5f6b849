#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <stdexcept>
#include <vector>

#include "kavg/grid.hpp"
#include "kavg/model.hpp"
#include "kavg/parallel.hpp"
#include "kavg/random.hpp"

using namespace kavg;

TEST(EquilibriumVariance, KnownValues) {
  EXPECT_NEAR(equilibrium_variance(5, 0.1), 0.0125, 1e-15);
  EXPECT_DOUBLE_EQ(equilibrium_variance(2, 1.0), 2.0);
}

TEST(EquilibriumVariance, RejectsKBelowTwo) {
  EXPECT_THROW(equilibrium_variance(1, 0.1), DomainError);
  try {
    equilibrium_variance(1, 0.1);
  } catch (const DomainError& e) {
    EXPECT_STREQ(e.what(), "equilibrium undefined for K < 2");
  }
}

TEST(EquilibriumVariance, ExceedsSigmaSquaredAndDecreasesInK) {
  const double sigma = 0.3;
  double prev = std::numeric_limits<double>::infinity();
  for (int K = 2; K <= 64; ++K) {
    const double v = equilibrium_variance(K, sigma);
    EXPECT_GT(v, sigma * sigma);
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_NEAR(equilibrium_variance(64, sigma), sigma * sigma * 64.0 / 63.0, 1e-15);
}

TEST(ModelParams, Validation) {
  ModelParams p;
  EXPECT_NO_THROW(p.validate());
  p.K = 1;
  EXPECT_NO_THROW(p.validate());  // simulators accept K = 1
  for (auto bad : {ModelParams{0, 2, 0.1, 1.0, 1}, ModelParams{1, 0, 0.1, 1.0, 1}, ModelParams{1, 2, 0.0, 1.0, 1},
                   ModelParams{1, 2, 0.1, -1.0, 1}, ModelParams{1, 2, 0.1, 1.0, 0}}) {
    EXPECT_THROW(bad.validate(), PreconditionError);
  }
}

TEST(EquilibriumDensity, PeakMassAndSymmetry) {
  const auto grid = GridSpec::default_grid();
  const auto rho = equilibrium_density(grid, 5, 0.1);
  EXPECT_NEAR(rho.at(0.0), 1.0 / std::sqrt(2.0 * M_PI * 0.0125), 1e-4);
  EXPECT_NEAR(rho.at(0.0), 3.5682, 1e-4);
  EXPECT_NEAR(rho.mass(), 1.0, 1e-12);
  // node j sits at -L + j dx, so x and -x are nodes j and M - j
  const auto m = static_cast<std::size_t>(grid.points);
  for (std::size_t j = 1; j < m; ++j) ASSERT_EQ(rho[j], rho[m - j]) << j;
}

TEST(EquilibriumDensity, SecondMomentOnFineGrid) {
  for (int K : {2, 3, 5, 10}) {
    const double v = equilibrium_variance(K, 0.1);
    const auto grid = GridSpec::default_grid();
    ASSERT_LE(grid.spacing(), std::sqrt(v) / 50.0);
    ASSERT_GE(grid.half_width, 8.0 * std::sqrt(v));
    const auto rho = equilibrium_density(grid, K, 0.1);
    EXPECT_NEAR(rho.second_moment(), v, 1e-3 * v) << "K=" << K;
  }
}

TEST(EquilibriumDensity, NarrowGridIsRejected) {
  const auto grid = GridSpec::make(0.5, 1 << 12);
  EXPECT_THROW(equilibrium_density(grid, 5, 0.1), AccuracyError);
  try {
    equilibrium_density(grid, 5, 0.1);
  } catch (const AccuracyError& e) {
    EXPECT_NE(std::string(e.what()).find("equilibrium tail truncated"), std::string::npos);
  }
}

// Reference vectors from the Random123 distribution (kat_vectors, philox4x32_10).
TEST(Philox, KnownAnswers) {
  using detail::philox4x32;
  EXPECT_EQ(philox4x32({0, 0, 0, 0}, {0, 0}),
            (std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RandomSource, SameIdsReproduce) {
  RandomSource a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  RandomSource c(42, 7), d(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(c.normal(), d.normal());
}

TEST(RandomSource, DistinctStreamsDiffer) {
  RandomSource a(42, 0), b(42, 1), c(43, 0);
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    same_ab += x == b.next_u64();
    same_ac += x == c.next_u64();
  }
  EXPECT_EQ(same_ab, 0);
  EXPECT_EQ(same_ac, 0);
}

TEST(RandomSource, StreamsAreUncorrelated) {
  RandomSource a(9, 0), b(9, 1);
  const int n = 200000;
  double sab = 0.0;
  for (int i = 0; i < n; ++i) sab += a.normal() * b.normal();
  // correlation estimate has standard error 1/sqrt(n)
  EXPECT_LT(std::abs(sab / n), 4.0 / std::sqrt(n));
}

TEST(RandomSource, DeriveIsStableAndDistinct) {
  const RandomSource root(5, 3);
  EXPECT_EQ(root.derive(1, 2).stream(), root.derive(1, 2).stream());
  std::set<std::uint64_t> ids;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 50; ++b) ids.insert(root.derive(a, b).stream());
  EXPECT_EQ(ids.size(), 2500u);
  EXPECT_EQ(root.derive(1, 2).seed(), 5u);
}

TEST(RandomSource, UniformRanges) {
  RandomSource r(1, 0);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = r.uniform_open();
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(RandomSource, IndexIsUniform) {
  RandomSource r(2, 0);
  const int n = 7, draws = 700000;
  std::vector<int> counts(n, 0);
  for (int i = 0; i < draws; ++i) {
    const auto k = r.index(n);
    ASSERT_LT(k, static_cast<std::uint64_t>(n));
    ++counts[k];
  }
  double chi2 = 0.0;
  const double e = static_cast<double>(draws) / n;
  for (int c : counts) chi2 += (c - e) * (c - e) / e;
  EXPECT_LT(chi2, 22.46);  // chi-square(6) 0.999 quantile
  EXPECT_EQ(r.index(1), 0u);
}

TEST(RandomSource, ExponentialMean) {
  RandomSource r(3, 0);
  const int n = 200000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += r.exponential(4.0);
  EXPECT_NEAR(s / n, 0.25, 4.0 * 0.25 / std::sqrt(n));
}

TEST(GaussianNoise, MeanAndVarianceOverAMillionDraws) {
  RandomSource r(11, 0);
  const int n = 1000000;
  const double sigma = 0.1;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = gaussian_noise(r, 1, sigma)[0];
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_LT(std::abs(mean), 4.0 * sigma / 1e3);
  EXPECT_NEAR(var, sigma * sigma, 0.01 * sigma * sigma);
}

TEST(GaussianNoise, DeterministicFirstDrawAndDimension) {
  RandomSource a(77, 4), b(77, 4);
  const auto x = gaussian_noise(a, 3, 0.5);
  const auto y = gaussian_noise(b, 3, 0.5);
  ASSERT_EQ(x.size(), 3u);
  EXPECT_EQ(x, y);
}

TEST(GaussianNoise, IsotropicCoordinatesUncorrelated) {
  RandomSource r(12, 0);
  const int n = 200000;
  double c01 = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto w = gaussian_noise(r, 2, 1.0);
    c01 += w[0] * w[1];
  }
  EXPECT_LT(std::abs(c01 / n), 4.0 / std::sqrt(n));
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; }, 4);
  for (const auto& h : hits) ASSERT_EQ(h.load(), 1);
}

TEST(ParallelFor, RethrowsWorkerException) {
  EXPECT_THROW(parallel_for(100, [](std::size_t i) { if (i == 37) throw std::runtime_error("boom"); }, 3),
               std::runtime_error);
}

TEST(ParallelFor, WorkerCountFromEnvironment) {
  setenv("KAVG_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  setenv("KAVG_THREADS", "junk", 1);
  EXPECT_GE(worker_count(), 1u);
  unsetenv("KAVG_THREADS");
}
