#include <cmath>

#include <algorithm>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/roots.hpp>
#include <gtest/gtest.h>

#include <mzgle/kl.hpp>

using namespace mzgle;

namespace {

double bessel_acf(double t) { return std::cyl_bessel_j(0.0, 2 * t); }
double bessel_kernel(double t) { return t == 0 ? -2.0 : -2.0 * std::cyl_bessel_j(1.0, 2 * t) / t; }

// Eigenvalues of exp(-|t - s|) on [0, T]: lambda = 2/(1 + w^2) with w the positive roots
// of tan(wT) = 2w/(w^2 - 1), written pole-free as (w^2 - 1) sin(wT) - 2w cos(wT) = 0.
std::vector<double> exponential_kernel_eigenvalues(double T, int count) {
  auto f = [T](double w) { return (w * w - 1) * std::sin(w * T) - 2 * w * std::cos(w * T); };
  std::vector<double> out;
  const double step = 1e-3;
  double a = step;
  while (static_cast<int>(out.size()) < count) {
    const double b = a + step;
    if (f(a) * f(b) < 0) {
      auto tol = [](double x, double y) { return std::abs(x - y) < 1e-15; };
      auto r = boost::math::tools::bisect(f, a, b, tol);
      const double w = 0.5 * (r.first + r.second);
      out.push_back(2 / (1 + w * w));
    }
    a = b;
  }
  return out;
}

KLBasis bessel_basis(double T = 10, double dt = 0.05, KLOptions opt = {}) { return kl_decompose(tabulate(bessel_acf, TimeGrid(T, dt)), 200, opt); }

}  // namespace

TEST(KL, ConstantCovarianceIsRankOne) {
  const double T = 2;
  auto b = kl_decompose(tabulate([](double) { return 1.0; }, TimeGrid(T, 0.01)), 10);
  ASSERT_EQ(b.rank(), 1u);
  EXPECT_NEAR(b.lambda[0], T, 1e-12);
  for (double v : b.modes[0].values) EXPECT_NEAR(v, 1 / std::sqrt(T), 1e-12);
}

TEST(KL, ExponentialKernelTranscendentalRoots) {
  auto ref = exponential_kernel_eigenvalues(1.0, 6);
  auto b = kl_decompose(tabulate([](double t) { return std::exp(-t); }, TimeGrid(1.0, 1e-3)), 6);
  ASSERT_EQ(b.rank(), 6u);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(b.lambda[k] / ref[k], 1.0, 1e-4) << k;
}

TEST(KL, TraceOrthonormalityAndMercer) {
  auto b = bessel_basis();
  const auto w = trapezoid_weights(b.grid);
  double trace = 0;
  for (double l : b.lambda) trace += l;
  EXPECT_NEAR(trace / (b.grid.T() * 1.0), 1.0, 1e-4);
  EXPECT_LE(trace, b.grid.T() * (1 + 1e-6));
  for (std::size_t i = 0; i < b.rank(); ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < w.size(); ++t) s += w[t] * b.modes[i][t] * b.modes[j][t];
      EXPECT_NEAR(s, i == j ? 1.0 : 0.0, 1e-8);
    }
  auto M = mercer_matrix(b);
  const auto n = static_cast<Eigen::Index>(b.grid.size());
  Eigen::MatrixXd Cm(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) Cm(i, j) = b.covariance[static_cast<std::size_t>(std::abs(i - j))];
  EXPECT_LE((M - Cm).norm() / Cm.norm(), 1e-3);
  for (std::size_t k = 1; k < b.rank(); ++k) EXPECT_LE(b.lambda[k], b.lambda[k - 1]);
}

TEST(KL, EnergyFloorAndKmax) {
  auto all = bessel_basis(10, 0.05, KLOptions{1e-14, 1e-10});
  auto floor8 = bessel_basis();
  EXPECT_GT(all.rank(), floor8.rank());
  for (double l : floor8.lambda) EXPECT_GE(l / floor8.lambda[0], 1e-8);
  auto capped = kl_decompose(tabulate(bessel_acf, TimeGrid(10, 0.05)), 5);
  EXPECT_EQ(capped.rank(), 5u);
  EXPECT_EQ(floor8.truncated(3).rank(), 3u);
}

TEST(KL, RejectsInvalidCovariance) {
  TimeGrid g(3, 0.05);
  EXPECT_THROW(kl_decompose(tabulate([](double t) { return 1 - t; }, g), 10), ValidationError);
  EXPECT_THROW(kl_decompose(tabulate([](double) { return 0.0; }, g), 10), ValidationError);
  EXPECT_THROW(kl_decompose(tabulate([](double t) { return 1 + t; }, g), 10), ValidationError);
  EXPECT_THROW(kl_decompose(tabulate(bessel_acf, g), 0), ValidationError);
}

TEST(Marginal, QuantilesAndMoments) {
  auto g = MarginalSpec::gaussian(1.0, 4.0);
  EXPECT_NEAR(g.quantile(0.5), 1.0, 1e-12);
  EXPECT_NEAR(g.quantile(0.975), 1 + 2 * 1.959963984540054, 1e-9);
  EXPECT_DOUBLE_EQ(g.central_moment(4), 48.0);
  auto d = Density1D::quartic_gibbs(40, 1, 1);
  auto q = MarginalSpec::from_density(d);
  EXPECT_NEAR(q.variance(), d.moment(2), 1e-15);
  EXPECT_NEAR(q.central_moment(4), d.moment(4), 1e-15);
  EXPECT_NEAR(q.quantile(0.5), 0.0, 1e-6);
  // Standard-normal limit of the numerically inverted CDF.
  auto s = MarginalSpec::from_density(Density1D::gaussian(1.0));
  for (double p : {0.01, 0.2, 0.7, 0.99})
    EXPECT_NEAR(s.quantile(p), boost::math::quantile(boost::math::normal(), p), 1e-5);
  EXPECT_THROW(g.quantile(1.0), ValidationError);
}

TEST(Sampler, GaussianMarginalIsAFixedPoint) {
  auto b = bessel_basis();
  SamplerOptions opt;
  opt.monitor_samples = 20000;
  auto ens = sample_ensemble(b, MarginalSpec::gaussian(0, 1), 20000, 5, opt);
  EXPECT_LE(ens.iterations, 1);
  EXPECT_TRUE(ens.converged);
  EXPECT_LE(ens.acf_error, 0.02);
  // Whitened amplitudes: identity sample covariance, mean zero.
  const auto& X = *ens.xi;
  Eigen::MatrixXd S = (X.transpose() * X) / static_cast<double>(X.rows() - 1);
  const double lim = 3 / std::sqrt(static_cast<double>(X.rows()));
  for (Eigen::Index i = 0; i < S.rows(); ++i)
    for (Eigen::Index j = 0; j < S.cols(); ++j) EXPECT_NEAR(S(i, j), i == j ? 1.0 : 0.0, i == j ? 1e-8 : lim);
}

TEST(Sampler, PathsReconstructFromAmplitudes) {
  auto b = bessel_basis(5, 0.05);
  auto ens = sample_ensemble(b, MarginalSpec::gaussian(0, 1), 2000, 1);
  std::vector<double> u(b.grid.size());
  ens.path(17, u);
  for (std::size_t t = 0; t < u.size(); t += 7) {
    double s = 0;
    for (std::size_t k = 0; k < b.rank(); ++k) s += std::sqrt(b.lambda[k]) * (*ens.xi)(17, static_cast<Eigen::Index>(k)) * b.modes[k][t];
    EXPECT_NEAR(u[t], s, 1e-12);
  }
}

TEST(Sampler, DeterministicForSeed) {
  auto b = bessel_basis(5, 0.05);
  auto m = MarginalSpec::from_density(Density1D::quartic_gibbs(40, 1, 1));
  auto qb = kl_decompose(tabulate([&](double t) { return m.variance() * bessel_acf(t); }, TimeGrid(5, 0.05)), 200);
  auto a = sample_ensemble(qb, m, 3000, 9), c = sample_ensemble(qb, m, 3000, 9);
  EXPECT_TRUE(a.xi->isApprox(*c.xi, 0.0));
  auto d = sample_ensemble(qb, m, 3000, 10);
  EXPECT_FALSE(a.xi->isApprox(*d.xi, 1e-6));
}

TEST(Sampler, QuarticMarginalKurtosis) {
  auto d = Density1D::quartic_gibbs(40, 1, 1);
  auto m = MarginalSpec::from_density(d);
  const double s2 = m.variance();
  auto b = kl_decompose(tabulate([&](double t) { return s2 * bessel_acf(t); }, TimeGrid(10, 0.05)), 200);
  auto ens = sample_ensemble(b, m, 50000, 3);
  EXPECT_TRUE(ens.converged);
  // Excess kurtosis over all samples at t = 0, standard error by the delta method on
  // per-sample contributions.
  const std::size_t N = ens.size();
  std::vector<double> u(b.grid.size());
  double m2 = 0, m4 = 0, m8 = 0, m6 = 0;
  for (std::size_t i = 0; i < N; ++i) {
    ens.path(i, u);
    const double x2 = u[0] * u[0];
    m2 += x2;
    m4 += x2 * x2;
    m6 += x2 * x2 * x2;
    m8 += x2 * x2 * x2 * x2;
  }
  m2 /= N, m4 /= N, m6 /= N, m8 /= N;
  const double kurt = m4 / (m2 * m2) - 3;
  const double target = d.moment(4) / (d.moment(2) * d.moment(2)) - 3;
  // var of m4/m2^2 via gradient (1/m2^2, -2 m4/m2^3) on (x^4, x^2).
  const double g1 = 1 / (m2 * m2), g2 = -2 * m4 / (m2 * m2 * m2);
  const double v44 = m8 - m4 * m4, v22 = m4 - m2 * m2, v42 = m6 - m4 * m2;
  const double se = std::sqrt((g1 * g1 * v44 + g2 * g2 * v22 + 2 * g1 * g2 * v42) / N);
  EXPECT_LE(std::abs(kurt - target), 3 * se) << kurt << " vs " << target << " se " << se;
  EXPECT_LT(target, 0.0);
}

TEST(Sampler, SingleModeMatchesTargetQuantiles) {
  const double T = 1;
  auto m = MarginalSpec::from_density(Density1D::quartic_gibbs(2, 1, 1));
  auto b = kl_decompose(tabulate([&](double) { return m.variance(); }, TimeGrid(T, 0.05)), 10);
  ASSERT_EQ(b.rank(), 1u);
  auto ens = sample_ensemble(b, m, 100000, 4);
  std::vector<double> x(ens.size()), u(b.grid.size());
  for (std::size_t i = 0; i < ens.size(); ++i) {
    ens.path(i, u);
    x[i] = u[3];
  }
  std::sort(x.begin(), x.end());
  for (double p : {0.05, 0.25, 0.5, 0.75, 0.95}) {
    const double q = x[static_cast<std::size_t>(p * static_cast<double>(x.size()))];
    EXPECT_NEAR(q, m.quantile(p), 0.01 * m.stddev()) << p;
  }
}

TEST(Sampler, Validation) {
  auto b = bessel_basis(5, 0.05);
  EXPECT_THROW(sample_ensemble(b, MarginalSpec::gaussian(0, 1), 10 * b.rank() - 1, 1), ValidationError);
  EXPECT_THROW(MarginalSpec::gaussian(0, 0), ValidationError);
}

TEST(HigherOrderAcf, GaussianIsserlis) {
  auto b = bessel_basis();
  auto ens = sample_ensemble(b, MarginalSpec::gaussian(0, 1), 30000, 8);
  auto a1 = higher_order_acf(ens, 1), a2 = higher_order_acf(ens, 2), a4 = higher_order_acf(ens, 4);
  double z1 = 0, z2 = 0, z4 = 0;
  for (std::size_t t = 0; t < b.grid.size(); ++t) {
    const double r = bessel_acf(b.grid.t(t));
    z1 = std::max(z1, std::abs(a1[t] - r) / a1.stderrs[t]);
    z2 = std::max(z2, std::abs(a2[t] - (1 + 2 * r * r)) / a2.stderrs[t]);
    z4 = std::max(z4, std::abs(a4[t] - (9 + 72 * r * r + 24 * std::pow(r, 4))) / a4.stderrs[t]);
  }
  EXPECT_LT(z1, 4.5);
  EXPECT_LT(z2, 4.5);
  EXPECT_LT(z4, 4.5);
}

TEST(HigherOrderAcf, StationaryEstimatorOnKnownPaths) {
  PathEnsemble p;
  p.grid = TimeGrid(0.3, 0.1);
  p.paths.resize(2, 4);
  p.paths << 1, 2, 3, 4, 0, 1, 0, 1;
  auto a = higher_order_acf(p, 1);
  // path 1: lag0 (1+4+9+16)/4 = 7.5, lag1 (2+6+12)/3 = 6.667, lag3 4; path 2: 0.5, 0, 0
  EXPECT_NEAR(a[0], (7.5 + 0.5) / 2, 1e-12);
  EXPECT_NEAR(a[1], (20.0 / 3 + 0) / 2, 1e-12);
  EXPECT_NEAR(a[3], (4.0 + 0) / 2, 1e-12);
  EXPECT_NEAR(a.stderrs[0], std::sqrt(((7.5 - 4) * (7.5 - 4) + (0.5 - 4) * (0.5 - 4)) / 1 / 2), 1e-12);
}

TEST(Fluctuation, NoMemoryGivesPathDerivative) {
  auto b = bessel_basis(5, 0.01);
  auto ens = sample_ensemble(b, MarginalSpec::gaussian(0, 1), 2000, 2);
  TimeGrid g = b.grid;
  auto h = solve_fluctuation_modes(b.modes, b.lambda, 0.0, GeneralKernel{tabulate([](double) { return 0.0; }, g)});
  auto f = build_fluctuation_process(b, h, ens);
  std::vector<double> u(g.size()), fi(g.size());
  for (std::size_t i : {0u, 11u, 999u}) {
    ens.path(i, u);
    f.path(i, fi);
    auto du = fd_derivative(u, g.dt(), 1);
    for (std::size_t t = 0; t < g.size(); ++t) EXPECT_NEAR(fi[t], du[t], 1e-9);
  }
}

TEST(Fluctuation, ZeroModesGiveConstantMean) {
  KLBasis empty;
  empty.grid = TimeGrid(1, 0.1);
  SampleEnsemble ens;
  ens.basis = empty;
  ens.xi = std::make_shared<const Eigen::MatrixXd>(Eigen::MatrixXd::Zero(5, 0));
  auto f = build_fluctuation_process(empty, {}, ens, 0.25);
  std::vector<double> out(empty.grid.size());
  f.path(3, out);
  for (double v : out) EXPECT_EQ(v, 0.25);
}

TEST(Fluctuation, ModeCountMismatch) {
  auto b = bessel_basis(5, 0.05);
  auto ens = sample_ensemble(b, MarginalSpec::gaussian(0, 1), 2000, 2);
  auto h = solve_fluctuation_modes(b.modes, b.lambda, 0.0, Hamiltonian{1.0});
  h.pop_back();
  EXPECT_THROW(build_fluctuation_process(b, h, ens), ValidationError);
}

// <f(0) f(t)> / <u^2> = -K(t): K(0) = mu_2 < 0 while <f(0)^2> > 0.
TEST(Fluctuation, SecondFdtOnEnsemble) {
  auto b = bessel_basis(10, 0.025);
  auto ens = sample_ensemble(b, MarginalSpec::gaussian(0, 1), 20000, 6);
  auto h = solve_fluctuation_modes(b.modes, b.lambda, 0.0, Hamiltonian{1.0});
  auto f = build_fluctuation_process(b, h, ens);
  const std::size_t n = b.grid.size(), N = ens.size();
  std::vector<double> s1(n, 0), s2(n, 0), fi(n);
  for (std::size_t i = 0; i < N; ++i) {
    f.path(i, fi);
    for (std::size_t t = 0; t < n; ++t) {
      const double a = fi[0] * fi[t];
      s1[t] += a;
      s2[t] += a * a;
    }
  }
  double zmax = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double mean = s1[t] / N, se = std::sqrt((s2[t] / N - mean * mean) / N);
    // modelling error of the reconstructed kernel is ~2e-3; include it in the band
    zmax = std::max(zmax, (std::abs(mean + bessel_kernel(b.grid.t(t))) - 5e-3) / se);
  }
  EXPECT_LT(zmax, 3.0);
}

TEST(Gle, NoForcingNoMemory) {
  TimeGrid g(3, 0.01);
  SampleEnsemble ens;
  KLBasis empty;
  empty.grid = g;
  ens.basis = empty;
  ens.xi = std::make_shared<const Eigen::MatrixXd>(Eigen::MatrixXd::Zero(3, 0));
  auto f = build_fluctuation_process(empty, {}, ens);
  std::vector<double> u0 = {1.0, -0.5, 2.0};
  auto p = gle_sample_paths(-1.0, tabulate([](double) { return 0.0; }, g), f, u0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < g.size(); t += 50) EXPECT_NEAR(p.paths(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)), u0[i] * std::exp(-g.t(t)), 1e-5);
}

TEST(Gle, HarmonicClosedLoop) {
  auto b = bessel_basis(10, 0.025);
  auto ens = sample_ensemble(b, MarginalSpec::gaussian(0, 1), 20000, 12);
  auto K = tabulate(bessel_kernel, b.grid);
  auto h = solve_fluctuation_modes(b.modes, b.lambda, 0.0, Hamiltonian{1.0});
  auto f = build_fluctuation_process(b, h, ens);
  std::vector<double> u0(ens.size()), u(b.grid.size());
  for (std::size_t i = 0; i < ens.size(); ++i) {
    ens.path(i, u);
    u0[i] = u[0];
  }
  auto paths = gle_sample_paths(0.0, K, f, u0);
  auto a1 = higher_order_acf(paths, 1), a2 = higher_order_acf(paths, 2);
  double sup = 0, z2 = 0;
  for (std::size_t t = 0; t < b.grid.size(); ++t) {
    const double r = bessel_acf(b.grid.t(t));
    sup = std::max(sup, std::abs(a1[t] - r));
    z2 = std::max(z2, std::abs(a2[t] - (1 + 2 * a1[t] * a1[t])) / a2.stderrs[t]);
  }
  EXPECT_LT(sup, 0.05);
  EXPECT_LT(z2, 3.0);
}

// u paths and f paths of the same realization satisfy the GLE up to the kernel
// modelling error.
TEST(Gle, PerRealizationResidual) {
  auto b = bessel_basis(10, 0.025);
  auto ens = sample_ensemble(b, MarginalSpec::gaussian(0, 1), 500, 13);
  auto K = tabulate(bessel_kernel, b.grid);
  auto h = solve_fluctuation_modes(b.modes, b.lambda, 0.0, Hamiltonian{1.0});
  auto f = build_fluctuation_process(b, h, ens);
  const std::size_t n = b.grid.size();
  const double dt = b.grid.dt();
  std::vector<double> u(n), fi(n);
  double worst = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    ens.path(i, u);
    f.path(i, fi);
    auto du = fd_derivative(u, dt, 1);
    double r2 = 0, u2 = 0;
    for (std::size_t t = 0; t < n; ++t) {
      double conv = 0;
      if (t > 0) {
        conv = 0.5 * (K[t] * u[0] + K[0] * u[t]);
        for (std::size_t s = 1; s < t; ++s) conv += K[t - s] * u[s];
      }
      const double r = du[t] - dt * conv - fi[t];
      r2 += r * r;
      u2 += du[t] * du[t];
    }
    worst = std::max(worst, std::sqrt(r2 / u2));
  }
  EXPECT_LT(worst, 1e-2);
}

TEST(VMatrix, AntisymmetricForStationaryProcess) {
  auto b = bessel_basis(10, 0.05);
  auto v = v_matrix(b, 1.0);
  EXPECT_LT((v + v.transpose()).norm(), 1e-10 * std::max(1.0, v.norm()));
}
