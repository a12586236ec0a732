#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <mzgle/kl.hpp>
#include <mzgle/volterra.hpp>

using namespace mzgle;

namespace {

double bessel_kernel(double t) { return t == 0 ? -2.0 : -2.0 * std::cyl_bessel_j(1.0, 2 * t) / t; }
double bessel_acf(double t) { return std::cyl_bessel_j(0.0, 2 * t); }

double bessel_error(double dt, double T = 10) {
  TimeGrid g(T, dt);
  auto C = solve_correlation(0.0, bessel_kernel, g);
  return sup_distance(C, tabulate(bessel_acf, g));
}

}  // namespace

TEST(TimeGrid, Construction) {
  TimeGrid g(10, 0.05);
  EXPECT_EQ(g.steps(), 200u);
  EXPECT_EQ(g.size(), 201u);
  EXPECT_DOUBLE_EQ(g.t(200), 10.0);
  EXPECT_THROW(TimeGrid(1.0, 0.3), ValidationError);
  EXPECT_THROW(TimeGrid(1.0, 0.0), ValidationError);
  EXPECT_EQ(g.coarsened(4).steps(), 50u);
  EXPECT_THROW(g.coarsened(3), ValidationError);
}

TEST(Series, Interpolation) {
  Series s(TimeGrid(1, 0.5), {0.0, 1.0, 4.0});
  EXPECT_DOUBLE_EQ(s.at(0.25), 0.5);
  EXPECT_DOUBLE_EQ(s.at(0.75), 2.5);
  EXPECT_DOUBLE_EQ(s.at(2.0), 4.0);
  EXPECT_THROW(Series(TimeGrid(1, 0.5), {0.0, 1.0}), ValidationError);
}

TEST(FiniteDifference, FourthOrder) {
  TimeGrid g(2, 0.01);
  auto s = tabulate([](double t) { return std::sin(3 * t); }, g);
  auto d1 = derivative(s, 1), d2 = derivative(s, 2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(d1[i], 3 * std::cos(3 * g.t(i)), 1e-6);
    EXPECT_NEAR(d2[i], -9 * std::sin(3 * g.t(i)), 1e-4);
  }
}

TEST(SolveCorrelation, PureExponential) {
  for (double dt : {1e-2, 5e-3}) {
    TimeGrid g(5, dt);
    auto C = solve_correlation(-1.0, [](double) { return 0.0; }, g);
    EXPECT_EQ(C[0], 1.0);
    const double err = sup_distance(C, tabulate([](double t) { return std::exp(-t); }, g));
    EXPECT_LT(err, 0.04 * dt * dt);
  }
}

TEST(SolveCorrelation, ZeroKernelIsConstant) {
  auto C = solve_correlation(0.0, [](double) { return 0.0; }, TimeGrid(3, 0.01));
  for (double v : C.values) EXPECT_EQ(v, 1.0);
}

TEST(SolveCorrelation, BesselClosedForm) { EXPECT_LT(bessel_error(1e-3), 1e-4); }

TEST(SolveCorrelation, SecondOrderConvergence) {
  const double e1 = bessel_error(0.02), e2 = bessel_error(0.01), e3 = bessel_error(0.005);
  EXPECT_NEAR(e1 / e2, 4.0, 0.6);
  EXPECT_NEAR(e2 / e3, 4.0, 0.6);
}

TEST(SolveCorrelation, RejectsNonFiniteKernel) {
  EXPECT_THROW(solve_correlation(0.0, [](double t) { return t > 0.5 ? NAN : 0.0; }, TimeGrid(1, 0.1)), NumericError);
}

TEST(SolveForced, ExponentialWithForcing) {
  // u' = -u + 1, u(0) = 0 -> 1 - e^-t.
  TimeGrid g(4, 1e-3);
  std::vector<double> K(g.size(), 0.0), f(g.size(), 1.0);
  auto u = solve_forced(-1.0, K, g.dt(), 0.0, f);
  for (std::size_t i = 0; i < g.size(); i += 100) EXPECT_NEAR(u[i], 1 - std::exp(-g.t(i)), 1e-7);
  auto v = solve_forced(-1.0, K, g.dt(), 2.0);
  for (std::size_t i = 0; i < g.size(); i += 100) EXPECT_NEAR(v[i], 2 * std::exp(-g.t(i)), 1e-6);
}

TEST(ExtractKernel, ExponentialGivesZeroKernel) {
  TimeGrid g(5, 1e-3);
  auto K = extract_kernel(tabulate([](double t) { return std::exp(-t); }, g), -1.0);
  double m = 0;
  for (double v : K.values) m = std::max(m, std::abs(v));
  EXPECT_LE(m, 1e-6);
}

TEST(ExtractKernel, BesselCorrelation) {
  TimeGrid g(10, 1e-3);
  auto K = extract_kernel(tabulate(bessel_acf, g), 0.0);
  EXPECT_NEAR(K[0], -2.0, 1e-8);
  EXPECT_LT(sup_distance(K, tabulate(bessel_kernel, g)), 1e-3);
}

TEST(ExtractKernel, ErrorGrowsAtMostLinearly) {
  TimeGrid g(10, 1e-2);
  auto K = extract_kernel(tabulate(bessel_acf, g), 0.0);
  auto ref = tabulate(bessel_kernel, g);
  double e5 = 0, e10 = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double e = std::abs(K[i] - ref[i]);
    if (g.t(i) <= 5) e5 = std::max(e5, e);
    e10 = std::max(e10, e);
  }
  EXPECT_LE(e10, 2.5 * e5);
}

TEST(ExtractKernel, KernelAtZeroWithStreaming) {
  // C = e^{a t} cos(b t): C'(0) = a = omega, C''(0) = a^2 - b^2, so K(0) = -b^2.
  const double a = -0.3, b = 1.7;
  TimeGrid g(2, 1e-3);
  auto K = extract_kernel(tabulate([&](double t) { return std::exp(a * t) * std::cos(b * t); }, g), a);
  EXPECT_NEAR(K[0], -b * b, 1e-6);
}

TEST(ExtractKernel, RoundTripOnRandomSmoothKernels) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(-1, 1);
  for (int rep = 0; rep < 5; ++rep) {
    const double a = U(rng), b = 1 + U(rng), c = U(rng), omega = 0.3 * U(rng);
    auto kfun = [&](double t) { return -1.5 + a * std::sin(b * t) + c * std::exp(-t); };
    double prev = 0;
    for (double dt : {4e-3, 2e-3}) {
      TimeGrid g(3, dt);
      auto Kin = tabulate(kfun, g);
      auto C = solve_correlation(omega, Kin);
      auto Kout = extract_kernel(C, omega);
      const double err = sup_distance(Kin, Kout);
      EXPECT_LT(err, 1e-3) << rep;
      if (prev > 0) {
        EXPECT_GT(prev / err, 2.5) << rep;
      }
      prev = err;
    }
  }
}

TEST(ExtractKernel, Validation) {
  TimeGrid g(1, 0.1);
  EXPECT_THROW(extract_kernel(tabulate([](double) { return 2.0; }, g), 0.0), ValidationError);
  EXPECT_THROW(extract_kernel(Series(TimeGrid(0.3, 0.1), {1, 1, 1, 1}), 0.0), ValidationError);
}

TEST(FluctuationModes, NoMemoryGivesDerivatives) {
  TimeGrid g(4, 0.01);
  std::vector<Series> e = {tabulate([](double t) { return std::cos(t); }, g), tabulate([](double t) { return std::sin(2 * t); }, g)};
  auto h = solve_fluctuation_modes(e, {1.0, 0.5}, 0.0, GeneralKernel{tabulate([](double) { return 0.0; }, g)});
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(h[0][i], -std::sin(g.t(i)), 1e-7);
    EXPECT_NEAR(h[1][i], 2 * std::cos(2 * g.t(i)), 1e-6);
  }
}

TEST(FluctuationModes, BoundaryIdentity) {
  TimeGrid g(4, 0.01);
  std::vector<Series> e = {tabulate([](double t) { return std::cos(t) + 0.2; }, g), tabulate([](double t) { return std::sin(2 * t) - t; }, g)};
  const double omega = -0.4;
  Eigen::MatrixXd v(2, 2);
  v << 0.1, -0.3, 0.3, 0.05;
  for (const FluctuationSpec& spec : {FluctuationSpec(GeneralKernel{tabulate(bessel_kernel, g)}), FluctuationSpec(GeneralVMatrix{v}),
                                      FluctuationSpec(Hamiltonian{1.3})}) {
    auto h = solve_fluctuation_modes(e, {1.0, 0.5}, omega, spec);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(h[k][0], derivative(e[k])[0] - omega * e[k][0]);
  }
}

// Single mode, Hamiltonian form: h(t) = e'(t) - int_0^t c h(t-s) e(s) ds with
// c = -lambda h(0)/G, compared with a dense lower-triangular solve of the same
// trapezoidal discretization.
TEST(FluctuationModes, SingleModeAgainstDenseSolve) {
  const double w = 1.3, T = 6, lambda = 0.8, G = 1.1;
  TimeGrid g(T, 0.02);
  const double norm = std::sqrt(T / 2 + std::sin(2 * w * T) / (4 * w));
  auto e = tabulate([&](double t) { return std::cos(w * t) / norm; }, g);
  auto h = solve_fluctuation_modes({e}, {lambda}, 0.0, Hamiltonian{G});
  const std::size_t n = g.size();
  const double dt = g.dt();
  auto de = derivative(e);
  const double c = -lambda * de[0] / G;
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 1; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      // weight of e(s_j) in the trapezoid rule for int_0^{t_i} K(t_i - s) e(s) ds
      const double wgt = (j == 0 || j == i) ? 0.5 * dt : dt;
      A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - j)) += wgt * c * e[j];
    }
  Eigen::VectorXd b(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) b(static_cast<Eigen::Index>(i)) = de[i];
  Eigen::VectorXd x = A.partialPivLu().solve(b);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(h[0][i], x(static_cast<Eigen::Index>(i)), 1e-10) << i;
}

// The KL modes of J0(2t) on [0, 10] drive the Hamiltonian form; the kernel rebuilt
// from the modes reproduces -2 J1(2t)/t and, through the correlation solver, J0(2t).
TEST(FluctuationModes, HamiltonianClosedLoop) {
  TimeGrid g(10, 0.025);
  auto C = tabulate(bessel_acf, g);
  auto basis = kl_decompose(C, 200);
  auto h = solve_fluctuation_modes(basis.modes, basis.lambda, 0.0, Hamiltonian{1.0});
  auto Kt = fdt_kernel(h, basis.lambda, 1.0);
  EXPECT_LT(sup_distance(Kt, tabulate(bessel_kernel, g)), 5e-3);
  EXPECT_LT(sup_distance(solve_correlation(0.0, Kt), C), 5e-3);
}

TEST(FluctuationModes, VMatrixAndGeneralKernelAgree) {
  TimeGrid g(10, 0.025);
  auto C = tabulate(bessel_acf, g);
  auto basis = kl_decompose(C, 200);
  auto hk = solve_fluctuation_modes(basis.modes, basis.lambda, 0.0, GeneralKernel{tabulate(bessel_kernel, g)});
  auto hv = solve_fluctuation_modes(basis.modes, basis.lambda, 0.0, GeneralVMatrix{v_matrix(basis, 1.0)});
  double scale = 0, diff = 0;
  for (std::size_t k = 0; k < hk.size(); ++k) {
    scale = std::max(scale, std::sqrt(basis.lambda[k]) * std::abs(hk[k][0]));
    for (std::size_t i = 0; i < g.size(); ++i) diff = std::max(diff, std::sqrt(basis.lambda[k]) * std::abs(hk[k][i] - hv[k][i]));
  }
  EXPECT_LT(diff, 1e-2 * scale);
}

TEST(FluctuationModes, Validation) {
  TimeGrid g(1, 0.1);
  std::vector<Series> e = {tabulate([](double t) { return t; }, g)};
  EXPECT_THROW(solve_fluctuation_modes(e, {1.0, 2.0}, 0.0, Hamiltonian{1.0}), ValidationError);
  EXPECT_THROW(solve_fluctuation_modes(e, {-1.0}, 0.0, Hamiltonian{1.0}), ValidationError);
  EXPECT_THROW(solve_fluctuation_modes(e, {1.0}, 0.0, GeneralKernel{tabulate([](double) { return 0.0; }, TimeGrid(2, 0.1))}),
               ValidationError);
  EXPECT_TRUE(solve_fluctuation_modes({}, {}, 0.0, Hamiltonian{1.0}).empty());
}
