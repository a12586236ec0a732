#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "chain.hpp"
#include "config.hpp"
#include "io.hpp"
#include "kernel.hpp"
#include "kl.hpp"
#include "measure.hpp"
#include "volterra.hpp"

namespace mzgle {

/// Operator, measure and observable resolved from a config.
struct SystemBundle {
  LiouvilleOperator<Rational> L;
  ProductMeasure mu;
  Polynomial<Rational> u0;
  VarIndex obs_var = 0;
  std::optional<ChainParams> chain;
  std::optional<Density1D> obs_density;
  bool skew = false;
  json definition;  ///< system definition for user-supplied files
};

namespace detail {

inline Density1D make_density(const DensityConfig& d) {
  if (d.kind == "gaussian") return Density1D::gaussian(d.gamma);
  return Density1D::quartic_gibbs(to_double(d.gamma), to_double(d.alpha1), to_double(d.beta1));
}

inline std::size_t stride_of(double coarse, double fine, const char* what) {
  const double r = coarse / fine;
  const auto s = static_cast<std::size_t>(std::llround(r));
  if (s == 0 || std::abs(r - static_cast<double>(s)) > 1e-9 * r)
    throw ValidationError(std::string(what) + " must be a multiple of grid.dt");
  return s;
}

inline Series subsample(const Series& s, std::size_t stride) {
  TimeGrid g = s.grid.coarsened(stride);
  std::vector<double> v(g.size()), se;
  for (std::size_t i = 0; i < g.size(); ++i) v[i] = s[i * stride];
  if (s.has_errors()) {
    se.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) se[i] = s.stderrs[i * stride];
  }
  return Series(g, std::move(v), std::move(se));
}

inline std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace detail

inline SystemBundle build_system(const ExperimentConfig& c) {
  SystemBundle b;
  const bool chain = c.system.builtin == "harmonic_chain" || c.system.builtin == "fpu_chain";
  if (chain) {
    if (c.system.N < 3) throw ValidationError("system.N must be at least 3");
    const auto N = static_cast<std::size_t>(c.system.N);
    const Rational beta = c.system.builtin == "harmonic_chain" ? Rational(0) : c.system.beta1;
    if (sgn(beta) < 0) throw ValidationError("system.beta1 must be non-negative");
    b.L = systems::fpu_chain(N, c.system.alpha1, beta, c.system.mass);
    ChainParams p;
    p.N = N;
    p.mass = to_double(c.system.mass);
    p.alpha1 = to_double(c.system.alpha1);
    p.beta1 = to_double(beta);
    p.gamma = to_double(c.measure.gamma);
    p.validate();
    b.chain = p;
  } else if (c.system.builtin == "kraichnan_orszag") {
    b.L = systems::kraichnan_orszag();
  } else {
    b.definition = read_json_file(c.system.file);
    b.L = parse_system(b.definition);
  }

  const std::string kind = c.measure.kind;
  if (chain && kind != "product") {
    const Rational beta = c.system.builtin == "harmonic_chain" ? Rational(0) : c.system.beta1;
    b.mu = measures::chain_gibbs(b.chain->N, c.measure.gamma, c.system.alpha1, beta, c.system.mass);
  } else if (kind == "chain_gibbs") {
    throw ValidationError("measure.kind chain_gibbs needs a chain system");
  } else if (kind == "auto" && !c.system.builtin.empty() && c.measure.variables.empty() && !c.measure.fallback) {
    b.mu = measures::standard_gaussian(b.L.dimension());
  } else {
    b.mu = ProductMeasure(b.L.dimension());
    for (std::size_t v = 0; v < b.L.dimension(); ++v) {
      const auto& name = b.L.name(static_cast<VarIndex>(v));
      auto it = c.measure.variables.find(name);
      if (it != c.measure.variables.end())
        b.mu.set(static_cast<VarIndex>(v), detail::make_density(it->second));
      else if (c.measure.fallback)
        b.mu.set(static_cast<VarIndex>(v), detail::make_density(*c.measure.fallback));
      else if (kind == "auto")
        b.mu.set(static_cast<VarIndex>(v), Density1D::gaussian(Rational(1)));
      else
        throw ValidationError("no density for variable '" + name + "' (set measure.variables or measure.default)");
    }
    for (const auto& [name, d] : c.measure.variables)
      if (!b.L.find(name)) throw ValidationError("measure.variables names unknown variable '" + name + "'");
  }

  if (chain) {
    if (c.observable.site >= c.system.N) throw ValidationError("observable.site is out of range");
    systems::ChainLayout lay{b.chain->N};
    b.obs_var = c.observable.field == "r" ? lay.r(c.observable.site) : lay.p(c.observable.site);
  } else {
    if (c.observable.variable.empty()) {
      b.obs_var = 0;
    } else {
      auto v = b.L.find(c.observable.variable);
      if (!v) throw ValidationError("observable.variable '" + c.observable.variable + "' is not a system variable");
      b.obs_var = *v;
    }
  }
  b.u0 = Polynomial<Rational>::variable(b.obs_var, static_cast<unsigned>(c.observable.power));
  b.obs_density = b.mu.density(b.obs_var);

  if (c.kernel.skew == "auto")
    b.skew = !c.system.builtin.empty() && (chain ? kind != "product" : (kind == "auto" && c.measure.variables.empty() && !c.measure.fallback));
  else
    b.skew = c.kernel.skew == "true";
  if (b.skew && !b.mu.all_even()) throw ValidationError("skew-adjoint evaluation needs an even measure");
  return b;
}

struct KernelRun {
  GammaSequence gamma;
  MuSequence mu;
  KernelExpansion kernel;
  double gram = 1.0;
  double mean = 0.0;
  std::string method;
};

/// gamma_1..gamma_{n+2}, mu and the order-n kernel.
inline KernelRun run_kernel(const ExperimentConfig& c, const SystemBundle& b) {
  KernelRun r;
  const int n = static_cast<int>(c.kernel.order);
  const int count = n + 2;
  const bool exact = c.kernel.arithmetic == "exact";
  const bool linear_ok = b.L.is_linear() && c.observable.power == 1;
  if (c.kernel.method == "linear" && !linear_ok) throw ValidationError("kernel.method linear needs a linear system and a power-1 observable");
  r.method = (c.kernel.method == "linear" || (c.kernel.method == "auto" && linear_ok)) ? "linear" : "combinatorial";
  const auto cap = static_cast<std::size_t>(c.kernel.term_cap);

  if (exact) {
    auto obs = make_observable(b.u0, b.mu);
    r.gram = obs.gram;
    if (r.method == "linear")
      r.gamma = linear_gamma(linear_matrix(b.L), b.L.dimension(), b.obs_var, b.mu, count);
    else
      r.gamma = gamma_sequence(b.L, obs, b.mu, count, b.skew, cap);
  } else {
    auto Ld = b.L.convert<double>();
    auto obs = make_observable(b.u0.convert<double>(), b.mu);
    r.gram = obs.gram;
    if (r.method == "linear")
      r.gamma = linear_gamma(linear_matrix(Ld), Ld.dimension(), b.obs_var, b.mu, count);
    else
      r.gamma = gamma_sequence(Ld, obs, b.mu, count, b.skew, cap);
  }
  r.gamma.skew_adjoint = b.skew;
  r.mean = expectation(b.u0, b.mu);
  r.mu = mu_sequence(r.gamma);

  FaberParams fp;
  if (c.kernel.scaling == "estimate") {
    fp = estimate_scaling(r.gamma);
  } else if (c.kernel.scaling == "linear") {
    if (!b.chain) throw ValidationError("kernel.scaling linear needs a chain system");
    fp = scaling_for_radius(chain_linear_radius(b.chain->alpha1, b.chain->mass));
  } else {
    fp.c0 = c.kernel.c0;
    fp.c1 = c.kernel.c1;
    fp.delta = c.kernel.delta;
  }
  r.kernel = build_kernel(r.mu, parse_basis(c.kernel.basis), fp, r.gram, n);
  return r;
}

/// Normalized correlation C(t)/C(0) on the fine grid.
inline Series run_correlation(const ExperimentConfig& c, const KernelRun& k) {
  TimeGrid g(c.grid.T, c.grid.dt);
  auto C = solve_correlation(k.kernel.omega(), tabulate(std::cref(k.kernel), g));
  for (double v : C.values)
    if (!std::isfinite(v)) throw NumericError("correlation solve produced non-finite values");
  return C;
}

/// Records every run: resolved config, version, outputs and metrics.
struct RunManifest {
  std::string command;
  json config;
  json files = json::array();
  json metrics = json::object();
  json extra = json::object();

  void write(const std::filesystem::path& dir) const {
    json m;
    m["tool"] = "mzgle";
    m["version"] = kToolVersion;
    m["command"] = command;
    m["created"] = detail::timestamp();
    m["config"] = config;
    m["outputs"] = files;
    m["metrics"] = metrics;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write_json_file(dir / "manifest.json", m);
  }
};

namespace detail {

inline std::filesystem::path prepare_dir(const ExperimentConfig& c) {
  std::filesystem::path dir(c.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

inline void emit(const std::filesystem::path& dir, const std::string& name, const Table& t, RunManifest& m) {
  write_table(dir / name, t);
  m.files.push_back(name);
}

inline RunManifest start(const std::string& cmd, const ExperimentConfig& c, const SystemBundle* b) {
  RunManifest m;
  m.command = cmd;
  m.config = config_json(c);
  if (b && !b->definition.is_null()) m.extra["system_definition"] = b->definition;
  return m;
}

inline json exact_strings(const std::vector<Rational>& v) {
  json a = json::array();
  for (const auto& q : v) a.push_back(to_string(q));
  return a;
}

inline Table sequence_table(const std::string& name, const std::vector<double>& v, const std::vector<Rational>& exact) {
  Table t;
  std::vector<double> idx(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) idx[i] = static_cast<double>(i + 1);
  t.add_column("i", std::move(idx));
  t.add_column(name, v);
  if (!exact.empty()) t.meta["exact"] = exact_strings(exact);
  return t;
}

inline json kernel_meta(const KernelRun& k) {
  return {{"omega", k.kernel.omega()}, {"gram", k.gram},         {"mean", k.mean},
          {"basis", to_string(k.kernel.basis)}, {"order", k.kernel.order}, {"delta", k.kernel.params.delta},
          {"c0", k.kernel.params.c0}, {"c1", k.kernel.params.c1}, {"method", k.method},
          {"skew", k.gamma.skew_adjoint}, {"exact", k.gamma.is_exact()}};
}

}  // namespace detail

inline RunManifest cmd_kernel(const ExperimentConfig& c) {
  auto b = build_system(c);
  auto k = run_kernel(c, b);
  auto dir = detail::prepare_dir(c);
  auto m = detail::start("kernel", c, &b);
  detail::emit(dir, "gamma.csv", detail::sequence_table("gamma", k.gamma.values, k.gamma.exact), m);
  detail::emit(dir, "mu.csv", detail::sequence_table("mu", k.mu.values, k.mu.exact), m);
  Table coeffs;
  std::vector<double> q(k.kernel.coeffs.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<double>(i);
  coeffs.add_column("q", std::move(q));
  coeffs.add_column("M", k.kernel.coeffs);
  coeffs.meta = detail::kernel_meta(k);
  detail::emit(dir, "coeffs.csv", coeffs, m);
  TimeGrid g(c.grid.T, c.grid.output_dt);
  detail::emit(dir, "kernel.csv", series_table(tabulate(std::cref(k.kernel), g), "K", detail::kernel_meta(k)), m);
  m.metrics = detail::kernel_meta(k);
  m.write(dir);
  return m;
}

inline RunManifest cmd_correlate(const ExperimentConfig& c) {
  auto dir = detail::prepare_dir(c);
  Series C;
  double omega = 0, gram = 1;
  RunManifest m;
  if (!c.correlate.kernel_file.empty()) {
    m = detail::start("correlate", c, nullptr);
    Table kt = read_table(c.correlate.kernel_file);
    if (!kt.meta.contains("omega")) throw ValidationError("kernel file has no omega in its metadata");
    omega = kt.meta["omega"].get<double>();
    gram = kt.meta.value("gram", 1.0);
    auto K = table_series(kt, "t", "K");
    C = solve_correlation(omega, K);
    for (double v : C.values)
      if (!std::isfinite(v)) throw NumericError("correlation solve produced non-finite values");
    m.metrics = kt.meta;
    m.extra["kernel_input"] = {{"meta", kt.meta}, {"dt", K.grid.dt()}, {"K", K.values}};
  } else {
    auto b = build_system(c);
    auto k = run_kernel(c, b);
    m = detail::start("correlate", c, &b);
    omega = k.kernel.omega();
    gram = k.gram;
    C = run_correlation(c, k);
    m.metrics = detail::kernel_meta(k);
    const auto stride = detail::stride_of(c.grid.output_dt, c.grid.dt, "grid.output_dt");
    C = detail::subsample(C, stride);
  }
  Table t = series_table(C, "C", m.metrics);
  std::vector<double> raw(C.size());
  for (std::size_t i = 0; i < C.size(); ++i) raw[i] = gram * C[i];
  t.add_column("C_raw", std::move(raw));
  detail::emit(dir, "correlation.csv", t, m);
  m.write(dir);
  return m;
}

inline RunManifest cmd_mc(const ExperimentConfig& c) {
  auto b = build_system(c);
  if (!b.chain) throw ValidationError("mc needs a chain system");
  if (c.measure.kind == "product") throw ValidationError("mc samples the chain Gibbs measure; measure.kind product is not supported");
  auto dir = detail::prepare_dir(c);
  auto m = detail::start("mc", c, &b);
  TimeGrid g(c.grid.T, c.grid.output_dt);
  MCOptions opt;
  opt.dt = c.mc.dt;
  json metrics = json::object();
  std::vector<unsigned> powers;
  for (long p : c.mc.powers) powers.push_back(static_cast<unsigned>(p));
  auto all = mc_autocorrelations(*b.chain, parse_field(c.observable.field), powers, static_cast<std::size_t>(c.observable.site),
                                 c.mc.site_average, static_cast<std::size_t>(c.mc.samples), g, c.mc.seed, opt);
  for (std::size_t k = 0; k < powers.size(); ++k) {
    const auto& S = all[k];
    const long p = c.mc.powers[k];
    const std::string name = "mc_" + c.observable.field + "_m" + std::to_string(p) + ".csv";
    json meta = {{"field", c.observable.field}, {"power", p}, {"samples", c.mc.samples}, {"seed", c.mc.seed}};
    detail::emit(dir, name, series_table(S, "C", meta), m);
    metrics[name] = {{"C0", S[0]}, {"stderr0", S.stderrs[0]}};
  }
  m.metrics = metrics;
  m.write(dir);
  return m;
}

inline RunManifest cmd_kl(const ExperimentConfig& c) {
  if (c.observable.power != 1) throw ValidationError("kl needs a power-1 observable");
  auto b = build_system(c);
  auto k = run_kernel(c, b);
  auto Cfine = run_correlation(c, k);
  const auto stride = detail::stride_of(c.kl.dt, c.grid.dt, "kl.dt");
  auto Cn = detail::subsample(Cfine, stride);
  const TimeGrid g = Cn.grid;
  const double var = k.gram - k.mean * k.mean;
  if (!(var > 0)) throw ValidationError("observable has zero variance");
  std::vector<double> cov(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) cov[i] = k.gram * Cn[i] - k.mean * k.mean;

  KLOptions ko;
  ko.energy_floor = c.kl.energy_floor;
  ko.negative_tolerance = c.kl.negative_tolerance;
  auto basis = kl_decompose(Series(g, cov), static_cast<std::size_t>(c.kl.kmax), ko, k.mean);

  const Density1D& d = *b.obs_density;
  MarginalSpec marginal = d.kind() == Density1D::Kind::gaussian ? MarginalSpec::gaussian(d.moment(1), d.moment(2) - d.moment(1) * d.moment(1))
                                                                : MarginalSpec::from_density(d);
  SamplerOptions so;
  so.iterations = static_cast<int>(c.kl.iters);
  auto ens = sample_ensemble(basis, marginal, static_cast<std::size_t>(c.kl.samples), c.kl.seed, so);

  auto dir = detail::prepare_dir(c);
  auto m = detail::start("kl", c, &b);

  Table eig;
  std::vector<double> idx(basis.rank());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<double>(i + 1);
  eig.add_column("k", idx);
  eig.add_column("lambda", basis.lambda);
  detail::emit(dir, "kl_eigen.csv", eig, m);

  std::vector<double> ts(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) ts[i] = g.t(i);
  Table modes;
  modes.add_column("t", ts);
  for (std::size_t j = 0; j < basis.rank(); ++j) modes.add_column("e" + std::to_string(j + 1), basis.modes[j].values);
  detail::emit(dir, "kl_modes.csv", modes, m);

  // Fluctuation modes.
  auto Kg = tabulate(std::cref(k.kernel), g);
  const double omega = k.kernel.omega();
  FluctuationSpec spec = b.skew ? FluctuationSpec(Hamiltonian{var}) : FluctuationSpec(GeneralKernel{Kg});
  auto h = solve_fluctuation_modes(basis.modes, basis.lambda, omega, spec);
  Table hm;
  hm.add_column("t", ts);
  for (std::size_t j = 0; j < h.size(); ++j) hm.add_column("h" + std::to_string(j + 1), h[j].values);
  hm.meta = {{"form", b.skew ? "hamiltonian" : "general"}};
  detail::emit(dir, "kl_hmodes.csv", hm, m);

  json metrics = {{"rank", basis.rank()},
                  {"iterations", ens.iterations},
                  {"quantile_error", ens.quantile_error},
                  {"acf_error", ens.acf_error},
                  {"converged", ens.converged},
                  {"marginal", marginal.describe()}};
  if (b.skew) metrics["fdt_kernel_error"] = sup_distance(fdt_kernel(h, basis.lambda, var), Kg);

  for (long p : c.kl.powers) {
    auto A = higher_order_acf(ens, static_cast<unsigned>(p));
    const std::string name = "kl_m" + std::to_string(p) + ".csv";
    detail::emit(dir, name, series_table(A, "C", {{"power", p}, {"samples", c.kl.samples}, {"seed", c.kl.seed}}), m);
  }

  if (c.kl.gle_samples > 0) {
    const auto G = std::min<std::size_t>(static_cast<std::size_t>(c.kl.gle_samples), ens.size());
    SampleEnsemble sub = ens;
    sub.xi = std::make_shared<const Eigen::MatrixXd>(ens.xi->topRows(static_cast<Eigen::Index>(G)));
    auto f = build_fluctuation_process(basis, h, sub, 0.0);
    std::vector<double> u0(G), path(g.size());
    for (std::size_t i = 0; i < G; ++i) {
      sub.path(i, path);
      u0[i] = path[0] - k.mean;
    }
    auto paths = gle_sample_paths(omega, Kg, f, u0);
    auto A = higher_order_acf(paths, 1);
    detail::emit(dir, "gle_m1.csv", series_table(A, "C", {{"samples", G}}), m);
    std::vector<double> diff(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) diff[i] = std::abs(A[i] - cov[i]);
    metrics["gle_acf_error"] = *std::max_element(diff.begin(), diff.end()) / var;
  }
  m.metrics = metrics;
  m.write(dir);
  return m;
}

/// Differences between two tabulated series.
struct CompareResult {
  double sup = 0, l2 = 0, max_z = 0;
  bool have_z = false;
  std::size_t points = 0;
};

inline CompareResult compare_series(const Series& a, const Series& b) {
  CompareResult r;
  const double T = std::min(a.grid.T(), b.grid.T());
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size() && a.grid.t(i) <= T * (1 + 1e-12); ++i) {
    const double t = std::min(a.grid.t(i), b.grid.T());
    const double diff = a[i] - b.at(t);
    d.push_back(diff);
    r.sup = std::max(r.sup, std::abs(diff));
    double var = 0;
    if (a.has_errors()) var += a.stderrs[i] * a.stderrs[i];
    if (b.has_errors()) {
      // Linear interpolation of the error bars.
      Series be(b.grid, b.stderrs);
      var += std::pow(be.at(t), 2);
    }
    if (var > 0) {
      r.have_z = true;
      r.max_z = std::max(r.max_z, std::abs(diff) / std::sqrt(var));
    }
  }
  r.points = d.size();
  double s = 0;
  for (std::size_t i = 0; i < d.size(); ++i) s += (i == 0 || i + 1 == d.size() ? 0.5 : 1.0) * d[i] * d[i];
  r.l2 = std::sqrt(s * a.grid.dt());
  return r;
}

}  // namespace mzgle
