#pragma once

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "polynomial.hpp"

namespace mzgle {

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton iteration on P_n).
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw ValidationError("Gauss-Legendre rule needs at least one node");
  nodes.assign(static_cast<std::size_t>(n), 0.0);
  weights.assign(static_cast<std::size_t>(n), 0.0);
  if (n == 1) {
    nodes[0] = 0.0;
    weights[0] = 2.0;
    return;
  }
  const double pi = std::acos(-1.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    nodes[static_cast<std::size_t>(i)] = -x;
    nodes[static_cast<std::size_t>(n - 1 - i)] = x;
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    weights[static_cast<std::size_t>(i)] = w;
    weights[static_cast<std::size_t>(n - 1 - i)] = w;
  }
}

/// One-dimensional equilibrium density, normalized implicitly: all moments are
/// ratios against the 0th moment. Copies share one memoization cache.
class Density1D {
 public:
  enum class Kind { gaussian, quartic_gibbs, custom };

  /// exp(-gamma x^2 / 2): variance 1/gamma. Rational gamma enables exact moments.
  static Density1D gaussian(const Rational& gamma) {
    if (sgn(gamma) <= 0) throw ValidationError("Gaussian density needs gamma > 0");
    Density1D d(Kind::gaussian);
    d.impl_->gamma = to_double(gamma);
    d.impl_->exact_gamma = gamma;
    return d;
  }
  static Density1D gaussian(double gamma) {
    if (!(gamma > 0)) throw ValidationError("Gaussian density needs gamma > 0");
    Density1D d(Kind::gaussian);
    d.impl_->gamma = gamma;
    return d;
  }

  /// exp(-gamma (alpha1 x^2 / 2 + beta1 x^4 / 4)).
  static Density1D quartic_gibbs(double gamma, double alpha1, double beta1) {
    if (!(gamma > 0)) throw ValidationError("quartic Gibbs density needs gamma > 0");
    if (beta1 < 0 || (beta1 == 0 && alpha1 <= 0))
      throw ValidationError("quartic Gibbs density is not integrable for these alpha1, beta1");
    Density1D d(Kind::quartic_gibbs);
    d.impl_->gamma = gamma;
    d.impl_->alpha1 = alpha1;
    d.impl_->beta1 = beta1;
    d.impl_->bounds = d.impl_->truncation(0);
    return d;
  }

  /// Unnormalized log-density on [-a, a], integrated with an n-node Gauss-Legendre rule.
  static Density1D custom(std::function<double(double)> log_density, double half_width, int nodes) {
    if (!(half_width > 0) || nodes < 2) throw ValidationError("custom density needs a > 0 and at least 2 nodes");
    Density1D d(Kind::custom);
    d.impl_->custom_log = std::move(log_density);
    d.impl_->bounds = half_width;
    d.impl_->nodes = nodes;
    return d;
  }

  Kind kind() const { return impl_->kind; }
  double gamma() const { return impl_->gamma; }
  double alpha1() const { return impl_->alpha1; }
  double beta1() const { return impl_->beta1; }
  bool is_even() const { return impl_->kind != Kind::custom; }
  bool has_exact_moments() const { return impl_->exact_gamma.has_value(); }

  /// Unnormalized log-density.
  double log_density(double x) const { return impl_->log_density(x); }

  /// Symmetric interval carrying all but a negligible tail of the mass.
  double support_half_width() const {
    if (impl_->kind == Kind::gaussian) return 10.0 / std::sqrt(impl_->gamma);
    return impl_->bounds;
  }

  /// <x^m>. Odd moments of even densities are exactly 0.
  double moment(unsigned m) const {
    if (m == 0) return 1.0;
    if ((m & 1u) && is_even()) return 0.0;
    {
      std::shared_lock lock(impl_->mutex);
      auto it = impl_->cache.find(m);
      if (it != impl_->cache.end()) return it->second;
    }
    double v = impl_->compute_moment(m);
    std::unique_lock lock(impl_->mutex);
    return impl_->cache.try_emplace(m, v).first->second;
  }

  /// Exact <x^m> for Gaussian densities with rational gamma; nullopt otherwise.
  std::optional<Rational> exact_moment(unsigned m) const {
    if (!impl_->exact_gamma) return std::nullopt;
    if (m & 1u) return Rational(0);
    // (m-1)!! / gamma^(m/2)
    Rational v = 1;
    for (unsigned k = 1; k < m; k += 2) v *= k;
    for (unsigned k = 0; k < m / 2; ++k) v /= *impl_->exact_gamma;
    return v;
  }

  /// Integral of the unnormalized density exp(log_density) over the line.
  double normalization() const {
    switch (impl_->kind) {
      case Kind::gaussian: return std::sqrt(2 * M_PI / impl_->gamma);
      case Kind::quartic_gibbs: {
        double s0 = impl_->log_integrand(impl_->peak(0), 0);
        return 2 * std::exp(s0) * impl_->half_line_integral(0, s0);
      }
      case Kind::custom: {
        std::vector<double> x, w;
        gauss_legendre(impl_->nodes, x, w);
        CompensatedSum z;
        for (std::size_t i = 0; i < x.size(); ++i) z.add(w[i] * std::exp(impl_->custom_log(impl_->bounds * x[i])));
        return impl_->bounds * z.value();
      }
    }
    return 0.0;
  }

  std::string describe() const {
    switch (impl_->kind) {
      case Kind::gaussian: return "gaussian(gamma=" + fmt(impl_->gamma) + ")";
      case Kind::quartic_gibbs:
        return "quartic_gibbs(gamma=" + fmt(impl_->gamma) + ", alpha1=" + fmt(impl_->alpha1) + ", beta1=" + fmt(impl_->beta1) + ")";
      case Kind::custom: return "custom(a=" + fmt(impl_->bounds) + ", nodes=" + std::to_string(impl_->nodes) + ")";
    }
    return "?";
  }

 private:
  static std::string fmt(double x) {
    std::ostringstream os;
    os.precision(12);
    os << x;
    return os.str();
  }

  struct Impl {
    Kind kind;
    double gamma = 1.0, alpha1 = 1.0, beta1 = 0.0;
    std::optional<Rational> exact_gamma;
    std::function<double(double)> custom_log;
    double bounds = 0.0;
    int nodes = 0;
    std::shared_mutex mutex;
    std::map<unsigned, double> cache;

    double log_density(double x) const {
      switch (kind) {
        case Kind::gaussian: return -0.5 * gamma * x * x;
        case Kind::quartic_gibbs: {
          double x2 = x * x;
          return -gamma * (0.5 * alpha1 * x2 + 0.25 * beta1 * x2 * x2);
        }
        case Kind::custom: return custom_log(x);
      }
      return 0.0;
    }

    // log of x^m rho(x) on x > 0
    double log_integrand(double x, unsigned m) const { return (m ? m * std::log(x) : 0.0) + log_density(x); }

    // Location of the maximum of x^m rho(x) on x > 0, by scanning on a geometric grid.
    double peak(unsigned m) const {
      double best_x = 0.0, best = -std::numeric_limits<double>::infinity();
      double scale = alpha1 > 0 ? 1.0 / std::sqrt(gamma * alpha1) : std::numeric_limits<double>::infinity();
      if (beta1 > 0) scale = std::min(scale, std::pow(gamma * beta1, -0.25));
      for (double x = scale * 1e-4; x < scale * 1e4; x *= 1.01) {
        double v = log_integrand(x, m);
        if (v > best) best = v, best_x = x;
      }
      return best_x;
    }

    // Half-width beyond which x^m rho(x) has dropped below 1e-16 of its peak.
    double truncation(unsigned m) const {
      double xp = peak(m);
      double top = log_integrand(xp, m);
      double a = std::max(xp, 1e-300) * 1.5;
      while (log_integrand(a, m) > top - 37.0) a *= 1.1;
      return a;
    }

    double compute_moment(unsigned m) {
      switch (kind) {
        case Kind::gaussian: {
          double v = 1.0;
          for (unsigned k = 1; k < m; k += 2) v *= k;
          return v * std::pow(gamma, -0.5 * m);
        }
        case Kind::quartic_gibbs: return quartic_moment(m);
        case Kind::custom: return custom_moment(m);
      }
      return 0.0;
    }

    double half_line_integral(unsigned m, double shift) const {
      double a = std::max(truncation(m), truncation(0));
      auto f = [&](double x) { return std::exp(log_integrand(x, m) - shift); };
      double err = 0.0;
      return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, a, 12, 1e-14, &err);
    }

    double quartic_moment(unsigned m) const {
      double s0 = log_integrand(peak(0), 0);
      double sm = m ? log_integrand(peak(m), m) : s0;
      double num = half_line_integral(m, sm);
      double den = half_line_integral(0, s0);
      return std::exp(sm - s0) * num / den;
    }

    double custom_moment(unsigned m) const {
      std::vector<double> x, w;
      gauss_legendre(nodes, x, w);
      double top = -std::numeric_limits<double>::infinity();
      for (double xi : x) top = std::max(top, custom_log(bounds * xi));
      CompensatedSum num, den;
      for (std::size_t i = 0; i < x.size(); ++i) {
        double xi = bounds * x[i];
        double rho = w[i] * std::exp(custom_log(xi) - top);
        num.add(rho * std::pow(xi, static_cast<double>(m)));
        den.add(rho);
      }
      return num.value() / den.value();
    }
  };

  explicit Density1D(Kind kind) : impl_(std::make_shared<Impl>()) { impl_->kind = kind; }

  std::shared_ptr<Impl> impl_;
};

/// Independent product of per-variable densities.
class ProductMeasure {
 public:
  ProductMeasure() = default;
  explicit ProductMeasure(std::size_t dimension) : densities_(dimension) {}

  void set(VarIndex v, const Density1D& d) {
    if (v >= densities_.size()) densities_.resize(v + 1);
    densities_[v] = d;
  }

  std::size_t dimension() const { return densities_.size(); }
  bool covers(VarIndex v) const { return v < densities_.size() && densities_[v].has_value(); }

  const Density1D& density(VarIndex v) const {
    if (!covers(v)) throw ValidationError("no density registered for variable " + std::to_string(v));
    return *densities_[v];
  }

  bool all_even() const {
    for (const auto& d : densities_)
      if (d && !d->is_even()) return false;
    return true;
  }

  /// <x^b> for one monomial.
  double monomial_moment(const Monomial& m) const {
    double v = 1.0;
    for (std::size_t i = 0; i < m.size() && v != 0.0; ++i) v *= density(m.var(i)).moment(m.exp(i));
    return v;
  }

  Rational exact_monomial_moment(const Monomial& m) const {
    Rational v = 1;
    for (std::size_t i = 0; i < m.size(); ++i) {
      auto mom = density(m.var(i)).exact_moment(m.exp(i));
      if (!mom) throw ValidationError("density of variable " + std::to_string(m.var(i)) + " has no exact moments");
      v *= *mom;
      if (sgn(v) == 0) break;
    }
    return v;
  }

  bool exact_capable() const {
    for (const auto& d : densities_)
      if (d && !d->has_exact_moments()) return false;
    return true;
  }

 private:
  std::vector<std::optional<Density1D>> densities_;
};

/// <p> under a product measure: sum of coeff * prod_v <x_v^b_v>.
template <typename C>
double expectation(const Polynomial<C>& p, const ProductMeasure& mu) {
  CompensatedSum s;
  for (const auto& t : p.terms()) {
    for (std::size_t i = 0; i < t.mono.size(); ++i)
      if (!mu.covers(t.mono.var(i)))
        throw ValidationError("missing density for variable " + std::to_string(t.mono.var(i)));
    double m = mu.monomial_moment(t.mono);
    if (m != 0.0) s.add(to_double(t.coeff) * m);
  }
  return s.value();
}

/// Exact <p> when every density involved has rational moments.
inline Rational expectation_exact(const Polynomial<Rational>& p, const ProductMeasure& mu) {
  Rational s = 0;
  for (const auto& t : p.terms()) {
    for (std::size_t i = 0; i < t.mono.size(); ++i)
      if (!mu.covers(t.mono.var(i)))
        throw ValidationError("missing density for variable " + std::to_string(t.mono.var(i)));
    s += t.coeff * mu.exact_monomial_moment(t.mono);
  }
  return s;
}

namespace measures {

/// Gibbs product measure of the (r, p) chain at inverse temperature gamma: p_j is
/// Gaussian with variance m/gamma, r_j follows exp(-gamma V(r)).
inline ProductMeasure chain_gibbs(std::size_t N, const Rational& gamma, const Rational& alpha1, const Rational& beta1,
                                  const Rational& mass = 1) {
  ProductMeasure mu(2 * N);
  Density1D p = Density1D::gaussian(Rational(gamma / mass));
  Density1D r = sgn(beta1) == 0 ? Density1D::gaussian(Rational(gamma * alpha1))
                                : Density1D::quartic_gibbs(to_double(gamma), to_double(alpha1), to_double(beta1));
  for (std::size_t j = 0; j < N; ++j) {
    mu.set(static_cast<VarIndex>(j), r);
    mu.set(static_cast<VarIndex>(N + j), p);
  }
  return mu;
}

/// Every variable standard normal.
inline ProductMeasure standard_gaussian(std::size_t N) {
  ProductMeasure mu(N);
  Density1D g = Density1D::gaussian(Rational(1));
  for (std::size_t j = 0; j < N; ++j) mu.set(static_cast<VarIndex>(j), g);
  return mu;
}

}  // namespace measures

}  // namespace mzgle
