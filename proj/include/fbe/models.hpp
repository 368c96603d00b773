#pragma once

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "fgcb.hpp"
#include "numeric.hpp"
#include "operators.hpp"
#include "thermal.hpp"

namespace fbe {

enum class ModelKind { IidTwoLevel, IsingChain, SpinHalfBath, FermiGasWell };

inline const char* model_name(ModelKind k) {
  switch (k) {
    case ModelKind::IidTwoLevel: return "iid_two_level";
    case ModelKind::IsingChain: return "ising_chain";
    case ModelKind::SpinHalfBath: return "spin_half_bath";
    case ModelKind::FermiGasWell: return "fermi_gas_well";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (auto k : {ModelKind::IidTwoLevel, ModelKind::IsingChain, ModelKind::SpinHalfBath, ModelKind::FermiGasWell})
    if (s == model_name(k)) return k;
  throw Error(ErrorCode::InvalidModel, "unknown model kind '" + s + "'");
}

// Bath 1 is the cold bath everywhere. Units: hbar = k_B = 1.
struct ModelSpec {
  ModelKind kind = ModelKind::IidTwoLevel;
  // iid_two_level: single-site gaps
  double omega_c = 1, omega_h = 1;
  // ising_chain: ferromagnetic couplings, periodic ring
  double J_c = 1, J_h = 1;
  // spin_half_bath: H = omega sigma_z, sigma_angle = cos(angle) sigma_z + sin(angle) sigma_x
  double omega = 1, angle = std::numbers::pi / 2;
  // fermi_gas_well: E_0 = pi^2 / (2 m l^2); cutoff <= 0 means "not set"
  double l_c = 1, l_h = 1, mass = std::numbers::pi * std::numbers::pi / 2, cutoff = 0;
};

constexpr int kIsingEnumerationMax = 20;
constexpr int kSpinHalfDenseMax = 12;

inline std::vector<Label> model_labels(ModelKind k) {
  switch (k) {
    case ModelKind::IidTwoLevel:
    case ModelKind::IsingChain: return {{1, Tag::A}, {2, Tag::A}};
    case ModelKind::SpinHalfBath: return {{1, Tag::A}, {1, Tag::B}};
    case ModelKind::FermiGasWell: return {{1, Tag::A}, {2, Tag::A}, {1, Tag::B}, {2, Tag::B}};
  }
  return {};
}

inline void validate_spec(const ModelSpec& s) {
  auto pos = [](double v, const char* what) {
    if (!(v > 0) || !std::isfinite(v)) throw Error(ErrorCode::InvalidModel, std::string(what) + " must be positive");
  };
  switch (s.kind) {
    case ModelKind::IidTwoLevel:
      pos(s.omega_c, "omega_c");
      pos(s.omega_h, "omega_h");
      break;
    case ModelKind::IsingChain:
      pos(s.J_c, "J_c");
      pos(s.J_h, "J_h");
      break;
    case ModelKind::SpinHalfBath:
      pos(s.omega, "omega");
      if (!(s.angle >= 0 && s.angle <= std::numbers::pi / 2))
        throw Error(ErrorCode::InvalidModel, "angle must lie in [0, pi/2]");
      break;
    case ModelKind::FermiGasWell:
      pos(s.l_c, "l_c");
      pos(s.l_h, "l_h");
      pos(s.mass, "mass");
      break;
  }
}

inline double fermi_e0(const ModelSpec& s, int bath) {
  const double l = bath == 1 ? s.l_c : s.l_h;
  return std::numbers::pi * std::numbers::pi / (2 * s.mass * l * l);
}

inline std::int64_t fermi_levels(const ModelSpec& s, int bath, double lambda) {
  return std::int64_t(std::floor(std::sqrt(s.cutoff / fermi_e0(s, bath)) * lambda));
}

// Smallest cutoff with e^{beta_b (mu_b - E)} < 1e-12 for both baths.
inline double fermi_default_cutoff(const InverseTemperature& theta0) {
  double E = 0;
  for (int b = 0; b < 2; ++b) {
    const double beta = theta0(b), mu = -theta0(2 + b) / beta;
    E = std::max(E, mu + 12 * std::log(10.0) / beta);
  }
  return E * (1 + 1e-12) + 1e-300;
}

// ---------------------------------------------------------------------------
// instantiation

struct ModelInstance {
  ObservableSet obs;
  // phi_lambda / lambda as lambda -> infinity (empty when not available)
  std::function<double(const Eigen::VectorXd&)> phi_density;
};

namespace detail {

inline std::int64_t site_count(double lambda, const char* what) {
  const double r = std::round(lambda);
  if (!(lambda >= 1) || std::abs(lambda - r) > 1e-9 * r)
    throw Error(ErrorCode::InvalidModel, std::string(what) + " needs a positive integer lambda");
  return std::int64_t(r);
}

// One periodic ring of n spins on quantity row `row`: all 2^n configurations, or
// domain-wall classes (w even, multiplicity 2 C(n, w)) beyond the enumeration limit.
inline DiagonalFactor ising_ring(std::int64_t n, double J, int row, int K) {
  DiagonalFactor f;
  if (n <= kIsingEnumerationMax) {
    const std::uint32_t d = std::uint32_t(1) << n, mask = d - 1;
    f.values = Eigen::MatrixXd::Zero(K, d);
    for (std::uint32_t c = 0; c < d; ++c) {
      const std::uint32_t rot = ((c << 1) | (c >> (n - 1))) & mask;
      const int w = std::popcount(c ^ rot);
      f.values(row, c) = -J * double(n - 2 * w);
    }
    return f;
  }
  const std::int64_t classes = n / 2 + 1;
  f.values = Eigen::MatrixXd::Zero(K, classes);
  f.log_mult.resize(classes);
  for (std::int64_t i = 0; i < classes; ++i) {
    const std::int64_t w = 2 * i;
    f.values(row, i) = -J * double(n - 2 * w);
    f.log_mult(i) = std::log(2.0) + log_binomial(double(n), double(w));
  }
  return f;
}

// log(1 + e^{-x}) without overflow
inline double softplus_neg(double x) { return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

inline double log_2cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2 * a));
}

inline double ising_finite_log_z(std::int64_t n, double x) {
  // (2 cosh x)^n + (2 sinh x)^n
  const double t = std::tanh(x);
  return double(n) * log_2cosh(x) + std::log1p(std::pow(t, double(n)));
}

inline Eigen::MatrixXcd spin_site_sum(int n, const Eigen::Matrix2cd& s) {
  const Eigen::Index d = Eigen::Index(1) << n;
  Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(d, d);
  for (int i = 0; i < n; ++i) {
    const Eigen::Index bit = Eigen::Index(1) << i;
    for (Eigen::Index c = 0; c < d; ++c) {
      const int a = (c & bit) ? 1 : 0;
      for (int b = 0; b < 2; ++b) {
        if (s(b, a) == cplx(0)) continue;
        const Eigen::Index r = b == a ? c : (c ^ bit);
        M(r, c) += s(b, a);
      }
    }
  }
  return M;
}

// u-parametrized Fermi integrals: eps = u^2 turns eps^{-1/2} d eps into 2 du.
template <class F>
double fermi_integral(F f, double beta, double gamma, double u_cut) {
  using boost::math::quadrature::gauss_kronrod;
  // beyond beta u^2 + gamma = 60 every integrand is below e^{-60} relative
  const double top = (60 - gamma) / beta;
  double u_max = top > 0 ? std::sqrt(top) : 0.0;
  u_max = std::min(u_max + 1, u_cut);
  const double mu = -gamma / beta;
  std::vector<double> pts{0.0};
  if (mu > 0) {
    const double u0 = std::sqrt(mu), w = 8 / (beta * std::max(u0, 1e-3));
    for (double p : {u0 - w, u0, u0 + w})
      if (p > 0 && p < u_max) pts.push_back(p);
  }
  pts.push_back(u_max);
  double s = 0;
  for (size_t i = 0; i + 1 < pts.size(); ++i)
    if (pts[i + 1] > pts[i]) s += gauss_kronrod<double, 61>::integrate(f, pts[i], pts[i + 1], 10, 1e-13);
  return s;
}

struct FermiBathDensity {
  double phi = 0;
  Eigen::Vector2d eta;      // (energy, number) densities
  Eigen::Matrix2d g;        // covariance densities in (beta, gamma)
};

inline FermiBathDensity fermi_bath_density(double beta, double gamma, double e0, double cutoff) {
  const double pre = 1 / std::sqrt(e0);
  const double u_cut = cutoff > 0 ? std::sqrt(cutoff) : std::numeric_limits<double>::infinity();
  auto occ = [=](double u) {
    const double x = beta * u * u + gamma;
    return x > 0 ? std::exp(-x) / (1 + std::exp(-x)) : 1 / (1 + std::exp(x));
  };
  auto var = [=](double u) {
    const double c = std::cosh(0.5 * (beta * u * u + gamma));
    return 0.25 / (c * c);
  };
  FermiBathDensity d;
  d.phi = pre * fermi_integral([=](double u) { return softplus_neg(beta * u * u + gamma); }, beta, gamma, u_cut);
  d.eta(0) = pre * fermi_integral([=](double u) { return u * u * occ(u); }, beta, gamma, u_cut);
  d.eta(1) = pre * fermi_integral(occ, beta, gamma, u_cut);
  d.g(0, 0) = pre * fermi_integral([=](double u) { return u * u * u * u * var(u); }, beta, gamma, u_cut);
  d.g(0, 1) = d.g(1, 0) = pre * fermi_integral([=](double u) { return u * u * var(u); }, beta, gamma, u_cut);
  d.g(1, 1) = pre * fermi_integral(var, beta, gamma, u_cut);
  return d;
}

struct SpinHalfDensity {
  double phi = 0;
  Eigen::Vector2d grad;
  Eigen::Matrix2d hess;
};

// phi = log 2cosh r, r^2 = t^T A t with A = [[w^2, w c], [w c, 1]], t = (beta, gamma)
inline SpinHalfDensity spin_half_density(double omega, double angle, const Eigen::Vector2d& t) {
  Eigen::Matrix2d A;
  A << omega * omega, omega * std::cos(angle), omega * std::cos(angle), 1.0;
  const double r = std::sqrt(std::max(0.0, t.dot(A * t)));
  SpinHalfDensity d;
  d.phi = log_2cosh(r);
  if (r < 1e-8) {
    // tanh(r)/r -> 1, sech^2 -> 1
    d.grad = (A * t);
    d.hess = A;
    return d;
  }
  const Eigen::Vector2d dr = A * t / r;
  const double th = std::tanh(r), c = std::cosh(r);
  d.grad = th * dr;
  d.hess = dr * dr.transpose() / (c * c) + th * (A - dr * dr.transpose()) / r;
  return d;
}

}  // namespace detail

// Observables at scale lambda in the cheapest exact representation, plus the
// asymptotic free-entropy density.
inline ModelInstance instantiate(const ModelSpec& s, double lambda) {
  validate_spec(s);
  const auto labels = model_labels(s.kind);
  const int K = int(labels.size());
  ModelInstance m;
  switch (s.kind) {
    case ModelKind::IidTwoLevel: {
      const auto n = detail::site_count(lambda, "iid_two_level");
      IidBlock cold{Eigen::MatrixXd::Zero(K, 2), n}, hot{Eigen::MatrixXd::Zero(K, 2), n};
      cold.site(0, 1) = s.omega_c;
      hot.site(1, 1) = s.omega_h;
      m.obs = ObservableSet::make_iid(labels, {cold, hot}, double(n));
      m.phi_density = [s](const Eigen::VectorXd& t) {
        return detail::softplus_neg(t(0) * s.omega_c) + detail::softplus_neg(t(1) * s.omega_h);
      };
      break;
    }
    case ModelKind::IsingChain: {
      const auto n = detail::site_count(lambda, "ising_chain");
      if (n < 2) throw Error(ErrorCode::InvalidModel, "ising ring needs n >= 2");
      m.obs = ObservableSet::make_product(labels, {detail::ising_ring(n, s.J_c, 0, K), detail::ising_ring(n, s.J_h, 1, K)},
                                          double(n));
      m.phi_density = [s](const Eigen::VectorXd& t) {
        return detail::log_2cosh(t(0) * s.J_c) + detail::log_2cosh(t(1) * s.J_h);
      };
      break;
    }
    case ModelKind::SpinHalfBath: {
      const auto n = detail::site_count(lambda, "spin_half_bath");
      if (n > kSpinHalfDenseMax) throw Error(ErrorCode::ScaleTooLarge, "spin_half_bath dense build limited to n <= 12");
      Eigen::Matrix2cd sz, sa;
      sz << 1, 0, 0, -1;
      sa << std::cos(s.angle), std::sin(s.angle), std::sin(s.angle), -std::cos(s.angle);
      m.obs = ObservableSet::make_dense(labels, {s.omega * detail::spin_site_sum(int(n), sz),
                                                 detail::spin_site_sum(int(n), sa)},
                                        double(n));
      m.phi_density = [s](const Eigen::VectorXd& t) {
        return detail::spin_half_density(s.omega, s.angle, Eigen::Vector2d(t(0), t(1))).phi;
      };
      break;
    }
    case ModelKind::FermiGasWell: {
      if (!(s.cutoff > 0)) throw Error(ErrorCode::InvalidModel, "fermi_gas_well needs a positive cutoff energy");
      if (!(lambda > 0)) throw Error(ErrorCode::InvalidModel, "lambda must be positive");
      std::vector<DiagonalFactor> factors;
      for (int b = 1; b <= 2; ++b) {
        const auto L = fermi_levels(s, b, lambda);
        if (L < 1) throw Error(ErrorCode::InvalidModel, "no level below the cutoff");
        if (L > (std::int64_t(1) << 22)) throw Error(ErrorCode::ScaleTooLarge, "too many fermion levels");
        const double e0 = fermi_e0(s, b);
        for (std::int64_t i = 1; i <= L; ++i) {
          DiagonalFactor f;
          f.values = Eigen::MatrixXd::Zero(K, 2);
          f.values(b - 1, 1) = e0 * double(i) * double(i) / (lambda * lambda);
          f.values(1 + b, 1) = 1;
          factors.push_back(std::move(f));
        }
      }
      m.obs = ObservableSet::make_product(labels, std::move(factors), lambda);
      m.phi_density = [s](const Eigen::VectorXd& t) {
        return detail::fermi_bath_density(t(0), t(2), fermi_e0(s, 1), s.cutoff).phi +
               detail::fermi_bath_density(t(1), t(3), fermi_e0(s, 2), s.cutoff).phi;
      };
      break;
    }
  }
  return m;
}

// Exact derivatives of the asymptotic density: (eta density, g).
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> analytic_derivatives(const ModelSpec& s,
                                                                         const InverseTemperature& t) {
  validate_spec(s);
  const int K = int(model_labels(s.kind).size());
  if (t.size() != K) throw Error(ErrorCode::DimensionMismatch, "theta size differs from the model's K");
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(K, K);
  switch (s.kind) {
    case ModelKind::IidTwoLevel: {
      const double w[2] = {s.omega_c, s.omega_h};
      for (int b = 0; b < 2; ++b) {
        const double x = t(b) * w[b];
        const double q = x > 0 ? std::exp(-x) / (1 + std::exp(-x)) : 1 / (1 + std::exp(x));
        eta(b) = w[b] * q;
        g(b, b) = w[b] * w[b] * q * (1 - q);
      }
      break;
    }
    case ModelKind::IsingChain: {
      const double J[2] = {s.J_c, s.J_h};
      for (int b = 0; b < 2; ++b) {
        const double c = std::cosh(t(b) * J[b]);
        eta(b) = -J[b] * std::tanh(t(b) * J[b]);
        g(b, b) = J[b] * J[b] / (c * c);
      }
      break;
    }
    case ModelKind::SpinHalfBath: {
      const auto d = detail::spin_half_density(s.omega, s.angle, Eigen::Vector2d(t(0), t(1)));
      eta = -d.grad;
      g = d.hess;
      break;
    }
    case ModelKind::FermiGasWell: {
      for (int b = 0; b < 2; ++b) {
        const auto d = detail::fermi_bath_density(t(b), t(2 + b), fermi_e0(s, b + 1), s.cutoff);
        const int idx[2] = {b, 2 + b};
        for (int i = 0; i < 2; ++i) {
          eta(idx[i]) = d.eta(i);
          for (int j = 0; j < 2; ++j) g(idx[i], idx[j]) = d.g(i, j);
        }
      }
      break;
    }
  }
  return {eta, g};
}

enum class DensityMode { Analytic, Numeric };

// Analytic: exact model derivatives. Numeric: g = J(theta0; lambda_ref)/lambda_ref,
// optionally Richardson-extrapolated with 2 lambda_ref.
inline AsymptoticDensities estimate_densities(const ModelSpec& s, const InverseTemperature& theta0, double lambda_ref,
                                              DensityMode mode, bool richardson = false) {
  const auto labels = model_labels(s.kind);
  ModelSpec spec = s;
  if (spec.kind == ModelKind::FermiGasWell && !(spec.cutoff > 0)) spec.cutoff = fermi_default_cutoff(theta0);
  if (mode == DensityMode::Analytic) {
    auto d = densities_from_g(labels, analytic_derivatives(spec, theta0).second, "analytic");
    d.phi_density = instantiate(spec, spec.kind == ModelKind::FermiGasWell ? 1.0 : 2.0).phi_density;
    d.eta_density = [spec](const Eigen::VectorXd& t) -> Eigen::VectorXd { return analytic_derivatives(spec, t).first; };
    return d;
  }
  auto per_unit = [&](double lam) {
    const auto m = instantiate(spec, lam);
    return Eigen::MatrixXd(thermo_stats(m.obs, theta0).J / m.obs.scale);
  };
  Eigen::MatrixXd g = per_unit(lambda_ref);
  if (richardson) g = 2 * per_unit(2 * lambda_ref) - g;
  auto d = densities_from_g(labels, g, "numeric", lambda_ref);
  d.phi_density = [spec, lambda_ref](const Eigen::VectorXd& t) {
    const auto m = instantiate(spec, lambda_ref);
    return thermo_stats(m.obs, t).phi / m.obs.scale;
  };
  d.eta_density = [spec, lambda_ref](const Eigen::VectorXd& t) -> Eigen::VectorXd {
    const auto m = instantiate(spec, lambda_ref);
    return thermo_stats(m.obs, t).eta / m.obs.scale;
  };
  return d;
}

// Finite-size exact free entropy where a closed form exists (Ising transfer matrix).
inline double ising_transfer_phi(const ModelSpec& s, std::int64_t n, const InverseTemperature& t) {
  if (s.kind != ModelKind::IsingChain) throw Error(ErrorCode::NoClosedForm, "transfer matrix is for ising_chain");
  return detail::ising_finite_log_z(n, t(0) * s.J_c) + detail::ising_finite_log_z(n, t(1) * s.J_h);
}

// ---------------------------------------------------------------------------
// closed-form references

struct SommerfeldValues {
  double sigma2_H = 0, sigma2_N = 0, V_HN = 0;
  bool valid = false;  // beta mu >= 20
};

struct ReferenceValues {
  std::optional<double> C;  // the model's single closed-form second-order coefficient
  std::string C_name;       // which coefficient C refers to (C_AA or C_BB11)
  Eigen::MatrixXd g;        // closed-form asymptotic Fisher density
  std::optional<double> resonance_limit;
  std::optional<std::array<double, 2>> ising_coupling_residual;
  std::optional<std::array<SommerfeldValues, 2>> sommerfeld;
};

inline double ising_coupling_equation(double x) { return 2 * x * std::sinh(2 * x) - std::cosh(2 * x) - 1; }

inline SommerfeldValues sommerfeld(double beta, double mu, double e0) {
  SommerfeldValues v;
  const double pre = 1 / (2 * std::sqrt(e0)), pi2 = std::numbers::pi * std::numbers::pi;
  const double bm2 = beta * beta * mu * mu, b3 = beta * beta * beta;
  v.sigma2_H = pre * (8 * bm2 + pi2) / (8 * b3 * std::sqrt(mu));
  v.sigma2_N = pre * (8 * bm2 + pi2) / (8 * b3 * std::pow(mu, 2.5));
  v.V_HN = pre * (24 * bm2 - pi2) / (24 * b3 * std::pow(mu, 1.5));
  v.valid = beta * mu >= 20;
  return v;
}

inline double spin_half_closed_form(double beta, double gamma, double omega, double angle) {
  const double r2 = beta * beta * omega * omega + gamma * gamma + 2 * gamma * beta * omega * std::cos(angle);
  const double r = std::sqrt(r2), s = std::sin(angle);
  return r2 * r / (2 * beta * beta * beta * omega * omega * s * s * std::tanh(r));
}

inline ReferenceValues analytic_reference(const ModelSpec& s, const InverseTemperature& t) {
  validate_spec(s);
  ReferenceValues r;
  switch (s.kind) {
    case ModelKind::IidTwoLevel: {
      r.g = analytic_derivatives(s, t).second;
      const double bc = t(0), bh = t(1);
      r.C = bh * bh / (2 * r.g(0, 0) * bc * bc * bc) + 1 / (2 * r.g(1, 1) * bc);
      r.C_name = "C_AA";
      break;
    }
    case ModelKind::IsingChain: {
      r.g = analytic_derivatives(s, t).second;
      const double bc = t(0), bh = t(1);
      const double cc = std::cosh(bc * s.J_c), ch = std::cosh(bh * s.J_h);
      r.C = bh * bh * cc * cc / (2 * bc * bc * bc * s.J_c * s.J_c) + ch * ch / (2 * bc * s.J_h * s.J_h);
      r.C_name = "C_AA";
      r.ising_coupling_residual = std::array<double, 2>{ising_coupling_equation(bc * s.J_c),
                                                       ising_coupling_equation(bh * s.J_h)};
      break;
    }
    case ModelKind::SpinHalfBath: {
      r.g = analytic_derivatives(s, t).second;
      if (std::sin(s.angle) == 0) throw Error(ErrorCode::NoClosedForm, "angle 0 makes the charges collinear");
      r.C = spin_half_closed_form(t(0), t(1), s.omega, s.angle);
      r.C_name = "C_BB11";
      r.resonance_limit = 1 / (2 * t(0));
      break;
    }
    case ModelKind::FermiGasWell: {
      std::array<SommerfeldValues, 2> v;
      for (int b = 0; b < 2; ++b) {
        const double beta = t(b), mu = -t(2 + b) / beta;
        if (!(mu > 0)) throw Error(ErrorCode::NoClosedForm, "Sommerfeld expansion needs mu > 0");
        v[size_t(b)] = sommerfeld(beta, mu, fermi_e0(s, b + 1));
      }
      r.sommerfeld = v;
      r.g = Eigen::MatrixXd::Zero(4, 4);
      for (int b = 0; b < 2; ++b) {
        // (beta, gamma) covariance: Var H, Cov(H, N), Var N
        r.g(b, b) = v[size_t(b)].sigma2_H;
        r.g(b, 2 + b) = r.g(2 + b, b) = v[size_t(b)].V_HN;
        r.g(2 + b, 2 + b) = v[size_t(b)].sigma2_N;
      }
      break;
    }
  }
  return r;
}

}  // namespace fbe
