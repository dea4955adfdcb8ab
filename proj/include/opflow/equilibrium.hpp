#pragma once

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "opflow/dynamics.hpp"
#include "opflow/error.hpp"
#include "opflow/graph.hpp"
#include "opflow/models.hpp"
#include "opflow/parallel.hpp"
#include "opflow/random.hpp"

namespace opflow {

struct SolverConfig {
  double tol = 1e-12;            // relative to the magnitude of the terms of F
  int max_iter = 100;
  double armijo = 1e-4;
  int max_halvings = 30;
  std::size_t starts = 100;      // multistart count
  std::uint64_t seed = 0;        // multistart sampling seed
  bool flow_fallback = true;     // take gradient-flow steps when the line search stalls

  void validate() const {
    detail::require(tol > 0.0, "solver tol must be positive");
    detail::require(max_iter >= 1, "max_iter must be >= 1");
    detail::require(starts >= 1, "starts must be >= 1");
  }
};

struct EquilibriumCertificate {
  Vector x_star;
  double residual = std::numeric_limits<double>::quiet_NaN();        // ||F(x*)||_inf
  double residual_scale = 1.0;   // magnitude of the terms of F at x*
  int iterations = 0;
  double jac_min_eig = std::numeric_limits<double>::quiet_NaN();
  bool m_matrix_ok = false;
  bool degenerate = false;       // zero eigenvalue: consensus family, no isolated root
  bool certificates_agree = true;
  std::optional<bool> nash_ok;
  double multistart_agreement = 0.0;
  std::size_t starts = 0;

  bool converged(double tol) const { return residual <= tol * residual_scale; }
};

// ---------------------------------------------------------------------------
// NFJ steady-state map

/// F_i = d_i x_i - sum_j M_ij x_j + s_i (x_i^p - u_i) x_i, so that F = 0 iff
/// the NFJ field vanishes. Pinned rows read x_i - u_i^(1/p).
inline Vector f_map(const Network& net, const NfjParams& params, const Vector& x) {
  detail::require_size(net, x);
  detail::require_positive(x);
  Vector f = net.degrees().cwiseProduct(x) - net.sparse() * x;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (params.is_pinned(i)) {
      f(k) = x(k) - params.target(i);
    } else {
      f(k) += params.sigma(k) * (std::pow(x(k), params.p) - params.u(k)) * x(k);
    }
  }
  return f;
}

/// Largest absolute term entering any component of F at x (at least 1).
inline double f_map_scale(const Network& net, const NfjParams& params, const Vector& x) {
  const Vector mx = net.sparse() * x.cwiseAbs();
  double scale = 1.0;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double xi = std::abs(x(k));
    double s = net.degrees()(k) * xi + mx(k);
    s += params.sigma_at(i) * (std::pow(xi, params.p) + params.u(k)) * xi;
    scale = std::max(scale, s);
  }
  return scale;
}

/// D_x F = G - M with G = diag(d_i + s_i((p+1) x_i^p - u_i)). Pinned rows are
/// unit rows.
inline Matrix jacobian_nfj(const Network& net, const NfjParams& params, const Vector& x) {
  detail::require_size(net, x);
  Matrix j = -net.weights();
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (params.is_pinned(i)) {
      j.row(k).setZero();
      j(k, k) = 1.0;
    } else {
      j(k, k) += net.degrees()(k) +
                 params.sigma(k) * ((params.p + 1.0) * std::pow(x(k), params.p) - params.u(k));
    }
  }
  return j;
}

inline std::vector<Eigen::Index> free_indices(const NfjParams& params, std::size_t n) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (!params.is_pinned(i)) idx.push_back(static_cast<Eigen::Index>(i));
  }
  return idx;
}

/// Default Newton start: x_i = clamp(u_i, min u, max u)^(1/p), inside the
/// box that contains the root.
inline Vector default_start(const NfjParams& params) {
  const double lo = params.u.minCoeff();
  const double hi = params.u.maxCoeff();
  Vector x(params.u.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x(i) = std::pow(std::clamp(params.u(i), lo, hi), 1.0 / params.p);
  }
  return x;
}

namespace detail {

// Unpivoted elimination. Pivot k equals det(J_k) / det(J_{k-1}), so all
// leading principal minors are positive iff every pivot is.
inline bool leading_minors_positive(Matrix a, double threshold) {
  const Eigen::Index n = a.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    const double pivot = a(k, k);
    if (!(pivot > threshold)) return false;
    if (k + 1 < n) {
      a.block(k + 1, k + 1, n - k - 1, n - k - 1) -=
          a.block(k + 1, k, n - k - 1, 1) * a.block(k, k + 1, 1, n - k - 1) / pivot;
    }
  }
  return true;
}

inline bool is_z_matrix(const Matrix& a) {
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (i != j && a(i, j) > 0.0) return false;
    }
  }
  return true;
}

inline Matrix submatrix(const Matrix& a, const std::vector<Eigen::Index>& idx) {
  return a(idx, idx);
}

inline Vector subvector(const Vector& v, const std::vector<Eigen::Index>& idx) { return v(idx); }

inline void scatter(Vector& dst, const std::vector<Eigen::Index>& idx, const Vector& src) {
  for (std::size_t k = 0; k < idx.size(); ++k) dst(idx[k]) = src(static_cast<Eigen::Index>(k));
}

// Short stretch of the gradient flow, used to leave a region where the
// Newton line search stalls.
inline Vector flow_nudge(const Network& net, const NfjParams& params, const Vector& x) {
  IntegratorConfig cfg;
  const double rho = jacobian_radius_bound(net, Model{params}, invariant_box(Model{params}, x));
  cfg.dt = rho > 0.0 ? 1.0 / rho : 0.1;
  cfg.t_end = 50.0 * cfg.dt;
  cfg.stop_tol = 1e-300;
  cfg.record_stride = 1000;
  cfg.method = Method::rk4_adaptive;
  return integrate(net, Model{params}, x, cfg).final_state();
}

}  // namespace detail

/// Damped Newton iteration restricted to the free (unpinned) agents.
///
/// The iteration works on H_i = F_i / x_i, which has the same positive roots
/// as F but no zeros on the boundary of the orthant; its Newton step solves
/// (J - diag(F_i / x_i)) dx = -F. The step fraction is halved (at most
/// cfg.max_halvings times) until the iterate stays strictly positive and
/// ||H||^2 satisfies the Armijo decrease with constant cfg.armijo. Succeeds
/// once ||F||_inf <= cfg.tol * f_map_scale.
inline EquilibriumCertificate newton_solve(const Network& net, const NfjParams& params,
                                           std::optional<Vector> x0,
                                           const SolverConfig& cfg = {}) {
  cfg.validate();
  params.validate(net.size());
  Vector x = x0 ? *x0 : default_start(params);
  detail::require_size(net, x);
  detail::require_positive(x);
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (params.is_pinned(i)) x(static_cast<Eigen::Index>(i)) = params.target(i);
  }
  const auto idx = free_indices(params, net.size());

  EquilibriumCertificate cert;
  auto residual_of = [&](const Vector& f) {
    return idx.empty() ? 0.0 : detail::subvector(f, idx).lpNorm<Eigen::Infinity>();
  };
  auto merit_of = [&](const Vector& f, const Vector& at) {
    return idx.empty() ? 0.0
                       : detail::subvector(f, idx)
                             .cwiseQuotient(detail::subvector(at, idx))
                             .squaredNorm();
  };
  auto step_matrix = [&](const Vector& f, const Vector& at) {
    Matrix jr = detail::submatrix(jacobian_nfj(net, params, at), idx);
    jr.diagonal() -= detail::subvector(f, idx).cwiseQuotient(detail::subvector(at, idx));
    return jr;
  };

  Vector f = f_map(net, params, x);
  for (int iter = 0;; ++iter) {
    cert.iterations = iter;
    const double res = residual_of(f);
    const double scale = f_map_scale(net, params, x);
    if (res <= cfg.tol * scale) {
      // One polishing step, kept only if it lowers the residual.
      if (!idx.empty() && res > 0.0) {
        Eigen::PartialPivLU<Matrix> lu(step_matrix(f, x));
        Vector xt = x;
        detail::scatter(xt, idx, detail::subvector(x, idx) + lu.solve(-detail::subvector(f, idx)));
        if (detail::strictly_positive(xt)) {
          const Vector ft = f_map(net, params, xt);
          if (residual_of(ft) < res) {
            x = xt;
            f = ft;
          }
        }
      }
      cert.x_star = x;
      cert.residual = residual_of(f);
      cert.residual_scale = f_map_scale(net, params, x);
      return cert;
    }
    if (iter >= cfg.max_iter) {
      throw Error(Errc::max_iter_exceeded,
                  "Newton did not reach the residual target in " + std::to_string(cfg.max_iter) +
                      " iterations",
                  static_cast<std::size_t>(iter), res);
    }

    Eigen::PartialPivLU<Matrix> lu(step_matrix(f, x));
    bool stepped = false;
    if (lu.rcond() > 1e-14) {
      const Vector dx = lu.solve(-detail::subvector(f, idx));
      const double merit = merit_of(f, x);
      double t = 1.0;
      for (int h = 0; h <= cfg.max_halvings; ++h, t *= 0.5) {
        Vector xt = x;
        detail::scatter(xt, idx, detail::subvector(x, idx) + t * dx);
        if (!detail::strictly_positive(xt)) continue;
        Vector ft = f_map(net, params, xt);
        if (merit_of(ft, xt) <= (1.0 - 2.0 * cfg.armijo * t) * merit) {
          x = std::move(xt);
          f = std::move(ft);
          stepped = true;
          break;
        }
      }
    } else if (!cfg.flow_fallback) {
      throw Error(Errc::singular_jacobian, "Jacobian is numerically singular at a positive iterate",
                  static_cast<std::size_t>(iter), lu.rcond());
    }
    if (!stepped) {
      if (!cfg.flow_fallback) {
        throw Error(Errc::line_search_failed, "no acceptable Newton step fraction",
                    static_cast<std::size_t>(iter), res);
      }
      x = detail::flow_nudge(net, params, x);
      f = f_map(net, params, x);
    }
  }
}

/// Spectral and M-matrix certificates of the reduced Jacobian at x_star.
inline EquilibriumCertificate certify(const Network& net, const NfjParams& params,
                                      const Vector& x_star) {
  EquilibriumCertificate cert;
  cert.x_star = x_star;
  const Vector f = f_map(net, params, x_star);
  const auto idx = free_indices(params, net.size());
  cert.residual = idx.empty() ? 0.0 : detail::subvector(f, idx).lpNorm<Eigen::Infinity>();
  cert.residual_scale = f_map_scale(net, params, x_star);
  if (idx.empty()) {
    cert.jac_min_eig = 1.0;
    cert.m_matrix_ok = true;
    return cert;
  }
  const Matrix j = detail::submatrix(jacobian_nfj(net, params, x_star), idx);
  const double norm = std::max(1.0, j.cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(j, Eigen::EigenvaluesOnly);
  cert.jac_min_eig = eig.eigenvalues()(0);
  const double threshold = 1e-12 * norm;
  cert.m_matrix_ok = detail::is_z_matrix(j) && detail::leading_minors_positive(j, threshold);
  cert.degenerate = std::abs(cert.jac_min_eig) <= 1e-9 * norm;
  cert.certificates_agree = cert.m_matrix_ok == (cert.jac_min_eig > threshold);
  return cert;
}

/// Solves from cfg.starts initial points and measures how far apart the
/// roots are. Start 0 is the default start; the others are drawn
/// coordinatewise log-uniformly from [min u, max u]^(1/p). Throws
/// DistinctRoots when two roots differ by more than 1e-6 * ||x*||_inf.
inline EquilibriumCertificate multistart_uniqueness(const Network& net, const NfjParams& params,
                                                    const SolverConfig& cfg = {}) {
  cfg.validate();
  params.validate(net.size());
  const double lo = std::pow(params.u.minCoeff(), 1.0 / params.p);
  const double hi = std::pow(params.u.maxCoeff(), 1.0 / params.p);
  const Rng base(cfg.seed);
  std::vector<Vector> roots(cfg.starts);
  std::vector<EquilibriumCertificate> certs(cfg.starts);
  parallel_for(cfg.starts, [&](std::size_t k) {
    std::optional<Vector> start;
    if (k > 0) {
      Rng rng = base.split(k);
      Vector x(static_cast<Eigen::Index>(net.size()));
      for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = lo == hi ? lo : rng.log_uniform(lo, hi);
      start = std::move(x);
    }
    certs[k] = newton_solve(net, params, start, cfg);
  });
  EquilibriumCertificate cert = certs.front();
  cert.starts = cfg.starts;
  double agreement = 0.0;
  for (Eigen::Index i = 0; i < cert.x_star.size(); ++i) {
    double mn = cert.x_star(i), mx = cert.x_star(i);
    for (const auto& c : certs) {
      mn = std::min(mn, c.x_star(i));
      mx = std::max(mx, c.x_star(i));
    }
    agreement = std::max(agreement, mx - mn);
  }
  cert.multistart_agreement = agreement;
  if (agreement > 1e-6 * cert.x_star.lpNorm<Eigen::Infinity>()) {
    throw Error(Errc::distinct_roots, "multistart found distinct roots", std::nullopt, agreement);
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Nash verification

struct NashReport {
  bool ok = true;
  std::optional<std::size_t> agent;  // first violating agent
  double candidate = 0.0;            // profitable deviation (or the probed point)
  double gain = 0.0;                 // payout decrease achieved by the deviation
  double max_gradient = 0.0;         // largest |dp_i/dx_i| / scale over agents
};

namespace detail {

// Magnitude of the terms in dp_i/dx_i, used to make the stationarity check
// relative.
inline double payout_gradient_scale(const Network& net, const Model& model, const Vector& x,
                                    std::size_t i) {
  const auto k = static_cast<Eigen::Index>(i);
  double coupling = 0.0;
  for (SparseMatrix::InnerIterator it(net.sparse(), k); it; ++it) {
    coupling += it.value() * (std::abs(x(k)) + std::abs(x(it.col())));
  }
  const double xi = std::abs(x(k));
  double own = std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, NfjParams>) {
          return m.sigma_at(i) * (std::pow(xi, m.p + 1.0) + m.u(k) * xi);
        } else if constexpr (std::is_same_v<T, TaylorParams>) {
          coupling *= m.lambda(k) / net.degrees()(k);
          return (1.0 - m.lambda(k)) * (xi + m.u(k));
        } else if constexpr (std::is_same_v<T, LinearFjParams>) {
          return m.sigma(k) * (xi + m.u(k));
        } else {
          if (m.coupling == Coupling::normalized) coupling /= net.degrees()(k);
          return 0.0;
        }
      },
      model);
  return std::max(1.0, coupling + own);
}

}  // namespace detail

/// For every free agent i, compares p_i at x_star with p_i at `grid` evenly
/// spaced unilateral deviations in [lo, hi], and checks that the central
/// difference of p_i in x_i (step 1e-5 max(1, |x_i|)) vanishes to 1e-8
/// relative to the magnitude of its terms.
inline NashReport check_nash(const Network& net, const Model& model, const Vector& x_star,
                             std::size_t grid, double lo, double hi) {
  detail::require(grid >= 2, "Nash grid needs at least two points");
  detail::require(lo < hi, "Nash grid needs lo < hi");
  const auto* nfj = std::get_if<NfjParams>(&model);
  NashReport report;
  Vector x = x_star;
  for (std::size_t i = 0; i < net.size(); ++i) {
    if (nfj && nfj->is_pinned(i)) continue;
    const auto k = static_cast<Eigen::Index>(i);
    const double xi = x_star(k);
    const double at_star = payout(net, model, x_star, i);
    const double slack = 1e-9 * std::max(1.0, std::abs(at_star));
    for (std::size_t g = 0; g < grid; ++g) {
      const double r = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid - 1);
      x(k) = r;
      const double value = payout(net, model, x, i);
      if (value + slack < at_star) {
        if (report.ok || at_star - value > report.gain) {
          if (report.ok) report.agent = i;
          report.ok = false;
          if (report.agent == i) {
            report.candidate = r;
            report.gain = at_star - value;
          }
        }
      }
    }
    const double h = 1e-5 * std::max(1.0, std::abs(xi));
    x(k) = xi + h;
    const double up = payout(net, model, x, i);
    x(k) = xi - h;
    const double down = payout(net, model, x, i);
    x(k) = xi;
    const double grad = (up - down) / (2.0 * h);
    const double rel = std::abs(grad) / detail::payout_gradient_scale(net, model, x_star, i);
    report.max_gradient = std::max(report.max_gradient, rel);
    if (rel > 1e-8 && report.ok) {
      report.ok = false;
      report.agent = i;
      report.candidate = grad < 0.0 ? xi + h : xi - h;
      report.gain = std::abs(grad) * h;
    }
  }
  return report;
}

/// Grid bounds [c_-^(1/p) / 2, 2 c_+^(1/p)] with c_-/c_+ the extremes of
/// x*^p and u.
inline std::pair<double, double> nash_grid_bounds(const NfjParams& params, const Vector& x_star) {
  const Vector xp = x_star.array().pow(params.p).matrix();
  const double c_minus = std::min(xp.minCoeff(), params.u.minCoeff());
  const double c_plus = std::max(xp.maxCoeff(), params.u.maxCoeff());
  return {0.5 * std::pow(c_minus, 1.0 / params.p), 2.0 * std::pow(c_plus, 1.0 / params.p)};
}

inline NashReport check_nash(const Network& net, const NfjParams& params, const Vector& x_star,
                             std::size_t grid) {
  const auto [lo, hi] = nash_grid_bounds(params, x_star);
  return check_nash(net, Model{params}, x_star, grid, lo, hi);
}

/// True when x_star is a Nash equilibrium of the NFJ payouts; throws
/// NashViolation naming the agent and its profitable deviation otherwise.
inline bool verify_nash(const Network& net, const NfjParams& params, const Vector& x_star,
                        std::size_t grid = 1001) {
  const NashReport report = check_nash(net, params, x_star, grid);
  if (!report.ok) {
    throw Error(Errc::nash_violation,
                "agent " + std::to_string(*report.agent) + " gains by deviating",
                report.agent, report.candidate);
  }
  return true;
}

// ---------------------------------------------------------------------------
// Linear models

/// F(x) = x - Lambda A x - (I - Lambda) u, whose Jacobian is I - Lambda A.
inline Vector taylor_f_map(const Network& net, const TaylorParams& params, const Vector& x) {
  return -vector_field_taylor(net, params, x);
}

inline Matrix taylor_jacobian(const Network& net, const TaylorParams& params) {
  Matrix j = -(params.lambda.asDiagonal() * normalized_adjacency(net));
  j.diagonal().array() += 1.0;
  return j;
}

/// x* = (I - Lambda A)^-1 (I - Lambda) u by dense LU.
inline Vector taylor_equilibrium(const Network& net, const TaylorParams& params) {
  params.validate(net.size());
  if (!params.well_posed()) {
    throw Error(Errc::singular_system, "all lambda_i = 1: steady states form the consensus family");
  }
  const Matrix j = taylor_jacobian(net, params);
  Eigen::PartialPivLU<Matrix> lu(j);
  if (!(lu.rcond() > 1e-13)) {
    throw Error(Errc::singular_system, "I - Lambda A is singular", std::nullopt, lu.rcond());
  }
  const Vector rhs = ((1.0 - params.lambda.array()) * params.u.array()).matrix();
  return lu.solve(rhs);
}

/// Smallest eigenvalue (real part) of I - Lambda A. When every lambda_i > 0
/// the matrix is similar to I - S M S with S = diag(sqrt(lambda_i / d_i)),
/// which is symmetric.
inline double taylor_jacobian_check(const Network& net, const TaylorParams& params) {
  params.validate(net.size());
  detail::require_no_isolated(net);
  if ((params.lambda.array() > 0.0).all()) {
    const Vector s = (params.lambda.array() / net.degrees().array()).sqrt().matrix();
    Matrix sym = -(s.asDiagonal() * net.weights() * s.asDiagonal());
    sym.diagonal().array() += 1.0;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
    return eig.eigenvalues()(0);
  }
  Eigen::EigenSolver<Matrix> eig(taylor_jacobian(net, params), false);
  return eig.eigenvalues().real().minCoeff();
}

/// Steady state of the linear-stubbornness model: (L + diag sigma) x = sigma u.
inline Vector linear_fj_equilibrium(const Network& net, const LinearFjParams& params) {
  params.validate(net.size());
  Matrix j = laplacian(net);
  j.diagonal() += params.sigma;
  Eigen::PartialPivLU<Matrix> lu(j);
  if (!(lu.rcond() > 1e-13)) {
    throw Error(Errc::singular_system, "L + diag(sigma) is singular", std::nullopt, lu.rcond());
  }
  return lu.solve(params.sigma.cwiseProduct(params.u));
}

// ---------------------------------------------------------------------------
// Local stability probe

struct DecayProbe {
  double measured = 0.0;   // fitted decay rate of ||x(t) - x*||
  double predicted = 0.0;  // smallest eigenvalue of the reduced Jacobian
};

/// Integrates from x* + eps v (v a seeded random unit vector on the free
/// agents) and fits the exponential decay of ||x(t) - x*||_2 over the window
/// [1e-7 eps, 1e-3 eps].
inline DecayProbe perturbation_decay_rate(const Network& net, const NfjParams& params,
                                          const Vector& x_star, double eps, std::uint64_t seed,
                                          double dt = 0.01) {
  const EquilibriumCertificate cert = certify(net, params, x_star);
  detail::require(cert.jac_min_eig > 0.0, "decay probe needs a nondegenerate equilibrium");
  Rng rng(seed);
  Vector v = Vector::Zero(x_star.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!params.is_pinned(static_cast<std::size_t>(i))) v(i) = rng.uniform(-1.0, 1.0);
  }
  v.normalize();
  Vector x0 = x_star + eps * v;
  IntegratorConfig cfg;
  cfg.dt = dt;
  cfg.t_end = 25.0 / cert.jac_min_eig;
  cfg.stop_tol = 1e-300;
  const Trajectory traj = integrate(net, Model{params}, x0, cfg);
  std::vector<double> dist(traj.samples());
  for (std::size_t s = 0; s < traj.samples(); ++s) dist[s] = (traj.states[s] - x_star).norm();
  return {log_decay_rate(traj.times, dist, 1e-7 * eps, 1e-3 * eps), cert.jac_min_eig};
}

}  // namespace opflow
