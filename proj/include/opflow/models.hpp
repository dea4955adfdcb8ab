#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "opflow/error.hpp"
#include "opflow/graph.hpp"

// Opinion models on a Network:
//
//   Abelson / DeGroot   x_i' = sum_j A_ij (x_j - x_i)               (A = D^-1 M)
//   Taylor / FJ         x_i' = l_i sum_j A_ij (x_j - x_i) + (1 - l_i)(u_i - x_i)
//   NFJ                 x_i' = sum_j M_ij (x_j - x_i) + s_i (u_i - x_i^p) x_i
//   linear FJ           x_i' = sum_j M_ij (x_j - x_i) + s_i (u_i - x_i)
//
// together with their per-agent payouts, discrete update protocols and
// Lyapunov energies. Every function here is a pure evaluation.

namespace opflow {

/// Convictions u, stubbornness sigma and exponent p of the nonlinear model.
/// `pinned[i]` encodes sigma_i = infinity: the agent sits at u_i^(1/p) and
/// its sigma entry is ignored. An empty `pinned` means no agent is pinned.
struct NfjParams {
  Vector u;
  Vector sigma;
  std::vector<bool> pinned;
  double p = 1.0;

  bool is_pinned(std::size_t i) const { return !pinned.empty() && pinned[i]; }
  bool any_pinned() const {
    for (bool b : pinned) {
      if (b) return true;
    }
    return false;
  }
  double target(std::size_t i) const { return std::pow(u(static_cast<Eigen::Index>(i)), 1.0 / p); }
  double sigma_at(std::size_t i) const {
    return is_pinned(i) ? 0.0 : sigma(static_cast<Eigen::Index>(i));
  }

  void validate(std::size_t n) const {
    detail::require(static_cast<std::size_t>(u.size()) == n, "u must have one entry per node");
    detail::require(static_cast<std::size_t>(sigma.size()) == n,
                    "sigma must have one entry per node");
    detail::require(pinned.empty() || pinned.size() == n, "pinned must be empty or length n");
    detail::require(std::isfinite(p) && p > 0.0, "p must be positive");
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      detail::require(std::isfinite(u(i)) && u(i) > 0.0, "convictions u must be positive");
      if (!is_pinned(static_cast<std::size_t>(i))) {
        detail::require(std::isfinite(sigma(i)) && sigma(i) >= 0.0,
                        "stubbornness sigma must be nonnegative");
      }
    }
  }
};

/// Susceptibility lambda in [0, 1] and anchors u of the Taylor/FJ model.
/// Anchors may be zero (the positive-sector requirement applies to states).
struct TaylorParams {
  Vector lambda;
  Vector u;

  void validate(std::size_t n) const {
    detail::require(static_cast<std::size_t>(lambda.size()) == n,
                    "lambda must have one entry per node");
    detail::require(static_cast<std::size_t>(u.size()) == n, "u must have one entry per node");
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      detail::require(lambda(i) >= 0.0 && lambda(i) <= 1.0, "lambda must lie in [0, 1]");
      detail::require(std::isfinite(u(i)) && u(i) >= 0.0, "anchors u must be nonnegative");
    }
  }

  /// False when every lambda_i == 1 (no stubborn agent, consensus family).
  bool well_posed() const { return (lambda.array() < 1.0).any(); }
};

/// Linear stubbornness on the raw coupling M (the linear comparison model of
/// the FJ-vs-NFJ experiments).
struct LinearFjParams {
  Vector u;
  Vector sigma;

  void validate(std::size_t n) const {
    detail::require(static_cast<std::size_t>(u.size()) == n, "u must have one entry per node");
    detail::require(static_cast<std::size_t>(sigma.size()) == n,
                    "sigma must have one entry per node");
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      detail::require(std::isfinite(u(i)) && u(i) >= 0.0, "u must be nonnegative");
      detail::require(std::isfinite(sigma(i)) && sigma(i) >= 0.0, "sigma must be nonnegative");
    }
  }
};

enum class Coupling { normalized, raw };

/// Abelson consensus flow; `raw` runs the Laplacian flow on M itself, which is
/// the symmetric-coupling variant.
struct AbelsonParams {
  Coupling coupling = Coupling::normalized;
};

using Model = std::variant<AbelsonParams, TaylorParams, NfjParams, LinearFjParams>;

inline std::string model_name(const Model& m) {
  switch (m.index()) {
    case 0: return "abelson";
    case 1: return "taylor";
    case 2: return "nfj";
    default: return "fj";
  }
}

namespace detail {

inline void require_size(const Network& net, const Vector& x) {
  require(static_cast<std::size_t>(x.size()) == net.size(), "state has wrong length");
}

inline void require_positive(const Vector& x) {
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!(x(i) > 0.0)) {
      throw Error(Errc::nonpositive_state, "opinion left the positive sector",
                  static_cast<std::size_t>(i), x(i));
    }
  }
}

inline void require_no_isolated(const Network& net) {
  const auto& d = net.degrees();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d(i) > 0.0)) {
      throw Error(Errc::isolated_node, "node has no neighbor with positive weight",
                  static_cast<std::size_t>(i));
    }
  }
}

// sum_j M_ij (x_j - x_i) for every i, i.e. -(D_M - M) x.
inline Vector coupling_flow(const Network& net, const Vector& x) {
  return net.sparse() * x - net.degrees().cwiseProduct(x);
}

// A with zero rows for isolated nodes.
inline Matrix normalized_or_zero(const Network& net) {
  Vector inv = net.degrees();
  for (Eigen::Index i = 0; i < inv.size(); ++i) inv(i) = inv(i) > 0.0 ? 1.0 / inv(i) : 0.0;
  return inv.asDiagonal() * net.weights();
}

inline double pair_sum(const Network& net, const Vector& x, std::size_t i) {
  const auto& s = net.sparse();
  const double xi = x(static_cast<Eigen::Index>(i));
  double acc = 0.0;
  for (SparseMatrix::InnerIterator it(s, static_cast<Eigen::Index>(i)); it; ++it) {
    const double diff = xi - x(it.col());
    acc += it.value() * diff * diff;
  }
  return acc;
}

// (1/4) sum_ij M_ij (x_i - x_j)^2
inline double dirichlet_energy(const Network& net, const Vector& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < net.size(); ++i) acc += pair_sum(net, x, i);
  return 0.25 * acc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Payouts

inline double payout_abelson(const Network& net, const Vector& x, std::size_t i) {
  detail::require_size(net, x);
  const double d = net.degrees()(static_cast<Eigen::Index>(i));
  if (!(d > 0.0)) throw Error(Errc::isolated_node, "payout of an isolated node", i);
  return 0.5 * detail::pair_sum(net, x, i) / d;
}

inline double payout_fj(const Network& net, const TaylorParams& params, const Vector& x,
                        std::size_t i) {
  const auto k = static_cast<Eigen::Index>(i);
  const double lambda = params.lambda(k);
  const double anchor = x(k) - params.u(k);
  const double social = lambda > 0.0 ? lambda * payout_abelson(net, x, i) : 0.0;
  return social + 0.5 * (1.0 - lambda) * anchor * anchor;
}

inline double payout_nfj(const Network& net, const NfjParams& params, const Vector& x,
                         std::size_t i) {
  detail::require_size(net, x);
  const auto k = static_cast<Eigen::Index>(i);
  const double xi = x(k);
  const double p = params.p;
  const double own = std::pow(xi, p + 2.0) / (p + 2.0) - 0.5 * params.u(k) * xi * xi;
  return 0.5 * detail::pair_sum(net, x, i) + params.sigma_at(i) * own;
}

inline double payout_linear_fj(const Network& net, const LinearFjParams& params, const Vector& x,
                               std::size_t i) {
  detail::require_size(net, x);
  const auto k = static_cast<Eigen::Index>(i);
  const double anchor = x(k) - params.u(k);
  return 0.5 * detail::pair_sum(net, x, i) + 0.5 * params.sigma(k) * anchor * anchor;
}

// ---------------------------------------------------------------------------
// Continuous vector fields

inline Vector vector_field_abelson(const Network& net, const Vector& x) {
  detail::require_size(net, x);
  detail::require_no_isolated(net);
  return (net.sparse() * x).cwiseQuotient(net.degrees()) - x;
}

/// Laplacian flow -(D_M - M) x on the raw symmetric coupling.
inline Vector laplacian_flow(const Network& net, const Vector& x) {
  detail::require_size(net, x);
  return detail::coupling_flow(net, x);
}

inline Vector vector_field_taylor(const Network& net, const TaylorParams& params,
                                  const Vector& x) {
  const Vector social = vector_field_abelson(net, x);
  const auto& l = params.lambda.array();
  return (l * social.array() + (1.0 - l) * (params.u - x).array()).matrix();
}

/// Pinned components are held fixed and report 0.
inline Vector vector_field_nfj(const Network& net, const NfjParams& params, const Vector& x) {
  detail::require_size(net, x);
  detail::require_positive(x);
  Vector out = detail::coupling_flow(net, x);
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (params.is_pinned(i)) {
      out(k) = 0.0;
    } else {
      out(k) += params.sigma(k) * (params.u(k) - std::pow(x(k), params.p)) * x(k);
    }
  }
  return out;
}

inline Vector vector_field_linear_fj(const Network& net, const LinearFjParams& params,
                                     const Vector& x) {
  detail::require_size(net, x);
  return detail::coupling_flow(net, x) + params.sigma.cwiseProduct(params.u - x);
}

inline Vector vector_field(const Network& net, const Model& model, const Vector& x) {
  return std::visit(
      [&](const auto& m) -> Vector {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, AbelsonParams>) {
          return m.coupling == Coupling::normalized ? vector_field_abelson(net, x)
                                                    : laplacian_flow(net, x);
        } else if constexpr (std::is_same_v<T, TaylorParams>) {
          return vector_field_taylor(net, m, x);
        } else if constexpr (std::is_same_v<T, NfjParams>) {
          return vector_field_nfj(net, m, x);
        } else {
          return vector_field_linear_fj(net, m, x);
        }
      },
      model);
}

// ---------------------------------------------------------------------------
// Discrete protocols

inline Vector discrete_step_degroot(const Network& net, const Vector& x) {
  detail::require_size(net, x);
  detail::require_no_isolated(net);
  return (net.sparse() * x).cwiseQuotient(net.degrees());
}

inline Vector discrete_step_fj(const Network& net, const TaylorParams& params, const Vector& x) {
  const Vector avg = discrete_step_degroot(net, x);
  const auto& l = params.lambda.array();
  return (l * avg.array() + (1.0 - l) * params.u.array()).matrix();
}

/// x_i <- sum_j C_ij x_j + s_i (u_i - x_i^p) x_i for an arbitrary coupling C.
/// Pinned agents emit u_i^(1/p). Throws NonpositiveState when the update
/// leaves the positive sector.
inline Vector discrete_step_nfj(const Matrix& coupling, const NfjParams& params,
                                const Vector& x) {
  detail::require(coupling.rows() == x.size() && coupling.cols() == x.size(),
                  "coupling matrix does not match state length");
  detail::require_positive(x);
  Vector next = coupling * x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const auto i = static_cast<std::size_t>(k);
    if (params.is_pinned(i)) {
      next(k) = params.target(i);
    } else {
      next(k) += params.sigma(k) * (params.u(k) - std::pow(x(k), params.p)) * x(k);
    }
  }
  detail::require_positive(next);
  return next;
}

/// NFJ protocol with the network's raw coupling M. The protocol is only a
/// contraction for row-(sub)stochastic M; the continuous flow is canonical.
inline Vector discrete_step_nfj(const Network& net, const NfjParams& params, const Vector& x) {
  detail::require_size(net, x);
  detail::require_positive(x);
  Vector next = net.sparse() * x;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (params.is_pinned(i)) {
      next(k) = params.target(i);
    } else {
      next(k) += params.sigma(k) * (params.u(k) - std::pow(x(k), params.p)) * x(k);
    }
  }
  detail::require_positive(next);
  return next;
}

inline Vector discrete_step_linear_fj(const Network& net, const LinearFjParams& params,
                                      const Vector& x) {
  detail::require_size(net, x);
  return net.sparse() * x + params.sigma.cwiseProduct(params.u - x);
}

/// Relaxed NFJ protocol with coupling I - h (D_M - M) and stubbornness h*sigma.
/// Its fixed points are exactly the zeros of the NFJ vector field; for
/// small enough h the map is a contraction near the equilibrium.
struct ShiftedProtocol {
  Matrix coupling;
  NfjParams params;
};

inline ShiftedProtocol shifted_protocol(const Network& net, const NfjParams& params,
                                        double h = 1.0) {
  detail::require(h > 0.0, "relaxation step must be positive");
  ShiftedProtocol out{-h * laplacian(net), params};
  out.coupling.diagonal().array() += 1.0;
  out.params.sigma = h * params.sigma;
  return out;
}

inline Vector discrete_step(const Network& net, const Model& model, const Vector& x) {
  return std::visit(
      [&](const auto& m) -> Vector {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, AbelsonParams>) {
          if (m.coupling == Coupling::normalized) return discrete_step_degroot(net, x);
          return net.sparse() * x;
        } else if constexpr (std::is_same_v<T, TaylorParams>) {
          return discrete_step_fj(net, m, x);
        } else if constexpr (std::is_same_v<T, NfjParams>) {
          return discrete_step_nfj(net, m, x);
        } else {
          return discrete_step_linear_fj(net, m, x);
        }
      },
      model);
}

// ---------------------------------------------------------------------------
// Substochastic reformulation of FJ: y = x / lambda.

struct SubstochasticForm {
  Matrix b;      // B_ij = lambda_j A_ij
  Vector sigma;  // (1 - lambda_i) / lambda_i
};

/// Isolated nodes contribute zero rows to A (they have no neighbors).
inline SubstochasticForm substochastic_transform(const Network& net,
                                                 const TaylorParams& params) {
  for (Eigen::Index i = 0; i < params.lambda.size(); ++i) {
    if (!(params.lambda(i) > 0.0)) {
      throw Error(Errc::division_by_zero_lambda,
                  "lambda_i = 0 has no substochastic form; model the agent as pinned",
                  static_cast<std::size_t>(i));
    }
  }
  SubstochasticForm out;
  out.b = detail::normalized_or_zero(net) * params.lambda.asDiagonal();
  out.sigma = (1.0 - params.lambda.array()) / params.lambda.array();
  return out;
}

/// Taylor dynamics written in y = x / lambda:
/// y_i' = sum_j B_ij y_j - (sum_j A_ij) lambda_i y_i - (1 - lambda_i) y_i + sigma_i u_i.
inline Vector transformed_taylor_field(const Network& net, const TaylorParams& params,
                                       const Vector& y) {
  const auto form = substochastic_transform(net, params);
  const Vector row = detail::normalized_or_zero(net).rowwise().sum();
  const auto& l = params.lambda.array();
  return (form.b * y).array() - row.array() * l * y.array() - (1.0 - l) * y.array() +
         form.sigma.array() * params.u.array();
}

// ---------------------------------------------------------------------------
// Energies

/// Phi(x) = 1/4 sum M_ij (x_i - x_j)^2 + sum s_i x_i^(p+2)/(p+2) - 1/2 sum s_i u_i x_i^2.
/// Pinned agents carry no potential term; -grad Phi equals the NFJ field on
/// the free coordinates.
inline double energy_nfj(const Network& net, const NfjParams& params, const Vector& x) {
  detail::require_size(net, x);
  double potential = 0.0;
  const double p = params.p;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const double s = params.sigma_at(i);
    if (s == 0.0) continue;
    const auto k = static_cast<Eigen::Index>(i);
    potential += s * (std::pow(x(k), p + 2.0) / (p + 2.0) - 0.5 * params.u(k) * x(k) * x(k));
  }
  return detail::dirichlet_energy(net, x) + potential;
}

/// Energy of the transformed Taylor dynamics,
/// Phi(y) = 1/4 sum B_ij (y_i - y_j)^2 - sum_k (s_k u_k y_k + 1/2 (lambda_k - 1) y_k^2).
/// Its negative gradient is the transformed field whenever B is symmetric
/// (regular graph, uniform lambda) and for isolated agents.
inline double energy_taylor(const Network& net, const TaylorParams& params, const Vector& y) {
  detail::require_size(net, y);
  const auto form = substochastic_transform(net, params);
  double quad = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      const double diff = y(i) - y(j);
      quad += form.b(i, j) * diff * diff;
    }
  }
  double linear = 0.0;
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    linear += form.sigma(k) * params.u(k) * y(k) + 0.5 * (params.lambda(k) - 1.0) * y(k) * y(k);
  }
  return 0.25 * quad - linear;
}

/// Lyapunov energy of the Taylor flow in the original variables,
/// Psi(x) = 1/4 sum M_ij (x_i - x_j)^2 + 1/2 sum d_i s_i (x_i - u_i)^2,
/// with s_i = (1 - lambda_i)/lambda_i. The flow satisfies
/// x' = -W^-1 grad Psi with W = diag(d_i / lambda_i). Undefined when some
/// lambda_i = 0.
inline std::optional<double> energy_taylor_weighted(const Network& net,
                                                    const TaylorParams& params,
                                                    const Vector& x) {
  detail::require_size(net, x);
  if ((params.lambda.array() <= 0.0).any()) return std::nullopt;
  double anchor = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double s = (1.0 - params.lambda(i)) / params.lambda(i);
    const double diff = x(i) - params.u(i);
    anchor += net.degrees()(i) * s * diff * diff;
  }
  return detail::dirichlet_energy(net, x) + 0.5 * anchor;
}

inline double energy_linear_fj(const Network& net, const LinearFjParams& params,
                               const Vector& x) {
  detail::require_size(net, x);
  const Vector diff = x - params.u;
  return detail::dirichlet_energy(net, x) +
         0.5 * (params.sigma.array() * diff.array().square()).sum();
}

/// Lyapunov energy for each model: the gradient energy for NFJ, linear FJ and
/// raw Abelson flow; the metric-weighted energy for normalized Abelson and
/// Taylor flows.
inline std::optional<double> energy(const Network& net, const Model& model, const Vector& x) {
  return std::visit(
      [&](const auto& m) -> std::optional<double> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, AbelsonParams>) {
          return detail::dirichlet_energy(net, x);
        } else if constexpr (std::is_same_v<T, TaylorParams>) {
          return energy_taylor_weighted(net, m, x);
        } else if constexpr (std::is_same_v<T, NfjParams>) {
          return energy_nfj(net, m, x);
        } else {
          return energy_linear_fj(net, m, x);
        }
      },
      model);
}

inline double payout(const Network& net, const Model& model, const Vector& x, std::size_t i) {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, AbelsonParams>) {
          if (m.coupling == Coupling::normalized) return payout_abelson(net, x, i);
          return 0.5 * detail::pair_sum(net, x, i);
        } else if constexpr (std::is_same_v<T, TaylorParams>) {
          return payout_fj(net, m, x, i);
        } else if constexpr (std::is_same_v<T, NfjParams>) {
          return payout_nfj(net, m, x, i);
        } else {
          return payout_linear_fj(net, m, x, i);
        }
      },
      model);
}

inline void validate(const Network& net, const Model& model) {
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (!std::is_same_v<T, AbelsonParams>) m.validate(net.size());
      },
      model);
}

}  // namespace opflow
