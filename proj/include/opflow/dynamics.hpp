#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include "opflow/error.hpp"
#include "opflow/graph.hpp"
#include "opflow/models.hpp"

namespace opflow {

enum class Method { rk4_fixed, rk4_adaptive };

struct IntegratorConfig {
  double dt = 0.01;
  double t_end = 100.0;
  Method method = Method::rk4_fixed;
  double stop_tol = 1e-10;       // converged once ||field||_inf < stop_tol
  std::size_t record_stride = 1;
  double box_tol = 1e-9;         // allowed excursion outside the invariant box
  bool stability_cap = true;     // cap dt at 2 / (Gershgorin bound of the Jacobian)

  void validate() const {
    detail::require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
    detail::require(t_end > 0.0 && std::isfinite(t_end), "t_end must be positive");
    detail::require(dt < t_end, "dt must be smaller than t_end");
    detail::require(stop_tol > 0.0, "stop_tol must be positive");
    detail::require(record_stride >= 1, "record_stride must be >= 1");
    detail::require(box_tol >= 0.0, "box_tol must be nonnegative");
  }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<double> energy;  // NaN where the model has no energy
  std::vector<double> spread;  // max_i x_i - min_i x_i
  std::vector<double> mean;
  bool converged = false;
  double final_field_norm = std::numeric_limits<double>::quiet_NaN();
  double dt = 0.0;             // base step actually used
  std::size_t steps = 0;
  std::size_t halvings = 0;    // adaptive subdivisions performed

  std::size_t samples() const { return times.size(); }
  const Vector& final_state() const { return states.back(); }
};

/// Invariant box for x^power: every trajectory stays in [lo, hi].
struct InvariantBox {
  double lo = 0.0;
  double hi = 0.0;
  double power = 1.0;

  double transgression(const Vector& x) const {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = power == 1.0 ? x(i) : std::pow(x(i), power);
      worst = std::max({worst, lo - v, v - hi});
    }
    return worst;
  }
};

/// c_- = min_i min(x_i(0)^p, u_i), c_+ = max_i max(x_i(0)^p, u_i) for NFJ;
/// the analogous extremes of x(0) and the anchors for the linear models.
inline InvariantBox invariant_box(const Model& model, const Vector& x0) {
  return std::visit(
      [&](const auto& m) -> InvariantBox {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, AbelsonParams>) {
          return {x0.minCoeff(), x0.maxCoeff(), 1.0};
        } else if constexpr (std::is_same_v<T, NfjParams>) {
          const Vector xp = x0.array().pow(m.p).matrix();
          return {std::min(xp.minCoeff(), m.u.minCoeff()), std::max(xp.maxCoeff(), m.u.maxCoeff()),
                  m.p};
        } else {
          return {std::min(x0.minCoeff(), m.u.minCoeff()), std::max(x0.maxCoeff(), m.u.maxCoeff()),
                  1.0};
        }
      },
      model);
}

/// Gershgorin bound on the spectral radius of the field's Jacobian over the
/// invariant box.
inline double jacobian_radius_bound(const Network& net, const Model& model,
                                    const InvariantBox& box) {
  const Vector off = net.degrees() - net.weights().diagonal();
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, AbelsonParams>) {
          return m.coupling == Coupling::normalized ? 2.0 : 2.0 * off.maxCoeff();
        } else if constexpr (std::is_same_v<T, TaylorParams>) {
          return 1.0 + m.lambda.maxCoeff();
        } else if constexpr (std::is_same_v<T, NfjParams>) {
          double rho = 0.0;
          for (std::size_t i = 0; i < net.size(); ++i) {
            if (m.is_pinned(i)) continue;
            const auto k = static_cast<Eigen::Index>(i);
            const double shift = std::max(std::abs(m.u(k) - (m.p + 1.0) * box.lo),
                                          std::abs(m.u(k) - (m.p + 1.0) * box.hi));
            rho = std::max(rho, 2.0 * off(k) + m.sigma(k) * shift);
          }
          return rho;
        } else {
          return (2.0 * off + m.sigma).maxCoeff();
        }
      },
      model);
}

namespace detail {

inline void record_sample(Trajectory& traj, const Network& net, const Model& model, double t,
                          const Vector& x) {
  traj.times.push_back(t);
  traj.states.push_back(x);
  const auto e = energy(net, model, x);
  traj.energy.push_back(e ? *e : std::numeric_limits<double>::quiet_NaN());
  traj.spread.push_back(x.maxCoeff() - x.minCoeff());
  traj.mean.push_back(x.mean());
}

inline Vector rk4_step(const Network& net, const Model& model, const Vector& x, const Vector& k1,
                       double h) {
  const Vector k2 = vector_field(net, model, x + 0.5 * h * k1);
  const Vector k3 = vector_field(net, model, x + 0.5 * h * k2);
  const Vector k4 = vector_field(net, model, x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline bool strictly_positive(const Vector& x) { return (x.array() > 0.0).all(); }

inline constexpr int kMaxHalvings = 20;

// One base step of size h, subdivided recursively while the step would leave
// the invariant box (or the positive sector).
inline Vector guarded_step(const Network& net, const Model& model, const Vector& x, double h,
                           const InvariantBox& box, double box_tol, int depth,
                           std::size_t& halvings) {
  std::optional<Vector> trial;
  try {
    const Vector k1 = vector_field(net, model, x);
    trial = rk4_step(net, model, x, k1, h);
  } catch (const Error& e) {
    if (e.code() != Errc::nonpositive_state) throw;
  }
  if (trial && strictly_positive(*trial) && box.transgression(*trial) <= box_tol) return *trial;
  if (depth >= kMaxHalvings) {
    throw Error(Errc::step_size_underflow, "step halved " + std::to_string(kMaxHalvings) +
                                               " times without staying in the invariant box");
  }
  ++halvings;
  const Vector mid = guarded_step(net, model, x, 0.5 * h, box, box_tol, depth + 1, halvings);
  return guarded_step(net, model, mid, 0.5 * h, box, box_tol, depth + 1, halvings);
}

}  // namespace detail

/// Largest base step the integrator will use for this model and start.
inline double effective_step(const Network& net, const Model& model, const Vector& x0,
                             const IntegratorConfig& cfg) {
  double dt = cfg.dt;
  if (cfg.stability_cap) {
    const double rho = jacobian_radius_bound(net, model, invariant_box(model, x0));
    if (rho > 0.0) dt = std::min(dt, 2.0 / rho);
  }
  const double steps = std::ceil(cfg.t_end / dt - 1e-9);
  return cfg.t_end / steps;
}

/// Classical RK4 integration of the model's continuous dynamics.
///
/// Runs to cfg.t_end, or stops early (converged) once the sup-norm of the
/// vector field drops below cfg.stop_tol. Pinned NFJ agents start at their
/// conviction value. In adaptive mode a step that would leave the invariant
/// box by more than cfg.box_tol is retried with halved steps.
inline Trajectory integrate(const Network& net, const Model& model, const Vector& x0,
                            const IntegratorConfig& cfg) {
  cfg.validate();
  validate(net, model);
  detail::require_size(net, x0);
  detail::require_positive(x0);

  Vector x = x0;
  if (const auto* nfj = std::get_if<NfjParams>(&model)) {
    for (std::size_t i = 0; i < net.size(); ++i) {
      if (nfj->is_pinned(i)) x(static_cast<Eigen::Index>(i)) = nfj->target(i);
    }
  }

  Trajectory traj;
  traj.dt = effective_step(net, model, x, cfg);
  const auto total = static_cast<std::size_t>(std::llround(cfg.t_end / traj.dt));
  const InvariantBox box = invariant_box(model, x);

  detail::record_sample(traj, net, model, 0.0, x);
  std::size_t step = 0;
  bool recorded_last = true;
  for (; step < total; ++step) {
    const Vector k1 = vector_field(net, model, x);
    traj.final_field_norm = k1.lpNorm<Eigen::Infinity>();
    if (traj.final_field_norm < cfg.stop_tol) {
      traj.converged = true;
      break;
    }
    if (cfg.method == Method::rk4_fixed) {
      try {
        x = detail::rk4_step(net, model, x, k1, traj.dt);
      } catch (const Error& e) {
        if (e.code() != Errc::nonpositive_state) throw;
        throw Error(Errc::nonpositive_state, "RK4 stage left the positive sector", step + 1);
      }
      if (!detail::strictly_positive(x)) {
        throw Error(Errc::nonpositive_state, "state left the positive sector", step + 1);
      }
    } else {
      x = detail::guarded_step(net, model, x, traj.dt, box, cfg.box_tol, 0, traj.halvings);
    }
    recorded_last = false;
    if ((step + 1) % cfg.record_stride == 0) {
      detail::record_sample(traj, net, model, static_cast<double>(step + 1) * traj.dt, x);
      recorded_last = true;
    }
  }
  traj.steps = step;
  if (!traj.converged) {
    traj.final_field_norm = vector_field(net, model, x).lpNorm<Eigen::Infinity>();
    traj.converged = traj.final_field_norm < cfg.stop_tol;
  }
  if (!recorded_last) {
    detail::record_sample(traj, net, model, static_cast<double>(step) * traj.dt, x);
  }
  return traj;
}

/// Applies the model's discrete protocol `steps` times, recording every
/// `record_stride`-th iterate (and the last) at integer times.
inline Trajectory iterate_discrete(const Network& net, const Model& model, const Vector& x0,
                                   std::size_t steps, std::size_t record_stride = 1) {
  validate(net, model);
  detail::require_size(net, x0);
  detail::require(record_stride >= 1, "record_stride must be >= 1");
  Trajectory traj;
  traj.dt = 1.0;
  Vector x = x0;
  detail::record_sample(traj, net, model, 0.0, x);
  for (std::size_t k = 1; k <= steps; ++k) {
    try {
      x = discrete_step(net, model, x);
    } catch (const Error& e) {
      if (e.code() != Errc::nonpositive_state) throw;
      throw Error(Errc::nonpositive_state, "iterate left the positive sector at step " +
                                               std::to_string(k), k);
    }
    if (k % record_stride == 0 || k == steps) {
      detail::record_sample(traj, net, model, static_cast<double>(k), x);
    }
  }
  traj.steps = steps;
  const Vector next = discrete_step(net, model, x);
  traj.final_field_norm = (next - x).lpNorm<Eigen::Infinity>();
  return traj;
}

struct BoundsReport {
  double c_minus = 0.0;
  double c_plus = 0.0;
  double below = 0.0;  // max over samples of c_- - x_i^p (clipped at 0)
  double above = 0.0;  // max over samples of x_i^p - c_+ (clipped at 0)
  std::size_t worst_sample = 0;

  double transgression() const { return std::max(below, above); }
};

/// Worst excursion of an NFJ trajectory outside [c_-, c_+].
inline BoundsReport monitor_bounds(const Trajectory& traj, const NfjParams& params,
                                   const Vector& x0) {
  const InvariantBox box = invariant_box(Model{params}, x0);
  BoundsReport report{box.lo, box.hi};
  double worst = -1.0;
  for (std::size_t s = 0; s < traj.samples(); ++s) {
    const Vector xp = traj.states[s].array().pow(params.p).matrix();
    const double below = std::max(0.0, box.lo - xp.minCoeff());
    const double above = std::max(0.0, xp.maxCoeff() - box.hi);
    report.below = std::max(report.below, below);
    report.above = std::max(report.above, above);
    if (std::max(below, above) > worst) {
      worst = std::max(below, above);
      report.worst_sample = s;
    }
  }
  return report;
}

/// Least-squares exponential rate: fits log(values) against times over the
/// samples with values in [lo, hi] and returns the negated slope.
inline double log_decay_rate(const std::vector<double>& times, const std::vector<double>& values,
                             double lo, double hi) {
  double st = 0, sv = 0, stt = 0, stv = 0;
  std::size_t m = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (!(values[k] >= lo && values[k] <= hi) || values[k] <= 0.0) continue;
    const double lv = std::log(values[k]);
    st += times[k];
    sv += lv;
    stt += times[k] * times[k];
    stv += times[k] * lv;
    ++m;
  }
  if (m < 3) {
    throw Error(Errc::insufficient_decay, "fewer than three samples inside the fit window");
  }
  const double md = static_cast<double>(m);
  const double denom = md * stt - st * st;
  if (!(denom > 0.0)) throw Error(Errc::insufficient_decay, "degenerate fit window");
  return -(md * stv - st * sv) / denom;
}

/// Exponential decay rate of the spread x_+ - x_-, fitted where the spread
/// lies between 1e-10 and 1e-2 of its initial value.
inline double spread_decay_rate(const Trajectory& traj) {
  if (traj.samples() == 0 || !(traj.spread.front() > 0.0)) {
    throw Error(Errc::insufficient_decay, "initial spread is zero");
  }
  const double s0 = traj.spread.front();
  return log_decay_rate(traj.times, traj.spread, 1e-10 * s0, 1e-2 * s0);
}

}  // namespace opflow
