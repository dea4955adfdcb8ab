#include <gtest/gtest.h>

#include "opflow/dynamics.hpp"
#include "opflow/equilibrium.hpp"
#include "oracles.hpp"

using namespace opflow;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Vector random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Network two_nodes() { return Network::from_edges(2, {{0, 1, 1.0}}); }

NfjParams two_node_params() { return {vec({1, 4}), vec({1, 1}), {}, 1.0}; }

NfjParams random_nfj(Rng& rng, std::size_t n, double p) {
  return {random_vector(rng, n, 1, 100), random_vector(rng, n, 0.5, 2), {}, p};
}

Vector ode_limit(const Network& net, const Model& model, const Vector& x0) {
  IntegratorConfig cfg;
  cfg.t_end = 2000;
  cfg.stop_tol = 1e-11;
  const Trajectory traj = integrate(net, model, x0, cfg);
  EXPECT_TRUE(traj.converged);
  return traj.final_state();
}

}  // namespace

// ---------------------------------------------------------------------------
// Steady-state map and Jacobian

TEST(FMap, HandCaseAndSign) {
  const Network net = two_nodes();
  const NfjParams params = two_node_params();
  const Vector f = f_map(net, params, vec({1, 2}));
  EXPECT_NEAR(f(0), -1.0, 1e-15);  // 1 - 2 + 0
  EXPECT_NEAR(f(1), -3.0, 1e-15);  // 2 - 1 + (2 - 4) * 2
  Rng rng(3);
  const Network er = erdos_renyi(20, 0.3, 1);
  const NfjParams rp = random_nfj(rng, 20, 2.0);
  for (int k = 0; k < 10; ++k) {
    const Vector x = random_vector(rng, 20, 0.5, 10);
    EXPECT_LT((f_map(er, rp, x) + vector_field_nfj(er, rp, x)).lpNorm<Eigen::Infinity>(), 1e-9);
  }
}

TEST(FMap, ConstantConvictionIsARoot) {
  const Network net = erdos_renyi(20, 0.3, 2);
  const NfjParams params{Vector::Constant(20, 9.0), Vector::Constant(20, 0.7), {}, 2.0};
  EXPECT_LT(f_map(net, params, Vector::Constant(20, 3.0)).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  Rng rng(4);
  for (int k = 0; k < 20; ++k) {
    const Network net = erdos_renyi(8, 0.5, 10 + k);
    const NfjParams params = random_nfj(rng, 8, k % 2 ? 1.0 : 2.0);
    const Vector x = random_vector(rng, 8, 0.5, 10);
    const oracle::Mat want = oracle::fd_jacobian(
        [&](const oracle::Vec& y) -> oracle::Vec {
          return -oracle::nfj_field(net.weights(), params.u, params.sigma, params.p, y);
        },
        x);
    const Matrix got = jacobian_nfj(net, params, x);
    EXPECT_LT((got - want).cwiseAbs().maxCoeff() / std::max(1.0, want.cwiseAbs().maxCoeff()), 1e-7);
  }
}

TEST(Jacobian, ReducesToLaplacianWithoutStubbornness) {
  const Network net = erdos_renyi(10, 0.4, 3);
  const NfjParams params{Vector::LinSpaced(10, 1, 10), Vector::Zero(10), {}, 2.0};
  EXPECT_EQ(jacobian_nfj(net, params, Vector::Constant(10, 2.0)),
            Matrix(oracle::laplacian(net.weights())));
}

TEST(Jacobian, DiagonalAtSteadyStateMatchesIdentity) {
  // At a root, g_i = d_i + s_i (p+1) x_i^p - s_i u_i equals
  // p s_i x_i^p + (M x)_i / x_i.
  Rng rng(5);
  const Network net = erdos_renyi(25, 0.2, 6);
  const NfjParams params = random_nfj(rng, 25, 2.0);
  const EquilibriumCertificate cert = newton_solve(net, params, std::nullopt);
  const Vector& x = cert.x_star;
  const Matrix j = jacobian_nfj(net, params, x);
  const Vector mx = net.weights() * x;
  for (Eigen::Index i = 0; i < 25; ++i) {
    const double g = j(i, i) + net.weights()(i, i);
    const double want = params.p * params.sigma(i) * std::pow(x(i), params.p) + mx(i) / x(i);
    EXPECT_LT(oracle::rel_err(g, want), 1e-9);
  }
}

// ---------------------------------------------------------------------------
// Newton

TEST(Newton, TwoNodeRootMatchesOracle) {
  const EquilibriumCertificate cert = newton_solve(two_nodes(), two_node_params(), std::nullopt);
  const oracle::Vec want = oracle::two_node_root();
  EXPECT_LT(oracle::max_rel_err(cert.x_star, want), 1e-8);
  EXPECT_NEAR(cert.x_star(1), cert.x_star(0) * cert.x_star(0), 1e-10);
  EXPECT_TRUE(cert.converged(1e-12));
}

TEST(Newton, ConstantConvictionConvergesImmediately) {
  const Network net = erdos_renyi(30, 0.2, 7);
  const NfjParams params{Vector::Constant(30, 16.0), Vector::Constant(30, 1.3), {}, 2.0};
  const EquilibriumCertificate cert = newton_solve(net, params, std::nullopt);
  EXPECT_LE(cert.iterations, 2);
  EXPECT_LT((cert.x_star.array() - 4.0).abs().maxCoeff(), 1e-12);
}

TEST(Newton, AgreesWithOdeLimit) {
  Rng rng(8);
  for (double p : {1.0, 2.0}) {
    const Network net = erdos_renyi(30, 0.2, 9);
    const NfjParams params = random_nfj(rng, 30, p);
    const EquilibriumCertificate cert = newton_solve(net, params, std::nullopt);
    const Vector limit = ode_limit(net, Model{params}, Vector::Ones(30));
    EXPECT_LT(oracle::max_rel_err(limit, cert.x_star), 1e-6);
  }
}

TEST(Newton, PinnedAgentsHoldTarget) {
  const Network net = erdos_renyi(15, 0.3, 11);
  Rng rng(9);
  NfjParams params = random_nfj(rng, 15, 2.0);
  params.pinned.assign(15, false);
  params.pinned[0] = params.pinned[7] = true;
  const EquilibriumCertificate cert = newton_solve(net, params, std::nullopt);
  EXPECT_EQ(cert.x_star(0), std::sqrt(params.u(0)));
  EXPECT_EQ(cert.x_star(7), std::sqrt(params.u(7)));
  const Vector field = vector_field_nfj(net, params, cert.x_star);
  EXPECT_LT(field.lpNorm<Eigen::Infinity>(), 1e-9 * cert.residual_scale);
}

TEST(Newton, ErrorsWithoutFallback) {
  const NfjParams params = two_node_params();
  SolverConfig cfg;
  cfg.max_iter = 1;
  try {
    newton_solve(two_nodes(), params, vec({50, 0.01}), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::max_iter_exceeded);
  }
}

// ---------------------------------------------------------------------------
// Certificates

TEST(Certify, SolvedRootsAreStable) {
  Rng rng(10);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network net = erdos_renyi(30, 0.2, seed);
    const NfjParams params = random_nfj(rng, 30, seed % 2 ? 1.0 : 2.0);
    const EquilibriumCertificate cert =
        certify(net, params, newton_solve(net, params, std::nullopt).x_star);
    EXPECT_GT(cert.jac_min_eig, 0.0);
    EXPECT_TRUE(cert.m_matrix_ok);
    EXPECT_TRUE(cert.certificates_agree);
    EXPECT_FALSE(cert.degenerate);
    const oracle::Vec ev = oracle::sym_eigenvalues(jacobian_nfj(net, params, cert.x_star));
    EXPECT_NEAR(cert.jac_min_eig, ev(0), 1e-9 * ev.cwiseAbs().maxCoeff());
  }
}

TEST(Certify, ZeroStubbornnessIsDegenerate) {
  const Network net = erdos_renyi(10, 0.4, 2);
  const NfjParams params{Vector::LinSpaced(10, 1, 10), Vector::Zero(10), {}, 1.0};
  const EquilibriumCertificate cert = certify(net, params, Vector::Constant(10, 3.0));
  EXPECT_TRUE(cert.degenerate);
  EXPECT_EQ(cert.residual, 0.0);
}

TEST(Certify, OffSteadyPointFailsMMatrix) {
  const NfjParams params{vec({100, 100}), vec({1, 1}), {}, 1.0};
  const EquilibriumCertificate cert = certify(two_nodes(), params, vec({0.1, 0.1}));
  EXPECT_FALSE(cert.m_matrix_ok);
  EXPECT_LT(cert.jac_min_eig, 0.0);
  EXPECT_TRUE(cert.certificates_agree);
}

// ---------------------------------------------------------------------------
// Multistart

TEST(Multistart, RandomInstancesHaveOneRoot) {
  Rng rng(11);
  SolverConfig cfg;
  cfg.starts = 20;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Network net = erdos_renyi(50, 0.1, seed);
    const NfjParams params = random_nfj(rng, 50, seed % 2 ? 1.0 : 2.0);
    cfg.seed = seed;
    const EquilibriumCertificate cert = multistart_uniqueness(net, params, cfg);
    EXPECT_LT(cert.multistart_agreement, 1e-6 * cert.x_star.lpNorm<Eigen::Infinity>());
    EXPECT_EQ(cert.starts, 20u);
  }
}

TEST(Multistart, ConstantConvictionAndSingleStart) {
  const Network net = erdos_renyi(20, 0.3, 4);
  const NfjParams flat{Vector::Constant(20, 25.0), Vector::Ones(20), {}, 2.0};
  SolverConfig cfg;
  cfg.starts = 8;
  EXPECT_LT(multistart_uniqueness(net, flat, cfg).multistart_agreement, 1e-12);
  Rng rng(12);
  cfg.starts = 1;
  EXPECT_EQ(multistart_uniqueness(net, random_nfj(rng, 20, 1.0), cfg).multistart_agreement, 0.0);
}

// ---------------------------------------------------------------------------
// Nash

TEST(Nash, SolvedRootsAreNash) {
  Rng rng(13);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Network net = erdos_renyi(20, 0.3, seed);
    const NfjParams params = random_nfj(rng, 20, seed % 2 ? 1.0 : 2.0);
    const Vector x = newton_solve(net, params, std::nullopt).x_star;
    const NashReport report = check_nash(net, params, x, 1001);
    EXPECT_TRUE(report.ok) << "agent " << report.agent.value_or(0);
    EXPECT_TRUE(verify_nash(net, params, x));
  }
}

TEST(Nash, PerturbedAgentIsCaught) {
  Rng rng(14);
  const Network net = erdos_renyi(20, 0.3, 5);
  const NfjParams params = random_nfj(rng, 20, 2.0);
  Vector x = newton_solve(net, params, std::nullopt).x_star;
  const double star = x(0);
  x(0) *= 1.1;
  const NashReport report = check_nash(net, params, x, 1001);
  EXPECT_FALSE(report.ok);
  ASSERT_TRUE(report.agent.has_value());
  EXPECT_EQ(*report.agent, 0u);
  EXPECT_LT(report.candidate, x(0));
  EXPECT_GT(report.gain, 0.0);
  try {
    verify_nash(net, params, x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::nash_violation);
    EXPECT_EQ(e.index(), 0u);
  }
  (void)star;
}

TEST(Nash, IsolatedAgentSitsAtConviction) {
  const Network net = Network::from_edges(3, {{0, 1, 1.0}});
  const NfjParams params{vec({2, 5, 9}), vec({1, 1, 2}), {}, 2.0};
  const Vector x = newton_solve(net, params, std::nullopt).x_star;
  EXPECT_NEAR(x(2), 3.0, 1e-12);
  EXPECT_TRUE(check_nash(net, params, x, 1001).ok);
}

// ---------------------------------------------------------------------------
// Linear models

TEST(Taylor, FullyStubbornIsAnchor) {
  const Network net = erdos_renyi(10, 0.4, 1);
  const TaylorParams params{Vector::Zero(10), Vector::LinSpaced(10, 1, 10)};
  EXPECT_LT((taylor_equilibrium(net, params) - params.u).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(Taylor, TwoNodeHandCase) {
  const TaylorParams params{vec({0.5, 0.5}), vec({0, 2})};
  const Vector x = taylor_equilibrium(two_nodes(), params);
  EXPECT_NEAR(x(0), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(x(1), 4.0 / 3.0, 1e-12);
}

TEST(Taylor, ClosedFormMatchesOracleAndOde) {
  Rng rng(15);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network net = erdos_renyi(20, 0.3, seed);
    const TaylorParams params{random_vector(rng, 20, 0, 0.95), random_vector(rng, 20, 0.5, 5)};
    const Vector x = taylor_equilibrium(net, params);
    EXPECT_LT(oracle::max_rel_err(x, oracle::taylor_fixed_point(net.weights(), params.lambda,
                                                                params.u)),
              1e-12);
    EXPECT_LT(oracle::max_rel_err(ode_limit(net, Model{params}, Vector::Ones(20)), x), 1e-8);
    EXPECT_LT(taylor_f_map(net, params, x).lpNorm<Eigen::Infinity>(), 1e-12);
  }
}

TEST(Taylor, SingularWhenNobodyIsStubborn) {
  const Network net = complete_graph(4);
  try {
    taylor_equilibrium(net, TaylorParams{Vector::Ones(4), Vector::Ones(4)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::singular_system);
  }
}

TEST(Taylor, JacobianCheck) {
  EXPECT_NEAR(taylor_jacobian_check(complete_graph(4), {Vector::Ones(4), Vector::Ones(4)}), 0.0,
              1e-12);
  EXPECT_NEAR(taylor_jacobian_check(complete_graph(3), {Vector::Constant(3, 0.5), Vector::Ones(3)}),
              0.5, 1e-12);
  Rng rng(16);
  const Network net = erdos_renyi(20, 0.3, 3);
  Vector lambda = random_vector(rng, 20, 0, 0.99);
  const TaylorParams some{lambda, Vector::Ones(20)};
  const double got = taylor_jacobian_check(net, some);
  EXPECT_GT(got, 0.0);
  Eigen::EigenSolver<Matrix> eig(taylor_jacobian(net, some), false);
  EXPECT_NEAR(got, eig.eigenvalues().real().minCoeff(), 1e-10);
  lambda(4) = 0.0;
  EXPECT_GT(taylor_jacobian_check(net, {lambda, Vector::Ones(20)}), 0.0);
}

TEST(LinearFj, ClosedFormMatchesOde) {
  Rng rng(17);
  const Network net = erdos_renyi(20, 0.3, 2);
  const LinearFjParams params{random_vector(rng, 20, 1, 10), random_vector(rng, 20, 0.5, 2)};
  const Vector x = linear_fj_equilibrium(net, params);
  EXPECT_LT(vector_field_linear_fj(net, params, x).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_LT(oracle::max_rel_err(ode_limit(net, Model{params}, Vector::Ones(20)), x), 1e-8);
}

// ---------------------------------------------------------------------------
// Local behaviour around the root

TEST(Stability, PerturbationDecaysAtSmallestEigenvalue) {
  Rng rng(18);
  const Network net = erdos_renyi(20, 0.3, 7);
  const NfjParams params = random_nfj(rng, 20, 1.0);
  const Vector x = newton_solve(net, params, std::nullopt).x_star;
  const DecayProbe probe = perturbation_decay_rate(net, params, x, 1e-3, 1);
  EXPECT_LT(oracle::rel_err(probe.measured, probe.predicted) , 0.10)
      << probe.measured << " vs " << probe.predicted;
}

TEST(Stability, RootDependsSmoothlyOnConvictions) {
  Rng rng(19);
  const Network net = erdos_renyi(15, 0.3, 8);
  const NfjParams base = random_nfj(rng, 15, 2.0);
  auto root_at = [&](double shift) {
    NfjParams p = base;
    p.u(0) += shift;
    return newton_solve(net, p, std::nullopt).x_star;
  };
  const double h = 1e-2;
  const Vector d1 = (root_at(h) - root_at(-h)) / (2 * h);
  const Vector d2 = (root_at(h / 2) - root_at(-h / 2)) / h;
  EXPECT_LT((d1 - d2).lpNorm<Eigen::Infinity>(), 0.05 * d2.lpNorm<Eigen::Infinity>());
  EXPECT_GT(d2(0), 0.0);
}
