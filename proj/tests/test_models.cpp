#include <gtest/gtest.h>

#include "opflow/equilibrium.hpp"
#include "opflow/models.hpp"
#include "oracles.hpp"

using namespace opflow;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

Network edge_pair() { return Network::from_edges(2, {{0, 1, 1.0}}); }

Network weighted_random(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || rng.bernoulli(0.3)) edges.push_back({i, j, rng.uniform(0.2, 2.0)});
    }
  }
  return Network::from_edges(n, edges);
}

Vector random_vector(Rng& rng, std::size_t n, double lo, double hi) {
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

NfjParams two_node_params() { return {vec({1, 4}), vec({1, 1}), {}, 1.0}; }

}  // namespace

// ---------------------------------------------------------------------------
// Payouts

TEST(Payout, Abelson) {
  const Network pair = edge_pair();
  EXPECT_EQ(payout_abelson(pair, vec({3, 3}), 0), 0.0);
  EXPECT_DOUBLE_EQ(payout_abelson(pair, vec({0.5, 1.5}), 0), 0.5);
  EXPECT_DOUBLE_EQ(payout_abelson(pair, vec({0.5, 1.5}), 1), 0.5);
  EXPECT_DOUBLE_EQ(payout_abelson(complete_graph(3), vec({1, 1, 2}), 0), 0.25);
}

TEST(Payout, Taylor) {
  const Network tri = complete_graph(3);
  const Vector x = vec({1, 2, 4});
  const TaylorParams social{Vector::Ones(3), vec({1, 1, 1})};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(payout_fj(tri, social, x, i), payout_abelson(tri, x, i));
  }
  const TaylorParams anchored{Vector::Zero(3), x};
  EXPECT_EQ(payout_fj(tri, anchored, x, 1), 0.0);
  const TaylorParams half{vec({0.5, 0.5}), vec({0, 2})};
  EXPECT_DOUBLE_EQ(payout_fj(edge_pair(), half, vec({1, 1}), 0), 0.25);
}

TEST(Payout, NfjReducesToCouplingWithoutStubbornness) {
  const Network net = weighted_random(6, 3);
  Rng rng(5);
  const Vector x = random_vector(rng, 6, 0.5, 3);
  const NfjParams params{random_vector(rng, 6, 1, 5), Vector::Zero(6), {}, 2.0};
  for (std::size_t i = 0; i < 6; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      want += 0.5 * net.weight(i, j) * std::pow(x(i) - x(j), 2);
    }
    EXPECT_NEAR(payout_nfj(net, params, x, i), want, 1e-12);
  }
}

TEST(Payout, NfjIsolatedAgentMinimizedAtOne) {
  const Network lone = Network::from_edges(1, {});
  const NfjParams params{vec({1}), vec({1}), {}, 1.0};
  double best_x = 0.0, best = 1e300;
  for (int k = 1; k <= 3000; ++k) {
    const double x = 1e-3 * k;
    const double value = payout_nfj(lone, params, vec({x}), 0);
    EXPECT_NEAR(value, x * x * x / 3.0 - x * x / 2.0, 1e-14);
    if (value < best) {
      best = value;
      best_x = x;
    }
  }
  EXPECT_NEAR(best_x, 1.0, 1e-12);
}

TEST(Payout, NfjConsensusIsStationary) {
  const Network net = weighted_random(5, 2);
  const double u = 3.0, p = 2.0;
  const NfjParams params{Vector::Constant(5, u), vec({0.5, 1, 2, 0, 3}), {}, p};
  const Vector x = Vector::Constant(5, std::pow(u, 1.0 / p));
  for (std::size_t i = 0; i < 5; ++i) {
    const auto f = [&](const oracle::Vec& xi) {
      Vector y = x;
      y(static_cast<Eigen::Index>(i)) = xi(0);
      return payout_nfj(net, params, y, i);
    };
    EXPECT_NEAR(oracle::fd_gradient(f, vec({x(i)}))(0), 0.0, 1e-8);
  }
}

// ---------------------------------------------------------------------------
// Vector fields

TEST(Field, Abelson) {
  const Network pair = edge_pair();
  EXPECT_EQ(vector_field_abelson(pair, vec({2, 2})), Vector::Zero(2));
  EXPECT_EQ(vector_field_abelson(pair, vec({0, 2})), vec({2, -2}));
}

TEST(Field, RawAbelsonConservesSum) {
  Rng rng(11);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network net = weighted_random(8, seed);
    const Vector x = random_vector(rng, 8, 0.1, 10);
    EXPECT_NEAR(laplacian_flow(net, x).sum(), 0.0, 1e-12);
  }
}

TEST(Field, Taylor) {
  const Network net = weighted_random(6, 4);
  Rng rng(2);
  const Vector x = random_vector(rng, 6, 0.1, 5);
  const Vector u = random_vector(rng, 6, 0.1, 5);
  EXPECT_LT((vector_field_taylor(net, {Vector::Ones(6), u}, x) - vector_field_abelson(net, x))
                .lpNorm<Eigen::Infinity>(),
            1e-14);
  EXPECT_EQ(vector_field_taylor(net, {Vector::Zero(6), u}, u), Vector::Zero(6));
  const TaylorParams half{vec({0.5, 0.5}), vec({0, 2})};
  EXPECT_EQ(vector_field_taylor(edge_pair(), half, vec({1, 1})), vec({-0.5, 0.5}));
}

TEST(Field, NfjHandCases) {
  EXPECT_EQ(vector_field_nfj(edge_pair(), two_node_params(), vec({1, 1})), vec({0, 3}));
  const Network net = weighted_random(7, 9);
  const double u = 5.0, p = 0.5;
  const NfjParams constant{Vector::Constant(7, u), Vector::Constant(7, 2.0), {}, p};
  const Vector fixed = Vector::Constant(7, std::pow(u, 1.0 / p));
  EXPECT_LT(vector_field_nfj(net, constant, fixed).lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(Field, NfjMatchesDirectSum) {
  Rng rng(21);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Network net = weighted_random(9, seed);
    const NfjParams params{random_vector(rng, 9, 0.5, 50), random_vector(rng, 9, 0, 5), {},
                           seed % 2 ? 1.0 : 2.0};
    const Vector x = random_vector(rng, 9, 0.2, 8);
    const Vector want = oracle::nfj_field(net.weights(), params.u, params.sigma, params.p, x);
    EXPECT_LT(oracle::max_rel_err(vector_field_nfj(net, params, x), want), 1e-13);
  }
}

TEST(Field, NfjReductionsAndPinning) {
  const Network net = weighted_random(6, 8);
  Rng rng(3);
  const Vector x = random_vector(rng, 6, 0.5, 4);
  NfjParams params{random_vector(rng, 6, 1, 9), Vector::Zero(6), {}, 1.5};
  EXPECT_LT((vector_field_nfj(net, params, x) + oracle::laplacian(net.weights()) * x)
                .lpNorm<Eigen::Infinity>(),
            1e-13);
  params.sigma.setConstant(1.0);
  params.pinned = {false, true, false, false, true, false};
  const Vector f = vector_field_nfj(net, params, x);
  EXPECT_EQ(f(1), 0.0);
  EXPECT_EQ(f(4), 0.0);
  Vector bad = x;
  bad(3) = 0.0;
  try {
    vector_field_nfj(net, params, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::nonpositive_state);
    EXPECT_EQ(e.index(), 3u);
  }
}

TEST(Field, ReductionChain) {
  Rng rng(17);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network net = weighted_random(7, seed);
    const Vector x = random_vector(rng, 7, 0.3, 6);
    const Vector u = random_vector(rng, 7, 0.3, 6);
    const NfjParams nfj{u, Vector::Zero(7), {}, 1.0};
    EXPECT_LT((vector_field_nfj(net, nfj, x) - laplacian_flow(net, x)).lpNorm<Eigen::Infinity>(),
              1e-14);
    const TaylorParams taylor{Vector::Ones(7), u};
    EXPECT_LT((vector_field_taylor(net, taylor, x) - vector_field_abelson(net, x))
                  .lpNorm<Eigen::Infinity>(),
              1e-14);
  }
}

// ---------------------------------------------------------------------------
// Discrete protocols

TEST(Discrete, HandCases) {
  const Network pair = edge_pair();
  const Matrix a = normalized_adjacency(pair);
  EXPECT_EQ(discrete_step_nfj(a, two_node_params(), vec({1, 1})), vec({1, 4}));
  EXPECT_EQ(discrete_step_degroot(pair, vec({1, 3})), vec({3, 1}));
  const TaylorParams stubborn{Vector::Zero(2), vec({2, 5})};
  EXPECT_EQ(discrete_step_fj(pair, stubborn, vec({1, 1})), vec({2, 5}));
}

TEST(Discrete, NfjWithoutStubbornnessIsDeGroot) {
  const Network net = weighted_random(6, 12);
  Rng rng(4);
  const Vector x = random_vector(rng, 6, 0.5, 3);
  const NfjParams params{random_vector(rng, 6, 1, 3), Vector::Zero(6), {}, 1.0};
  EXPECT_LT((discrete_step_nfj(normalized_adjacency(net), params, x) -
             discrete_step_degroot(net, x))
                .lpNorm<Eigen::Infinity>(),
            1e-14);
}

TEST(Discrete, NfjReportsNonpositiveIterate) {
  const Matrix a = normalized_adjacency(edge_pair());
  const NfjParams harsh{vec({1, 1}), vec({5, 5}), {}, 1.0};
  try {
    discrete_step_nfj(a, harsh, vec({3, 0.01}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::nonpositive_state);
  }
}

TEST(Discrete, PinnedAgentsEmitTarget) {
  const Matrix a = normalized_adjacency(complete_graph(3));
  const NfjParams params{vec({4, 9, 1}), vec({1, 1, 1}), {false, true, false}, 2.0};
  EXPECT_EQ(discrete_step_nfj(a, params, vec({1, 1, 1}))(1), 3.0);
}

TEST(Discrete, StationarityCorrespondence) {
  Rng rng(31);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Network net = weighted_random(5, seed);
    const NfjParams params{random_vector(rng, 5, 0.5, 20), random_vector(rng, 5, 0.2, 3), {},
                           seed % 2 ? 1.0 : 2.0};
    const Vector xs = newton_solve(net, params, std::nullopt).x_star;
    const double scale = std::max(1.0, xs.lpNorm<Eigen::Infinity>());
    const ShiftedProtocol shifted = shifted_protocol(net, params, 0.1);
    EXPECT_LT((discrete_step_nfj(shifted.coupling, shifted.params, xs) - xs).lpNorm<Eigen::Infinity>(),
              1e-10 * scale);
    EXPECT_LT(vector_field_nfj(net, params, xs).lpNorm<Eigen::Infinity>(), 1e-10 * scale);
    const auto phi = [&](const oracle::Vec& y) { return energy_nfj(net, params, y); };
    const double grad_scale = std::max(1.0, params.sigma.maxCoeff() * std::pow(scale, params.p + 1.0));
    EXPECT_LT(oracle::fd_gradient(phi, xs).lpNorm<Eigen::Infinity>(), 1e-8 * grad_scale);
    // A point off the equilibrium is moved by the protocol.
    Vector off = xs;
    off(0) *= 1.1;
    EXPECT_GT((discrete_step_nfj(shifted.coupling, shifted.params, off) - off).norm(), 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Substochastic form

TEST(Substochastic, Transform) {
  const Network net = weighted_random(5, 6);
  const Matrix a = normalized_adjacency(net);
  const SubstochasticForm one = substochastic_transform(net, {Vector::Ones(5), Vector::Ones(5)});
  EXPECT_LT((one.b - a).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_EQ(one.sigma, Vector::Zero(5));
  const SubstochasticForm half =
      substochastic_transform(net, {Vector::Constant(5, 0.5), Vector::Ones(5)});
  EXPECT_LT((half.b - 0.5 * a).lpNorm<Eigen::Infinity>(), 1e-15);
  EXPECT_EQ(half.sigma, Vector::Ones(5));
  Rng rng(8);
  const SubstochasticForm mixed =
      substochastic_transform(net, {random_vector(rng, 5, 0.05, 1), Vector::Ones(5)});
  EXPECT_LE(mixed.b.rowwise().sum().maxCoeff(), 1.0 + 1e-15);
  try {
    substochastic_transform(edge_pair(), {vec({1, 0}), vec({1, 1})});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::division_by_zero_lambda);
    EXPECT_EQ(e.index(), 1u);
  }
}

// ---------------------------------------------------------------------------
// Energies

TEST(Energy, NfjHandValues) {
  const Network lone = Network::from_edges(1, {});
  EXPECT_NEAR(energy_nfj(lone, {vec({1}), vec({1}), {}, 1.0}, vec({1})), -1.0 / 6.0, 1e-15);
  const Network net = weighted_random(6, 2);
  const NfjParams free{Vector::Ones(6), Vector::Zero(6), {}, 1.0};
  EXPECT_EQ(energy_nfj(net, free, Vector::Constant(6, 2.5)), 0.0);
  Rng rng(1);
  EXPECT_GT(energy_nfj(net, free, random_vector(rng, 6, 1, 2)), 0.0);
}

TEST(Energy, NfjGradientIsNegativeField) {
  Rng rng(41);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 3 + static_cast<std::size_t>(k % 6);
    const Network net = weighted_random(n, 100 + static_cast<std::uint64_t>(k));
    const double p = k % 3 == 0 ? 1.0 : (k % 3 == 1 ? 2.0 : 0.7);
    const NfjParams params{random_vector(rng, n, 0.5, 100), random_vector(rng, n, 0, 5), {}, p};
    const Vector x = random_vector(rng, n, 0.3, 6);
    EXPECT_NEAR(energy_nfj(net, params, x),
                oracle::nfj_energy(net.weights(), params.u, params.sigma, p, x),
                1e-12 * std::max(1.0, std::abs(energy_nfj(net, params, x))));
    const auto phi = [&](const oracle::Vec& y) { return energy_nfj(net, params, y); };
    const Vector grad = oracle::fd_gradient(phi, x);
    const Vector field = vector_field_nfj(net, params, x);
    EXPECT_LT(oracle::max_rel_err(-grad, field), 1e-6) << "state " << k;
  }
}

TEST(Energy, TaylorSingleAgent) {
  // sigma = 1: Phi = -(1*2*2 + (1/2)(-1/2)(4)) = -3.
  const Network lone = Network::from_edges(1, {});
  EXPECT_NEAR(energy_taylor(lone, {vec({0.5}), vec({2})}, vec({2})), -3.0, 1e-15);
}

TEST(Energy, TaylorGradientOnSymmetricCoupling) {
  Rng rng(13);
  // Regular graphs with uniform lambda give a symmetric B.
  const std::vector<Network> graphs{complete_graph(4), complete_graph(6),
                                    Network::from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}})};
  for (const Network& net : graphs) {
    const auto n = net.size();
    for (double lambda : {0.3, 0.5, 1.0}) {
      const TaylorParams params{Vector::Constant(static_cast<Eigen::Index>(n), lambda),
                                random_vector(rng, n, 0, 5)};
      const Vector y = random_vector(rng, n, 0.1, 8);
      const auto phi = [&](const oracle::Vec& z) { return energy_taylor(net, params, z); };
      EXPECT_LT(oracle::max_rel_err(-oracle::fd_gradient(phi, y),
                                    transformed_taylor_field(net, params, y)),
                1e-6);
    }
  }
  const TaylorParams social{Vector::Ones(4), random_vector(rng, 4, 0, 5)};
  const Vector y = random_vector(rng, 4, 0.1, 8);
  const Matrix a = normalized_adjacency(complete_graph(4));
  double quad = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) quad += 0.25 * a(i, j) * std::pow(y(i) - y(j), 2);
  }
  EXPECT_NEAR(energy_taylor(complete_graph(4), social, y), quad, 1e-13);
}

TEST(Energy, TaylorTransformedFieldMatchesOriginal) {
  Rng rng(14);
  const Network net = weighted_random(7, 5);
  const TaylorParams params{random_vector(rng, 7, 0.1, 1), random_vector(rng, 7, 0, 4)};
  const Vector y = random_vector(rng, 7, 0.5, 3);
  const Vector x = params.lambda.cwiseProduct(y);
  const Vector want = vector_field_taylor(net, params, x).cwiseQuotient(params.lambda);
  EXPECT_LT(oracle::max_rel_err(transformed_taylor_field(net, params, y), want), 1e-13);
}

TEST(Energy, TaylorWeightedEnergyDrivesFlow) {
  Rng rng(15);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Network net = weighted_random(7, seed);
    const TaylorParams params{random_vector(rng, 7, 0.1, 1), random_vector(rng, 7, 0, 4)};
    const Vector x = random_vector(rng, 7, 0.5, 3);
    const auto psi = [&](const oracle::Vec& z) { return *energy_taylor_weighted(net, params, z); };
    const Vector metric = net.degrees().cwiseQuotient(params.lambda);
    const Vector flow = -oracle::fd_gradient(psi, x).cwiseQuotient(metric);
    EXPECT_LT(oracle::max_rel_err(flow, vector_field_taylor(net, params, x)), 1e-6);
  }
  EXPECT_FALSE(energy_taylor_weighted(edge_pair(), {vec({0, 1}), vec({1, 1})}, vec({1, 1})));
}

TEST(Energy, LinearFjGradient) {
  Rng rng(16);
  const Network net = weighted_random(6, 3);
  const LinearFjParams params{random_vector(rng, 6, 1, 10), random_vector(rng, 6, 0, 3)};
  const Vector x = random_vector(rng, 6, 0.5, 5);
  const auto phi = [&](const oracle::Vec& z) { return energy_linear_fj(net, params, z); };
  EXPECT_LT(oracle::max_rel_err(-oracle::fd_gradient(phi, x), vector_field_linear_fj(net, params, x)),
            1e-6);
}

TEST(Payout, NfjStationaryAtSteadyState) {
  Rng rng(51);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network net = weighted_random(6, seed);
    const NfjParams params{random_vector(rng, 6, 1, 30), random_vector(rng, 6, 0.5, 2), {}, 1.0};
    const Vector xs = newton_solve(net, params, std::nullopt).x_star;
    for (std::size_t i = 0; i < 6; ++i) {
      const auto f = [&](const oracle::Vec& xi) {
        Vector y = xs;
        y(static_cast<Eigen::Index>(i)) = xi(0);
        return payout_nfj(net, params, y, i);
      };
      const double scale = std::max(1.0, params.sigma(i) * std::pow(xs(i), 2.0) + net.degrees()(i) * xs(i));
      EXPECT_NEAR(oracle::fd_gradient(f, vec({xs(i)}))(0) / scale, 0.0, 1e-9);
    }
  }
}
