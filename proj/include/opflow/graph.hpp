#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <queue>
#include <string>
#include <vector>

#include "opflow/error.hpp"
#include "opflow/random.hpp"

namespace opflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Edge {
  std::size_t i;
  std::size_t j;
  double weight = 1.0;
};

enum class SymmetryPolicy { reject, symmetrize };

/// Symmetric, entrywise nonnegative coupling matrix on n >= 1 nodes.
///
/// Immutable after construction. Holds the dense weights (used by the
/// eigensolvers and Jacobians) together with a compressed row copy and the
/// weighted degrees d_i = sum_j M_ij (used by every vector-field evaluation).
class Network {
 public:
  /// Builds from a dense matrix. Asymmetric input is rejected, or replaced
  /// by max(M_ij, M_ji) under SymmetryPolicy::symmetrize.
  static Network from_matrix(Matrix weights,
                             SymmetryPolicy policy = SymmetryPolicy::reject) {
    detail::require(weights.rows() >= 1, "network needs at least one node");
    detail::require(weights.rows() == weights.cols(), "weight matrix must be square");
    const Eigen::Index n = weights.rows();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double w = weights(i, j);
        if (!std::isfinite(w) || w < 0.0) {
          throw Error(Errc::negative_weight,
                      "weights must be finite and nonnegative",
                      static_cast<std::size_t>(i), w);
        }
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        if (weights(i, j) == weights(j, i)) continue;
        if (policy == SymmetryPolicy::reject) {
          throw Error(Errc::asymmetric_input, "weight matrix is not symmetric",
                      static_cast<std::size_t>(i));
        }
        const double w = std::max(weights(i, j), weights(j, i));
        weights(i, j) = w;
        weights(j, i) = w;
      }
    }
    return Network(std::move(weights));
  }

  /// Undirected edges; duplicates collapse to the maximum weight.
  static Network from_edges(std::size_t n, const std::vector<Edge>& edges) {
    detail::require(n >= 1, "network needs at least one node");
    Matrix w = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (const auto& e : edges) {
      detail::require(e.i < n && e.j < n, "edge endpoint out of range");
      if (!std::isfinite(e.weight) || e.weight < 0.0) {
        throw Error(Errc::negative_weight, "edge weight must be nonnegative", e.i, e.weight);
      }
      const auto a = static_cast<Eigen::Index>(e.i);
      const auto b = static_cast<Eigen::Index>(e.j);
      const double v = std::max(w(a, b), e.weight);
      w(a, b) = v;
      w(b, a) = v;
    }
    return Network(std::move(w));
  }

  std::size_t size() const { return static_cast<std::size_t>(weights_.rows()); }
  const Matrix& weights() const { return weights_; }
  const SparseMatrix& sparse() const { return sparse_; }
  const Vector& degrees() const { return degrees_; }
  double weight(std::size_t i, std::size_t j) const {
    return weights_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  bool is_symmetric() const { return true; }

  /// Unordered pairs {i, j} (self-loops included) with positive weight.
  std::size_t edge_count() const {
    std::size_t count = 0;
    for (int k = 0; k < sparse_.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(sparse_, k); it; ++it) {
        if (it.col() >= it.row()) ++count;
      }
    }
    return count;
  }

  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (int k = 0; k < sparse_.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(sparse_, k); it; ++it) {
        if (it.col() >= it.row()) {
          out.push_back({static_cast<std::size_t>(it.row()),
                         static_cast<std::size_t>(it.col()), it.value()});
        }
      }
    }
    return out;
  }

  bool has_self_loops() const { return (weights_.diagonal().array() > 0.0).any(); }

  friend bool operator==(const Network& a, const Network& b) {
    return a.weights_.rows() == b.weights_.rows() && a.weights_ == b.weights_;
  }

 private:
  explicit Network(Matrix weights) : weights_(std::move(weights)) {
    sparse_ = weights_.sparseView(0.0, 0.0);
    sparse_.makeCompressed();
    degrees_ = weights_.rowwise().sum();
  }

  Matrix weights_;
  SparseMatrix sparse_;
  Vector degrees_;
};

struct DegreeData {
  Vector degrees;
  Matrix laplacian;
  double fiedler = 0.0;
};

inline bool is_connected(const Network& net) {
  const std::size_t n = net.size();
  std::vector<char> seen(n, 0);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = 1;
  std::size_t reached = 1;
  const auto& s = net.sparse();
  while (!frontier.empty()) {
    const std::size_t v = frontier.front();
    frontier.pop();
    for (SparseMatrix::InnerIterator it(s, static_cast<Eigen::Index>(v)); it; ++it) {
      const auto w = static_cast<std::size_t>(it.col());
      if (!seen[w]) {
        seen[w] = 1;
        ++reached;
        frontier.push(w);
      }
    }
  }
  return reached == n;
}

/// Row-stochastic A with A_ij = M_ij / d_i.
inline Matrix normalized_adjacency(const Network& net) {
  const auto& d = net.degrees();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d(i) > 0.0)) {
      throw Error(Errc::isolated_node, "node has no neighbor with positive weight",
                  static_cast<std::size_t>(i));
    }
  }
  return d.cwiseInverse().asDiagonal() * net.weights();
}

inline Matrix laplacian(const Network& net) {
  Matrix l = -net.weights();
  l.diagonal() += net.degrees();
  return l;
}

/// Degrees, Laplacian D_M - M and its second-smallest eigenvalue.
inline DegreeData degree_data(const Network& net) {
  DegreeData out;
  out.degrees = net.degrees();
  out.laplacian = laplacian(net);
  if (net.size() >= 2) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(out.laplacian, Eigen::EigenvaluesOnly);
    out.fiedler = std::max(0.0, solver.eigenvalues()(1));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generators. All are pure functions of (parameters, seed); samplers that can
// produce disconnected graphs resample up to `max_attempts` times.

inline constexpr int kDefaultGeneratorAttempts = 100;

namespace detail {

inline void require_probability(double p, const char* name) {
  require(p >= 0.0 && p <= 1.0, std::string(name) + " must lie in [0, 1]");
}

template <class Sampler>
Network sample_connected(Sampler&& sample, Rng& rng, int max_attempts, const char* what) {
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Network net = sample(rng);
    if (is_connected(net)) return net;
  }
  throw Error(Errc::disconnected_after_retries,
              std::string(what) + ": no connected sample after " +
                  std::to_string(max_attempts) + " attempts");
}

}  // namespace detail

inline Network complete_graph(std::size_t n) {
  detail::require(n >= 2, "complete graph needs n >= 2");
  const auto m = static_cast<Eigen::Index>(n);
  Matrix w = Matrix::Ones(m, m);
  w.diagonal().setZero();
  return Network::from_matrix(std::move(w));
}

inline Network erdos_renyi(std::size_t n, double p_edge, std::uint64_t seed,
                           int max_attempts = kDefaultGeneratorAttempts) {
  detail::require(n >= 1, "erdos_renyi needs n >= 1");
  detail::require_probability(p_edge, "edge probability");
  Rng rng(seed);
  return detail::sample_connected(
      [&](Rng& r) {
        std::vector<Edge> edges;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            if (r.bernoulli(p_edge)) edges.push_back({i, j, 1.0});
          }
        }
        return Network::from_edges(n, edges);
      },
      rng, max_attempts, "erdos_renyi");
}

/// Node ids are assigned block by block: block 0 holds ids [0, sizes[0]).
inline Network stochastic_block_model(const std::vector<std::size_t>& sizes, double p_in,
                                      double p_out, std::uint64_t seed,
                                      int max_attempts = kDefaultGeneratorAttempts) {
  detail::require(!sizes.empty(), "stochastic_block_model needs at least one block");
  detail::require_probability(p_in, "p_in");
  detail::require_probability(p_out, "p_out");
  std::vector<std::size_t> block;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    detail::require(sizes[b] >= 1, "block sizes must be positive");
    block.insert(block.end(), sizes[b], b);
  }
  const std::size_t n = block.size();
  Rng rng(seed);
  return detail::sample_connected(
      [&](Rng& r) {
        std::vector<Edge> edges;
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = i + 1; j < n; ++j) {
            if (r.bernoulli(block[i] == block[j] ? p_in : p_out)) edges.push_back({i, j, 1.0});
          }
        }
        return Network::from_edges(n, edges);
      },
      rng, max_attempts, "stochastic_block_model");
}

/// Node 0 is the core and links to every other node; the remaining pairs
/// appear independently with probability p_edge. Connected by construction.
inline Network core_periphery(std::size_t n, double p_edge, std::uint64_t seed) {
  detail::require(n >= 2, "core_periphery needs n >= 2");
  detail::require_probability(p_edge, "edge probability");
  Rng rng(seed);
  std::vector<Edge> edges;
  for (std::size_t j = 1; j < n; ++j) edges.push_back({0, j, 1.0});
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.bernoulli(p_edge)) edges.push_back({i, j, 1.0});
    }
  }
  return Network::from_edges(n, edges);
}

}  // namespace opflow
