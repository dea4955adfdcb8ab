#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "opflow/dynamics.hpp"
#include "opflow/edge_list.hpp"
#include "opflow/equilibrium.hpp"
#include "opflow/error.hpp"

namespace opflow {

using json = nlohmann::json;

/// Per-group mean and (population) standard deviation over time.
struct GroupStats {
  std::vector<int> labels;               // group ids, ascending
  std::vector<double> times;
  std::vector<std::vector<double>> mean;  // [group][sample]
  std::vector<std::vector<double>> stdev;  // [group][sample]

  std::size_t index_of(int label) const {
    for (std::size_t g = 0; g < labels.size(); ++g) {
      if (labels[g] == label) return g;
    }
    throw Error(Errc::invalid_argument, "unknown group " + std::to_string(label));
  }
  double final_mean(int label) const { return mean[index_of(label)].back(); }
};

/// `groups[i]` is the group id of node i.
inline GroupStats group_stats(const Trajectory& traj, const std::vector<int>& groups) {
  GroupStats out;
  for (int g : groups) {
    if (std::find(out.labels.begin(), out.labels.end(), g) == out.labels.end()) {
      out.labels.push_back(g);
    }
  }
  std::sort(out.labels.begin(), out.labels.end());
  out.times = traj.times;
  const std::size_t k = out.labels.size();
  out.mean.assign(k, std::vector<double>(traj.samples()));
  out.stdev.assign(k, std::vector<double>(traj.samples()));
  std::vector<std::size_t> slot(groups.size());
  std::vector<double> count(k, 0.0);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    slot[i] = out.index_of(groups[i]);
    count[slot[i]] += 1.0;
  }
  for (std::size_t s = 0; s < traj.samples(); ++s) {
    const Vector& x = traj.states[s];
    std::vector<double> sum(k, 0.0);
    std::vector<double> sq(k, 0.0);
    for (std::size_t i = 0; i < groups.size(); ++i) sum[slot[i]] += x(static_cast<Eigen::Index>(i));
    for (std::size_t g = 0; g < k; ++g) out.mean[g][s] = sum[g] / count[g];
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const double d = x(static_cast<Eigen::Index>(i)) - out.mean[slot[i]][s];
      sq[slot[i]] += d * d;
    }
    for (std::size_t g = 0; g < k; ++g) out.stdev[g][s] = std::sqrt(sq[g] / count[g]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV. Numbers use the shortest round-trip representation, so identical
// results give identical bytes.

inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  out << "t,node,value\n";
  for (std::size_t s = 0; s < traj.samples(); ++s) {
    const std::string t = detail::format_double(traj.times[s]);
    const Vector& x = traj.states[s];
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      out << t << ',' << i << ',' << detail::format_double(x(i)) << '\n';
    }
  }
}

inline void write_summary_csv(std::ostream& out, const Trajectory& traj) {
  out << "t,energy,spread,mean\n";
  for (std::size_t s = 0; s < traj.samples(); ++s) {
    out << detail::format_double(traj.times[s]) << ',';
    if (!std::isnan(traj.energy[s])) out << detail::format_double(traj.energy[s]);
    out << ',' << detail::format_double(traj.spread[s]) << ','
        << detail::format_double(traj.mean[s]) << '\n';
  }
}

inline void write_group_stats_csv(std::ostream& out, const GroupStats& stats) {
  out << "t,group,mean,std\n";
  for (std::size_t s = 0; s < stats.times.size(); ++s) {
    const std::string t = detail::format_double(stats.times[s]);
    for (std::size_t g = 0; g < stats.labels.size(); ++g) {
      out << t << ',' << stats.labels[g] << ',' << detail::format_double(stats.mean[g][s]) << ','
          << detail::format_double(stats.stdev[g][s]) << '\n';
    }
  }
}

template <class Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  writer(out);
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json_array(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline Vector vector_from_json(const json& j) {
  if (!j.is_array()) throw Error(Errc::config_error, "expected a numeric array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(Errc::config_error, "expected a numeric array");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

// JSON has no representation for non-finite numbers.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json params_json(const Model& model) {
  return std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, NfjParams>) {
          json pinned = json::array();
          for (std::size_t i = 0; i < m.pinned.size(); ++i) {
            if (m.pinned[i]) pinned.push_back(i);
          }
          return {{"model", "nfj"}, {"p", m.p}, {"u", to_json_array(m.u)},
                  {"sigma", to_json_array(m.sigma)}, {"pinned", pinned}};
        } else if constexpr (std::is_same_v<T, TaylorParams>) {
          return {{"model", "taylor"}, {"lambda", to_json_array(m.lambda)}, {"u", to_json_array(m.u)}};
        } else if constexpr (std::is_same_v<T, LinearFjParams>) {
          return {{"model", "fj"}, {"u", to_json_array(m.u)}, {"sigma", to_json_array(m.sigma)}};
        } else {
          return {{"model", "abelson"},
                  {"coupling", m.coupling == Coupling::raw ? "raw" : "normalized"}};
        }
      },
      model);
}

inline json certificate_json(const EquilibriumCertificate& cert, const Model& model,
                             std::uint64_t seed) {
  json out;
  out["x_star"] = to_json_array(cert.x_star);
  out["residual"] = finite_or_null(cert.residual);
  out["jac_min_eig"] = finite_or_null(cert.jac_min_eig);
  out["m_matrix_ok"] = cert.m_matrix_ok;
  out["nash_ok"] = cert.nash_ok ? json(*cert.nash_ok) : json(nullptr);
  out["multistart_agreement"] = finite_or_null(cert.multistart_agreement);
  out["params_echo"] = params_json(model);
  out["seed"] = seed;
  return out;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  write_file(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::config_error, path.string() + ": " + e.what());
  }
}

}  // namespace opflow
