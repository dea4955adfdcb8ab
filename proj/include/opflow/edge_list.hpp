#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "opflow/error.hpp"
#include "opflow/graph.hpp"

// Edge-list text format
//
//   # any comment
//   # nodes: N          (optional directive, see below)
//   i j [w]
//
// One edge per line, whitespace separated integer ids and an optional
// nonnegative weight (default 1). Ids are compacted to 0..n-1 in order of
// first appearance. When the `# nodes: N` directive is present the ids are
// taken literally instead (after removing the indexing offset) and the
// network has exactly N nodes; save_edge_list writes it whenever compaction
// alone would lose isolated nodes or reorder ids.

namespace opflow {

enum class Indexing { zero, one };

struct EdgeListOptions {
  Indexing indexing = Indexing::zero;
  bool symmetrize = true;
  // When false, a third column is ignored (e.g. timestamps in message logs).
  bool use_weights = true;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r' ||
                                 line[pos] == ',')) {
      ++pos;
    }
    const std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t' && line[pos] != '\r' &&
           line[pos] != ',') {
      ++pos;
    }
    if (pos > start) out.push_back(line.substr(start, pos - start));
  }
  return out;
}

template <class T>
bool parse_number(std::string_view tok, T& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last;
}

}  // namespace detail

inline Network parse_edge_list(std::istream& in, const EdgeListOptions& opts = {}) {
  struct Entry {
    long long a, b;
    double w;
    std::size_t line;
  };
  std::vector<Entry> entries;
  std::optional<std::size_t> declared_nodes;
  const long long offset = opts.indexing == Indexing::one ? 1 : 0;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view view(line);
    const auto first = view.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) continue;
    if (view[first] == '#') {
      auto toks = detail::split_ws(view.substr(first + 1));
      if (toks.size() == 2 && toks[0] == "nodes:") {
        std::size_t n = 0;
        if (!detail::parse_number(toks[1], n) || n == 0) {
          throw Error(Errc::parse_error, "bad nodes directive on line " + std::to_string(lineno),
                      lineno);
        }
        declared_nodes = n;
      }
      continue;
    }
    auto toks = detail::split_ws(view);
    if (toks.size() < 2 || (opts.use_weights && toks.size() > 3)) {
      throw Error(Errc::parse_error, "expected 'i j [w]' on line " + std::to_string(lineno),
                  lineno);
    }
    Entry e{0, 0, 1.0, lineno};
    if (!detail::parse_number(toks[0], e.a) || !detail::parse_number(toks[1], e.b)) {
      throw Error(Errc::parse_error, "non-integer node id on line " + std::to_string(lineno),
                  lineno);
    }
    e.a -= offset;
    e.b -= offset;
    if (e.a < 0 || e.b < 0) {
      throw Error(Errc::parse_error, "node id below index base on line " + std::to_string(lineno),
                  lineno);
    }
    if (opts.use_weights && toks.size() == 3) {
      if (!detail::parse_number(toks[2], e.w) || !std::isfinite(e.w)) {
        throw Error(Errc::parse_error, "bad weight on line " + std::to_string(lineno), lineno);
      }
      if (e.w < 0.0) {
        throw Error(Errc::negative_weight, "negative weight on line " + std::to_string(lineno),
                    lineno, e.w);
      }
    }
    entries.push_back(e);
  }

  // Map raw ids to compact indices.
  std::size_t n = 0;
  std::unordered_map<long long, std::size_t> index;
  auto id_of = [&](long long raw, std::size_t at_line) -> std::size_t {
    if (declared_nodes) {
      if (static_cast<unsigned long long>(raw) >= *declared_nodes) {
        throw Error(Errc::parse_error,
                    "node id exceeds declared node count on line " + std::to_string(at_line),
                    at_line);
      }
      return static_cast<std::size_t>(raw);
    }
    auto [it, inserted] = index.try_emplace(raw, n);
    if (inserted) ++n;
    return it->second;
  };
  std::vector<Edge> edges;
  std::vector<std::size_t> edge_lines;
  edges.reserve(entries.size());
  for (const auto& e : entries) {
    const std::size_t a = id_of(e.a, e.line);
    const std::size_t b = id_of(e.b, e.line);
    edges.push_back({a, b, e.w});
    edge_lines.push_back(e.line);
  }
  if (declared_nodes) n = *declared_nodes;
  if (n == 0) throw Error(Errc::parse_error, "edge list contains no edges");

  if (!opts.symmetrize) {
    std::map<std::pair<std::size_t, std::size_t>, std::pair<double, std::size_t>> directed;
    for (std::size_t k = 0; k < edges.size(); ++k) {
      auto key = std::make_pair(edges[k].i, edges[k].j);
      auto [it, inserted] = directed.try_emplace(key, edges[k].weight, edge_lines[k]);
      if (!inserted) it->second.first = std::max(it->second.first, edges[k].weight);
    }
    for (const auto& [key, val] : directed) {
      auto rev = directed.find({key.second, key.first});
      if (rev == directed.end() || rev->second.first != val.first) {
        throw Error(Errc::asymmetric_input,
                    "edge without matching reverse edge on line " + std::to_string(val.second),
                    val.second);
      }
    }
  }
  return Network::from_edges(n, edges);
}

inline Network load_edge_list(const std::filesystem::path& path,
                              const EdgeListOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io_error, "cannot open edge list " + path.string());
  return parse_edge_list(in, opts);
}

/// True when reading `edges` back with first-appearance compaction would
/// reproduce node ids 0..n-1 exactly, so no directive is needed.
inline bool edge_order_is_canonical(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<char> seen(n, 0);
  std::size_t next = 0;
  for (const auto& e : edges) {
    for (std::size_t v : {e.i, e.j}) {
      if (seen[v]) continue;
      if (v != next) return false;
      seen[v] = 1;
      ++next;
    }
  }
  return next == n;
}

/// One line per undirected edge (i <= j); the weight column is omitted for
/// unit weights. The `# nodes:` directive is written first unless the edge
/// order alone already determines the node ids.
inline void write_edge_list(std::ostream& out, const Network& net,
                            Indexing indexing = Indexing::zero) {
  const std::size_t offset = indexing == Indexing::one ? 1 : 0;
  const std::vector<Edge> edges = net.edges();
  if (!edge_order_is_canonical(net.size(), edges)) out << "# nodes: " << net.size() << '\n';
  for (const auto& e : edges) {
    out << (e.i + offset) << ' ' << (e.j + offset);
    if (e.weight != 1.0) out << ' ' << detail::format_double(e.weight);
    out << '\n';
  }
}

inline void save_edge_list(const std::filesystem::path& path, const Network& net,
                           Indexing indexing = Indexing::zero) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_error, "cannot write edge list " + path.string());
  write_edge_list(out, net, indexing);
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

}  // namespace opflow
