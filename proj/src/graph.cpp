#include "hivae/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <tuple>

#include "hivae/error.hpp"
#include "hivae/rng.hpp"

namespace hivae {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

SpatialGraph::SpatialGraph(std::vector<NodeRecord> nodes, std::vector<EdgeRecord> edges,
                           std::vector<NodeId> goals)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), goals_(std::move(goals)) {
  std::sort(nodes_.begin(), nodes_.end(),
            [](const NodeRecord& a, const NodeRecord& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id != static_cast<NodeId>(i)) {
      std::ostringstream msg;
      msg << "node ids must be unique and dense in [0, " << nodes_.size() << "): ";
      if (i > 0 && nodes_[i].id == nodes_[i - 1].id)
        msg << "duplicate id " << nodes_[i].id;
      else
        msg << "missing id " << i;
      throw DataError(msg.str());
    }
    if (!std::isfinite(nodes_[i].x) || !std::isfinite(nodes_[i].y))
      throw DataError("node " + std::to_string(i) + ": non-finite coordinate");
  }
  const auto n = static_cast<NodeId>(nodes_.size());
  out_.assign(nodes_.size(), {});
  in_.assign(nodes_.size(), {});
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto& rec = edges_[e];
    std::ostringstream where;
    where << "edge #" << e << " (src=" << rec.src << ", dst=" << rec.dst << ")";
    if (rec.src < 0 || rec.src >= n)
      throw DataError(where.str() + ": dangling endpoint " + std::to_string(rec.src));
    if (rec.dst < 0 || rec.dst >= n)
      throw DataError(where.str() + ": dangling endpoint " + std::to_string(rec.dst));
    if (!(rec.length > 0.0) || !std::isfinite(rec.length))
      throw DataError(where.str() + ": length must be positive and finite");
    out_[rec.src].push_back(e);
    in_[rec.dst].push_back(e);
  }
  auto by_dst = [this](std::size_t a, std::size_t b) {
    return std::tie(edges_[a].dst, edges_[a].length, a) < std::tie(edges_[b].dst, edges_[b].length, b);
  };
  auto by_src = [this](std::size_t a, std::size_t b) {
    return std::tie(edges_[a].src, edges_[a].length, a) < std::tie(edges_[b].src, edges_[b].length, b);
  };
  for (auto& list : out_) std::sort(list.begin(), list.end(), by_dst);
  for (auto& list : in_) std::sort(list.begin(), list.end(), by_src);

  if (goals_.empty()) throw DataError("goal set is empty");
  goal_pos_.assign(nodes_.size(), -1);
  for (std::size_t i = 0; i < goals_.size(); ++i) {
    const NodeId gid = goals_[i];
    if (gid < 0 || gid >= n)
      throw DataError("goal #" + std::to_string(i) + ": unknown node " + std::to_string(gid));
    if (goal_pos_[gid] >= 0)
      throw DataError("goal #" + std::to_string(i) + ": duplicate node " + std::to_string(gid));
    goal_pos_[gid] = static_cast<std::int64_t>(i);
  }
}

std::optional<double> SpatialGraph::edge_length(NodeId u, NodeId v) const {
  if (!valid_node(u) || !valid_node(v)) return std::nullopt;
  std::optional<double> best;
  for (std::size_t e : out_[u]) {
    if (edges_[e].dst == v && (!best || edges_[e].length < *best)) best = edges_[e].length;
  }
  return best;
}

std::optional<std::size_t> SpatialGraph::goal_index(NodeId id) const {
  if (!valid_node(id) || goal_pos_[id] < 0) return std::nullopt;
  return static_cast<std::size_t>(goal_pos_[id]);
}

double SpatialGraph::mean_edge_length() const {
  if (edges_.empty()) return 1.0;
  double total = 0.0;
  for (const auto& e : edges_) total += e.length;
  return total / static_cast<double>(edges_.size());
}

double SpatialGraph::distance(NodeId a, NodeId b) const {
  const auto& p = node(a);
  const auto& q = node(b);
  return std::hypot(p.x - q.x, p.y - q.y);
}

SpatialGraph SpatialGraph::with_goals(std::vector<NodeId> goals) const {
  return SpatialGraph(nodes_, edges_, std::move(goals));
}

std::string SpatialGraph::content_hash() const { return fnv1a_hex(graph_to_json(*this).dump()); }

// ---------------------------------------------------------------------------
// JSON

namespace {

double required_number(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number())
    throw DataError(where + ": missing numeric field \"" + key + "\"");
  return obj[key].get<double>();
}

NodeId required_id(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number_integer())
    throw DataError(where + ": missing integer field \"" + key + "\"");
  return obj[key].get<NodeId>();
}

}  // namespace

SpatialGraph graph_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw DataError("graph document must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key != "nodes" && key != "edges" && key != "goals" && key != "format_version")
      throw DataError("unknown top-level key \"" + key + "\"");
  }
  if (doc.contains("format_version") && doc["format_version"] != 1)
    throw DataError("unsupported format_version " + doc["format_version"].dump());
  for (const char* key : {"nodes", "edges", "goals"}) {
    if (!doc.contains(key) || !doc[key].is_array())
      throw DataError(std::string("missing array \"") + key + "\"");
  }

  const auto& jnodes = doc["nodes"];
  std::vector<NodeRecord> nodes;
  nodes.reserve(jnodes.size());
  bool geographic = false;
  for (std::size_t i = 0; i < jnodes.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "]";
    if (!jnodes[i].is_object()) throw DataError(where + ": expected object");
    geographic = geographic || jnodes[i].contains("lat");
  }
  double lat0 = 0.0, lon0 = 0.0;
  if (geographic) {
    for (std::size_t i = 0; i < jnodes.size(); ++i) {
      const std::string where = "nodes[" + std::to_string(i) + "]";
      lat0 += required_number(jnodes[i], "lat", where);
      lon0 += required_number(jnodes[i], "lon", where);
    }
    lat0 /= static_cast<double>(std::max<std::size_t>(1, jnodes.size()));
    lon0 /= static_cast<double>(std::max<std::size_t>(1, jnodes.size()));
  }
  constexpr double kEarthRadius = 6371008.8;
  constexpr double kDeg = 3.14159265358979323846 / 180.0;
  for (std::size_t i = 0; i < jnodes.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "]";
    NodeRecord rec;
    rec.id = required_id(jnodes[i], "id", where);
    if (geographic) {
      const double lat = required_number(jnodes[i], "lat", where);
      const double lon = required_number(jnodes[i], "lon", where);
      rec.x = kEarthRadius * (lon - lon0) * kDeg * std::cos(lat0 * kDeg);
      rec.y = kEarthRadius * (lat - lat0) * kDeg;
    } else {
      rec.x = required_number(jnodes[i], "x", where);
      rec.y = required_number(jnodes[i], "y", where);
    }
    nodes.push_back(rec);
  }

  const auto& jedges = doc["edges"];
  std::vector<EdgeRecord> edges;
  edges.reserve(jedges.size());
  for (std::size_t i = 0; i < jedges.size(); ++i) {
    const std::string where = "edges[" + std::to_string(i) + "]";
    if (!jedges[i].is_object()) throw DataError(where + ": expected object");
    EdgeRecord rec;
    rec.src = required_id(jedges[i], "src", where);
    rec.dst = required_id(jedges[i], "dst", where);
    rec.length = required_number(jedges[i], "length", where);
    const auto n = static_cast<NodeId>(nodes.size());
    for (NodeId end : {rec.src, rec.dst}) {
      if (end < 0 || end >= n)
        throw DataError(where + ": dangling endpoint " + std::to_string(end) + " (graph has " +
                        std::to_string(n) + " nodes)");
    }
    if (!(rec.length > 0.0)) throw DataError(where + ": non-positive length");
    edges.push_back(rec);
    if (jedges[i].value("bidirectional", false)) edges.push_back({rec.dst, rec.src, rec.length});
  }

  std::vector<NodeId> goals;
  for (std::size_t i = 0; i < doc["goals"].size(); ++i) {
    const auto& v = doc["goals"][i];
    if (!v.is_number_integer())
      throw DataError("goals[" + std::to_string(i) + "]: expected integer node id");
    goals.push_back(v.get<NodeId>());
  }
  return SpatialGraph(std::move(nodes), std::move(edges), std::move(goals));
}

nlohmann::json graph_to_json(const SpatialGraph& g) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  auto& jnodes = doc["nodes"] = nlohmann::json::array();
  for (const auto& n : g.nodes()) jnodes.push_back({{"id", n.id}, {"x", n.x}, {"y", n.y}});
  auto& jedges = doc["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges())
    jedges.push_back({{"src", e.src}, {"dst", e.dst}, {"length", e.length}});
  doc["goals"] = g.goals();
  return doc;
}

SpatialGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open graph file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": parse error: " + e.what());
  }
  try {
    return graph_from_json(doc);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void save_graph(const SpatialGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write graph file " + path.string());
  out << graph_to_json(g).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic generator

SpatialGraph generate_synthetic_graph(const GridGraphSpec& spec) {
  if (spec.grid_width < 2 || spec.grid_height < 2)
    throw ConfigError("grid dimensions must be at least 2x2");
  if (spec.diagonal_probability < 0.0 || spec.diagonal_probability > 1.0)
    throw ConfigError("diagonal_probability must lie in [0, 1]");
  if (spec.jitter < 0.0 || spec.jitter > 0.9) throw ConfigError("jitter must lie in [0, 0.9]");
  if (!(spec.spacing > 0.0)) throw ConfigError("spacing must be positive");
  const int width = spec.grid_width;
  const int height = spec.grid_height;
  const auto num_nodes = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const int num_goals = spec.num_goals < 0 ? static_cast<int>(num_nodes) : spec.num_goals;
  if (num_goals < 2 || static_cast<std::size_t>(num_goals) > num_nodes)
    throw ConfigError("num_goals must lie in [2, " + std::to_string(num_nodes) + "], got " +
                      std::to_string(num_goals));

  RngStream rng = RngStream::derive(spec.seed, {stream::kGraph});
  auto id_of = [width](int col, int row) { return static_cast<NodeId>(row * width + col); };

  std::vector<NodeRecord> nodes(num_nodes);
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const double dx = spec.jitter > 0.0 ? rng.uniform(-0.5, 0.5) * spec.jitter : 0.0;
      const double dy = spec.jitter > 0.0 ? rng.uniform(-0.5, 0.5) * spec.jitter : 0.0;
      nodes[id_of(col, row)] = {id_of(col, row), (col + dx) * spec.spacing, (row + dy) * spec.spacing};
    }
  }

  std::vector<EdgeRecord> edges;
  auto link = [&](NodeId a, NodeId b) {
    const double len = std::hypot(nodes[a].x - nodes[b].x, nodes[a].y - nodes[b].y);
    edges.push_back({a, b, len});
    edges.push_back({b, a, len});
  };
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      if (col + 1 < width) link(id_of(col, row), id_of(col + 1, row));
      if (row + 1 < height) link(id_of(col, row), id_of(col, row + 1));
      if (col + 1 < width && row + 1 < height && spec.diagonal_probability > 0.0 &&
          rng.uniform() < spec.diagonal_probability) {
        if (rng.uniform() < 0.5)
          link(id_of(col, row), id_of(col + 1, row + 1));
        else
          link(id_of(col + 1, row), id_of(col, row + 1));
      }
    }
  }

  std::vector<NodeId> goals(num_nodes);
  std::iota(goals.begin(), goals.end(), 0);
  if (static_cast<std::size_t>(num_goals) < num_nodes) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(num_goals); ++i) {
      const std::size_t j = i + rng.index(num_nodes - i);
      std::swap(goals[i], goals[j]);
    }
    goals.resize(static_cast<std::size_t>(num_goals));
    std::sort(goals.begin(), goals.end());
  }
  return SpatialGraph(std::move(nodes), std::move(edges), std::move(goals));
}

// ---------------------------------------------------------------------------
// Paths

bool lengths_equal(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

bool path_less(const PathResult& a, const PathResult& b) {
  if (!lengths_equal(a.length, b.length)) return a.length < b.length;
  return a.nodes < b.nodes;
}

double path_length(const SpatialGraph& g, const std::vector<NodeId>& nodes) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    const auto len = g.edge_length(nodes[i], nodes[i + 1]);
    if (!len)
      throw DataError("no edge " + std::to_string(nodes[i]) + " -> " + std::to_string(nodes[i + 1]));
    total += *len;
  }
  return total;
}

namespace {

bool node_blocked(const PathConstraints& c, NodeId v) {
  return !c.blocked_nodes.empty() && c.blocked_nodes[static_cast<std::size_t>(v)];
}

bool edge_blocked(const PathConstraints& c, NodeId u, NodeId v) {
  return !c.blocked_edges.empty() && c.blocked_edges.count({u, v}) > 0;
}

// Dijkstra from `root` over forward (reverse=false) or reversed edges.
std::vector<double> dijkstra(const SpatialGraph& g, NodeId root, bool reverse,
                             const PathConstraints& c) {
  std::vector<double> dist(g.num_nodes(), kInf);
  if (node_blocked(c, root)) return dist;
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[root] = 0.0;
  heap.emplace(0.0, root);
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    const auto& incident = reverse ? g.in_edges(u) : g.out_edges(u);
    for (std::size_t e : incident) {
      const auto& rec = g.edges()[e];
      const NodeId v = reverse ? rec.src : rec.dst;
      if (node_blocked(c, v)) continue;
      if (reverse ? edge_blocked(c, v, u) : edge_blocked(c, u, v)) continue;
      const double nd = d + rec.length;
      if (nd < dist[v]) {
        dist[v] = nd;
        heap.emplace(nd, v);
      }
    }
  }
  return dist;
}

}  // namespace

std::vector<double> distances_from(const SpatialGraph& g, NodeId src) {
  return dijkstra(g, src, false, {});
}

std::vector<double> distances_to(const SpatialGraph& g, NodeId dst) {
  return dijkstra(g, dst, true, {});
}

std::optional<PathResult> shortest_path(const SpatialGraph& g, NodeId src, NodeId dst,
                                        const PathConstraints& c) {
  if (!g.valid_node(src) || !g.valid_node(dst))
    throw DataError("invalid node id in path query (" + std::to_string(src) + ", " +
                    std::to_string(dst) + ")");
  if (node_blocked(c, src) || node_blocked(c, dst)) return std::nullopt;
  const std::vector<double> to_dst = dijkstra(g, dst, true, c);
  if (!std::isfinite(to_dst[src])) return std::nullopt;

  // Greedy walk over tight edges picking the smallest successor id yields the
  // lexicographically smallest minimum-length sequence.
  PathResult result;
  result.nodes.push_back(src);
  NodeId u = src;
  while (u != dst) {
    NodeId next = -1;
    for (std::size_t e : g.out_edges(u)) {
      const auto& rec = g.edges()[e];
      const NodeId v = rec.dst;
      if (node_blocked(c, v) || edge_blocked(c, u, v) || !std::isfinite(to_dst[v])) continue;
      if (!(to_dst[v] < to_dst[u])) continue;
      if (lengths_equal(rec.length + to_dst[v], to_dst[u]) && (next < 0 || v < next)) next = v;
    }
    if (next < 0) return std::nullopt;  // unreachable in exact arithmetic
    result.nodes.push_back(next);
    u = next;
  }
  result.length = path_length(g, result.nodes);
  return result;
}

PathResult shortest_path(const SpatialGraph& g, NodeId src, NodeId dst) {
  auto found = shortest_path(g, src, dst, PathConstraints{});
  if (!found)
    throw NoPathError("no path from node " + std::to_string(src) + " to node " + std::to_string(dst));
  return *std::move(found);
}

std::vector<PathResult> k_shortest_paths(const SpatialGraph& g, NodeId src, NodeId dst,
                                         std::size_t k) {
  if (k == 0) throw ConfigError("k_shortest_paths requires k >= 1");
  std::vector<PathResult> accepted{shortest_path(g, src, dst)};
  std::vector<PathResult> candidates;
  auto known = [&](const std::vector<NodeId>& seq) {
    for (const auto& p : accepted)
      if (p.nodes == seq) return true;
    for (const auto& p : candidates)
      if (p.nodes == seq) return true;
    return false;
  };

  while (accepted.size() < k) {
    const PathResult& last = accepted.back();
    for (std::size_t i = 0; i + 1 < last.nodes.size(); ++i) {
      const NodeId spur = last.nodes[i];
      PathConstraints c;
      c.blocked_nodes.assign(g.num_nodes(), false);
      for (std::size_t r = 0; r < i; ++r) c.blocked_nodes[last.nodes[r]] = true;
      for (const auto& p : accepted) {
        if (p.nodes.size() > i + 1 && std::equal(p.nodes.begin(), p.nodes.begin() + i + 1, last.nodes.begin()))
          c.blocked_edges.insert({p.nodes[i], p.nodes[i + 1]});
      }
      auto spur_path = shortest_path(g, spur, dst, c);
      if (!spur_path) continue;
      std::vector<NodeId> seq(last.nodes.begin(), last.nodes.begin() + i);
      seq.insert(seq.end(), spur_path->nodes.begin(), spur_path->nodes.end());
      if (known(seq)) continue;
      const double len = path_length(g, seq);
      candidates.push_back({std::move(seq), len});
    }
    if (candidates.empty()) break;
    auto best = std::min_element(candidates.begin(), candidates.end(), path_less);
    accepted.push_back(std::move(*best));
    candidates.erase(best);
  }
  return accepted;
}

}  // namespace hivae
