#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace hivae {

using NodeId = std::int32_t;

struct NodeRecord {
  NodeId id = 0;
  double x = 0.0;  // meters
  double y = 0.0;  // meters
};

struct EdgeRecord {
  NodeId src = 0;
  NodeId dst = 0;
  double length = 0.0;  // meters, > 0
};

// Directed weighted graph of walkable nodes with a designated goal subset.
// Immutable after construction; all queries are const and thread-safe.
class SpatialGraph {
 public:
  SpatialGraph() = default;

  // Validates every invariant and builds the adjacency index. Throws
  // DataError describing the first violation found.
  SpatialGraph(std::vector<NodeRecord> nodes, std::vector<EdgeRecord> edges,
               std::vector<NodeId> goals);

  std::size_t num_nodes() const { return nodes_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t num_goals() const { return goals_.size(); }

  const std::vector<NodeRecord>& nodes() const { return nodes_; }
  const std::vector<EdgeRecord>& edges() const { return edges_; }
  const std::vector<NodeId>& goals() const { return goals_; }
  const NodeRecord& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  // Edge indices leaving / entering a node, ordered by neighbor id.
  const std::vector<std::size_t>& out_edges(NodeId id) const { return out_.at(id); }
  const std::vector<std::size_t>& in_edges(NodeId id) const { return in_.at(id); }

  bool valid_node(NodeId id) const { return id >= 0 && static_cast<std::size_t>(id) < nodes_.size(); }

  // Length of the shortest directed edge u->v, if any.
  std::optional<double> edge_length(NodeId u, NodeId v) const;

  // Position of a node in the goal list, if it is a goal.
  std::optional<std::size_t> goal_index(NodeId id) const;

  double mean_edge_length() const;
  double distance(NodeId a, NodeId b) const;  // planar coordinate distance

  // Returns a copy of this graph with a different goal list.
  SpatialGraph with_goals(std::vector<NodeId> goals) const;

  // Stable 64-bit content hash of the canonical serialization, as 16 hex chars.
  std::string content_hash() const;

 private:
  std::vector<NodeRecord> nodes_;
  std::vector<EdgeRecord> edges_;
  std::vector<NodeId> goals_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
  std::vector<std::int64_t> goal_pos_;
};

// JSON graph file schema:
//   {"format_version": 1 (optional),
//    "nodes": [{"id": int, "x": m, "y": m} | {"id": int, "lat": deg, "lon": deg}],
//    "edges": [{"src": int, "dst": int, "length": m, "bidirectional": bool (optional)}],
//    "goals": [int...]}
// Geographic nodes are projected to planar meters with a local
// equirectangular projection around the mean latitude/longitude.
SpatialGraph graph_from_json(const nlohmann::json& doc);
nlohmann::json graph_to_json(const SpatialGraph& g);
SpatialGraph load_graph(const std::filesystem::path& path);
void save_graph(const SpatialGraph& g, const std::filesystem::path& path);

struct GridGraphSpec {
  int grid_width = 20;
  int grid_height = 15;
  double diagonal_probability = 0.3;
  double jitter = 0.2;      // fraction of cell spacing
  double spacing = 10.0;    // meters between grid columns/rows
  int num_goals = -1;       // -1 selects every node
  std::uint64_t seed = 0;
};

// Grid with reciprocal 4-neighbour streets, optional reciprocal diagonals, and
// jittered coordinates. Edge lengths are the Euclidean distance between the
// (jittered) endpoints. Always strongly connected.
SpatialGraph generate_synthetic_graph(const GridGraphSpec& spec);

struct PathResult {
  std::vector<NodeId> nodes;
  double length = 0.0;

  bool operator==(const PathResult&) const = default;
};

// Orders paths by length (equal within 1e-9 relative), then by node sequence.
bool path_less(const PathResult& a, const PathResult& b);
bool lengths_equal(double a, double b);

struct PathConstraints {
  std::vector<bool> blocked_nodes;                   // indexed by node id; may be empty
  std::set<std::pair<NodeId, NodeId>> blocked_edges;  // directed (u, v)
};

// Minimum-length path; ties go to the lexicographically smallest node sequence.
// Throws NoPathError when dst is unreachable.
PathResult shortest_path(const SpatialGraph& g, NodeId src, NodeId dst);
std::optional<PathResult> shortest_path(const SpatialGraph& g, NodeId src, NodeId dst,
                                        const PathConstraints& constraints);

// Up to k loopless paths in path_less order (deviation-based enumeration).
// Throws NoPathError if no path exists.
std::vector<PathResult> k_shortest_paths(const SpatialGraph& g, NodeId src, NodeId dst,
                                         std::size_t k);

// Single-source shortest distances over the forward graph (distance from src
// to every node) or the reverse graph (distance from every node to src).
// Unreachable entries are +infinity.
std::vector<double> distances_from(const SpatialGraph& g, NodeId src);
std::vector<double> distances_to(const SpatialGraph& g, NodeId dst);

// Sum of edge lengths along a node sequence; throws DataError if a hop is not an edge.
double path_length(const SpatialGraph& g, const std::vector<NodeId>& nodes);

}  // namespace hivae
