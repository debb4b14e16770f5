#pragma once

// Reasoning-path retrieval over a KnowledgeGraph with nearest-neighbour
// completion of start nodes that have no direct path to a target emotion.
//
// Valid relation sequences (at most three edges):
//   scene  -CONTAINS-> object -HAS_ATTR-> attribute -LEADS_TO-> emotion
//   scene|object      -HAS_ATTR-> attribute -LEADS_TO-> emotion

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "emokg/kg.hpp"

namespace emokg {

inline constexpr int kDefaultNeighbours = 5;

struct ReasoningPath {
  std::vector<NodeId> nodes;
  std::vector<KgEdge> edges;
  /// Neighbour that stood in for the original start node, if any.
  std::optional<NodeId> completed_from;

  friend bool operator==(const ReasoningPath&, const ReasoningPath&) = default;
};

/// Ordering used everywhere paths are returned: (length, node ids lexicographically).
bool path_less(const ReasoningPath& a, const ReasoningPath& b);

/// True iff the relation sequence of `edges` is one of the valid chains above.
bool valid_relation_chain(const std::vector<Relation>& rels);

struct RetrievalQuery {
  std::vector<NodeId> starts;
  std::vector<NodeId> targets;
  int k = kDefaultNeighbours;
};

struct Subgraph {
  std::vector<ReasoningPath> paths;

  std::set<NodeId> nodes() const;
  std::vector<KgEdge> edges() const;
};

/// All valid simple paths s ⇝ t. `s` must be a scene or object, `t` an emotion.
std::vector<ReasoningPath> paths(const KnowledgeGraph& graph, const NodeId& s, const NodeId& t);

/// The k same-kind nodes most cosine-similar to `s` (s excluded), ties by id.
std::vector<NodeId> knn(const KnowledgeGraph& graph, const NodeId& s, int k);

/// paths(s, t) if nonempty, otherwise the union of paths(u, t) over u in knn(s, k),
/// each tagged with completed_from = u.
std::vector<ReasoningPath> completed_paths(const KnowledgeGraph& graph, const NodeId& s, const NodeId& t, int k);

/// Union of completed_paths over starts × targets, deduplicated on node sequence.
Subgraph retrieve_subgraph(const KnowledgeGraph& graph, const RetrievalQuery& query);

nlohmann::json to_json(const ReasoningPath& path);
nlohmann::json to_json(const Subgraph& subgraph);
Subgraph subgraph_from_json(const nlohmann::json& j);

}  // namespace emokg
