#include "emokg/retrieval.hpp"

#include <algorithm>
#include <map>

#include <nlohmann/json.hpp>

#include "emokg/error.hpp"
#include "emokg/tensor.hpp"

namespace emokg {

using nlohmann::json;

bool path_less(const ReasoningPath& a, const ReasoningPath& b) {
  if (a.nodes.size() != b.nodes.size()) return a.nodes.size() < b.nodes.size();
  if (a.nodes != b.nodes) return a.nodes < b.nodes;
  return a.completed_from < b.completed_from;
}

bool valid_relation_chain(const std::vector<Relation>& rels) {
  using R = Relation;
  static const std::vector<std::vector<R>> grammar = {
      {R::Contains, R::HasAttr, R::LeadsTo},
      {R::HasAttr, R::LeadsTo},
  };
  return std::find(grammar.begin(), grammar.end(), rels) != grammar.end();
}

std::set<NodeId> Subgraph::nodes() const {
  std::set<NodeId> out;
  for (const auto& p : paths) out.insert(p.nodes.begin(), p.nodes.end());
  return out;
}

std::vector<KgEdge> Subgraph::edges() const {
  std::map<std::tuple<NodeId, Relation, NodeId>, KgEdge> seen;
  for (const auto& p : paths)
    for (const auto& e : p.edges) seen.emplace(e.key(), e);
  std::vector<KgEdge> out;
  for (auto& [k, e] : seen) out.push_back(e);
  return out;
}

namespace {

void check_endpoints(const KnowledgeGraph& graph, const NodeId& s, const NodeId& t) {
  const KgNode& start = graph.node(s);
  const KgNode& target = graph.node(t);
  if (start.kind != NodeKind::Scene && start.kind != NodeKind::Object)
    fail(Errc::WrongNodeKind, "start node '" + s + "' must be a scene or object");
  if (target.kind != NodeKind::Emotion) fail(Errc::WrongNodeKind, "target node '" + t + "' must be an emotion");
}

// attribute -> t, appended to prefix.
void attribute_leg(const KnowledgeGraph& graph, const KgEdge& has_attr, const NodeId& t,
                   ReasoningPath prefix, std::vector<ReasoningPath>& out) {
  const auto emo = graph.edge(has_attr.tail, Relation::LeadsTo, t);
  if (!emo) return;
  prefix.nodes.push_back(has_attr.tail);
  prefix.edges.push_back(has_attr);
  prefix.nodes.push_back(t);
  prefix.edges.push_back(*emo);
  out.push_back(std::move(prefix));
}

std::vector<ReasoningPath> paths_unchecked(const KnowledgeGraph& graph, const NodeId& s, const NodeId& t) {
  std::vector<ReasoningPath> out;
  const KgNode& start = graph.node(s);
  for (const KgEdge& e : graph.out_edges(s)) {
    if (e.rel == Relation::HasAttr) {
      attribute_leg(graph, e, t, ReasoningPath{{s}, {}, std::nullopt}, out);
    } else if (e.rel == Relation::Contains && start.kind == NodeKind::Scene) {
      for (const KgEdge& e2 : graph.out_edges(e.tail)) {
        if (e2.rel != Relation::HasAttr) continue;
        attribute_leg(graph, e2, t, ReasoningPath{{s, e.tail}, {e}, std::nullopt}, out);
      }
    }
  }
  std::sort(out.begin(), out.end(), path_less);
  return out;
}

}  // namespace

std::vector<ReasoningPath> paths(const KnowledgeGraph& graph, const NodeId& s, const NodeId& t) {
  check_endpoints(graph, s, t);
  return paths_unchecked(graph, s, t);
}

std::vector<NodeId> knn(const KnowledgeGraph& graph, const NodeId& s, int k) {
  if (k < 1) fail(Errc::InvalidArgument, "k must be at least 1");
  const KgNode& src = graph.node(s);
  if (l2_norm(src.embedding) < 1e-12) fail(Errc::ZeroEmbedding, "node '" + s + "' has a zero embedding");
  std::vector<std::pair<double, NodeId>> ranked;
  for (const auto& [id, n] : graph.nodes()) {
    if (id == s || n.kind != src.kind) continue;
    if (l2_norm(n.embedding) < 1e-12) fail(Errc::ZeroEmbedding, "node '" + id + "' has a zero embedding");
    ranked.emplace_back(cosine(src.embedding, n.embedding), id);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < k; ++i) out.push_back(ranked[i].second);
  return out;
}

std::vector<ReasoningPath> completed_paths(const KnowledgeGraph& graph, const NodeId& s, const NodeId& t, int k) {
  auto direct = paths(graph, s, t);
  if (!direct.empty()) return direct;
  std::vector<ReasoningPath> out;
  for (const NodeId& u : knn(graph, s, k)) {
    for (auto& p : paths_unchecked(graph, u, t)) {
      p.completed_from = u;
      out.push_back(std::move(p));
    }
  }
  std::sort(out.begin(), out.end(), path_less);
  return out;
}

Subgraph retrieve_subgraph(const KnowledgeGraph& graph, const RetrievalQuery& query) {
  if (query.starts.empty()) fail(Errc::InvalidArgument, "retrieval query needs at least one start node");
  if (query.k < 1) fail(Errc::InvalidArgument, "k must be at least 1");
  for (const auto& t : query.targets)
    if (graph.node(t).kind != NodeKind::Emotion) fail(Errc::WrongNodeKind, "target '" + t + "' is not an emotion");

  // Direct paths win over completed ones with the same node sequence; among
  // completions the first start (in query order) wins.
  std::map<std::vector<NodeId>, ReasoningPath> unique;
  for (const auto& s : query.starts)
    for (const auto& t : query.targets)
      for (auto& p : completed_paths(graph, s, t, query.k)) {
        auto [it, inserted] = unique.try_emplace(p.nodes, p);
        if (!inserted && it->second.completed_from && !p.completed_from) it->second = std::move(p);
      }
  Subgraph sg;
  for (auto& [key, p] : unique) sg.paths.push_back(std::move(p));
  std::sort(sg.paths.begin(), sg.paths.end(), path_less);
  return sg;
}

json to_json(const ReasoningPath& path) {
  json edges = json::array();
  for (const auto& e : path.edges)
    edges.push_back({{"head", e.head}, {"rel", to_string(e.rel)}, {"tail", e.tail}, {"weight", e.weight}});
  return {{"nodes", path.nodes},
          {"edges", std::move(edges)},
          {"completed_from", path.completed_from ? json(*path.completed_from) : json(nullptr)}};
}

json to_json(const Subgraph& subgraph) {
  json paths_j = json::array();
  for (const auto& p : subgraph.paths) paths_j.push_back(to_json(p));
  json edges = json::array();
  for (const auto& e : subgraph.edges())
    edges.push_back({{"head", e.head}, {"rel", to_string(e.rel)}, {"tail", e.tail}, {"weight", e.weight}});
  return {{"paths", std::move(paths_j)}, {"nodes", subgraph.nodes()}, {"edges", std::move(edges)}};
}

Subgraph subgraph_from_json(const json& j) {
  try {
    Subgraph sg;
    for (const auto& pj : j.at("paths")) {
      ReasoningPath p;
      p.nodes = pj.at("nodes").get<std::vector<NodeId>>();
      for (const auto& ej : pj.at("edges"))
        p.edges.push_back(KgEdge{ej.at("head").get<std::string>(), parse_relation(ej.at("rel").get<std::string>()),
                                 ej.at("tail").get<std::string>(), ej.at("weight").get<double>()});
      if (const auto it = pj.find("completed_from"); it != pj.end() && !it->is_null())
        p.completed_from = it->get<std::string>();
      if (p.edges.size() + 1 != p.nodes.size()) fail(Errc::ParseError, "path edge/node counts disagree");
      sg.paths.push_back(std::move(p));
    }
    return sg;
  } catch (const json::exception& e) {
    fail(Errc::ParseError, std::string("malformed subgraph document: ") + e.what());
  }
}

}  // namespace emokg
