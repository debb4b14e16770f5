#include "emokg/kg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "emokg/error.hpp"
#include "emokg/text.hpp"

namespace emokg {

using nlohmann::json;

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Scene: return "scene";
    case NodeKind::Object: return "object";
    case NodeKind::Attribute: return "attribute";
    case NodeKind::Emotion: return "emotion";
  }
  return "?";
}

std::string_view to_string(Relation rel) {
  switch (rel) {
    case Relation::Contains: return "CONTAINS";
    case Relation::HasAttr: return "HAS_ATTR";
    case Relation::LeadsTo: return "LEADS_TO";
  }
  return "?";
}

NodeKind parse_node_kind(std::string_view text) {
  if (text == "scene") return NodeKind::Scene;
  if (text == "object") return NodeKind::Object;
  if (text == "attribute") return NodeKind::Attribute;
  if (text == "emotion") return NodeKind::Emotion;
  fail(Errc::ParseError, "unknown node type '" + std::string(text) + "'");
}

Relation parse_relation(std::string_view text) {
  if (text == "CONTAINS") return Relation::Contains;
  if (text == "HAS_ATTR") return Relation::HasAttr;
  if (text == "LEADS_TO") return Relation::LeadsTo;
  fail(Errc::ParseError, "unknown relation '" + std::string(text) + "'");
}

bool relation_allowed(NodeKind head, Relation rel, NodeKind tail) {
  switch (rel) {
    case Relation::Contains: return head == NodeKind::Scene && tail == NodeKind::Object;
    case Relation::HasAttr:
      return (head == NodeKind::Object || head == NodeKind::Scene) && tail == NodeKind::Attribute;
    case Relation::LeadsTo: return head == NodeKind::Attribute && tail == NodeKind::Emotion;
  }
  return false;
}

const std::vector<std::string>& default_emotion_labels() {
  static const std::vector<std::string> labels = {"amusement", "awe",   "contentment", "excitement",
                                                  "anger",     "disgust", "fear",      "sadness"};
  return labels;
}

const std::set<std::string>& default_positive_emotions() {
  static const std::set<std::string> positive = {"amusement", "awe", "contentment", "excitement"};
  return positive;
}

KnowledgeGraph::KnowledgeGraph(GraphOptions options)
    : dim_(options.embedding_dim), labels_(std::move(options.emotion_labels)) {}

void KnowledgeGraph::add_node(KgNode node) {
  if (node.id.empty()) fail(Errc::InvalidArgument, "node id must be non-empty");
  if (nodes_.contains(node.id)) fail(Errc::DuplicateId, "node '" + node.id + "' already present");
  if (dim_ && node.embedding.size() != *dim_)
    fail(Errc::DimensionMismatch, "node '" + node.id + "' has embedding dimension " +
                                      std::to_string(node.embedding.size()) + ", graph expects " +
                                      std::to_string(*dim_));
  if (node.visual_prototype && node.kind != NodeKind::Attribute)
    fail(Errc::PrototypeOnNonAttribute, "node '" + node.id + "' is not an attribute but carries a visual prototype");
  if (node.kind == NodeKind::Emotion &&
      std::find(labels_.begin(), labels_.end(), node.text) == labels_.end())
    fail(Errc::UnknownEmotionLabel, "emotion node '" + node.id + "' has label '" + node.text +
                                        "' outside the configured label set");
  if (!dim_) dim_ = node.embedding.size();
  const NodeId id = node.id;
  nodes_.emplace(id, std::move(node));
}

void KnowledgeGraph::add_edge(KgEdge edge) {
  const auto h = nodes_.find(edge.head);
  const auto t = nodes_.find(edge.tail);
  if (h == nodes_.end()) fail(Errc::UnknownEndpoint, "edge head '" + edge.head + "' not present");
  if (t == nodes_.end()) fail(Errc::UnknownEndpoint, "edge tail '" + edge.tail + "' not present");
  if (edge.head == edge.tail) fail(Errc::IllegalRelation, "self-loop on '" + edge.head + "'");
  if (!relation_allowed(h->second.kind, edge.rel, t->second.kind))
    fail(Errc::IllegalRelation, std::string(to_string(edge.rel)) + " not allowed from " +
                                    std::string(to_string(h->second.kind)) + " '" + edge.head + "' to " +
                                    std::string(to_string(t->second.kind)) + " '" + edge.tail + "'");
  if (!(edge.weight >= 0.0 && edge.weight <= 1.0))
    fail(Errc::WeightOutOfRange, "edge weight must lie in [0,1]");
  auto key = std::make_tuple(edge.head, edge.rel, edge.tail);
  if (edges_.contains(key))
    fail(Errc::DuplicateEdge, "edge (" + edge.head + ", " + std::string(to_string(edge.rel)) + ", " +
                                  edge.tail + ") already present");
  auto& out = out_[edge.head];
  const auto pos = std::lower_bound(out.begin(), out.end(), edge, [](const KgEdge& a, const KgEdge& b) {
    return std::tie(a.rel, a.tail) < std::tie(b.rel, b.tail);
  });
  out.insert(pos, edge);
  edges_.emplace(std::move(key), std::move(edge));
}

const KgNode& KnowledgeGraph::node(const NodeId& id) const {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) fail(Errc::UnknownNode, "node '" + id + "' not present");
  return it->second;
}

const KgNode* KnowledgeGraph::find(const NodeId& id) const {
  const auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : &it->second;
}

std::vector<KgEdge> KnowledgeGraph::edges() const {
  std::vector<KgEdge> out;
  out.reserve(edges_.size());
  for (const auto& [key, e] : edges_) out.push_back(e);
  return out;
}

const std::vector<KgEdge>& KnowledgeGraph::out_edges(const NodeId& id) const {
  static const std::vector<KgEdge> none;
  const auto it = out_.find(id);
  return it == out_.end() ? none : it->second;
}

std::optional<KgEdge> KnowledgeGraph::edge(const NodeId& head, Relation rel, const NodeId& tail) const {
  const auto it = edges_.find(std::make_tuple(head, rel, tail));
  if (it == edges_.end()) return std::nullopt;
  return it->second;
}

const KgNode* KnowledgeGraph::find_by_text(NodeKind kind, std::string_view text) const {
  const std::string want = to_lower(text);
  for (const auto& [id, n] : nodes_)
    if (n.kind == kind && to_lower(n.text) == want) return &n;
  return nullptr;
}

const KgNode* KnowledgeGraph::emotion_node(std::string_view label) const {
  return find_by_text(NodeKind::Emotion, label);
}

namespace {

std::vector<double> read_vector(const json& j, const char* field) {
  if (!j.is_array()) fail(Errc::ParseError, std::string("field '") + field + "' must be an array of numbers");
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) fail(Errc::ParseError, std::string("field '") + field + "' must contain only numbers");
    v.push_back(x.get<double>());
  }
  return v;
}

const json& require(const json& obj, const char* field) {
  const auto it = obj.find(field);
  if (it == obj.end()) fail(Errc::ParseError, std::string("missing field '") + field + "'");
  return *it;
}

std::string require_string(const json& obj, const char* field) {
  const auto& v = require(obj, field);
  if (!v.is_string()) fail(Errc::ParseError, std::string("field '") + field + "' must be a string");
  return v.get<std::string>();
}

void apply_record(KnowledgeGraph& g, const json& rec) {
  if (!rec.is_object()) fail(Errc::ParseError, "record must be a JSON object");
  const std::string kind = require_string(rec, "kind");
  if (kind == "node") {
    KgNode n;
    n.id = require_string(rec, "id");
    n.kind = parse_node_kind(require_string(rec, "type"));
    n.text = require_string(rec, "text");
    n.embedding = read_vector(require(rec, "embedding"), "embedding");
    if (const auto it = rec.find("visual_prototype"); it != rec.end() && !it->is_null())
      n.visual_prototype = read_vector(*it, "visual_prototype");
    g.add_node(std::move(n));
  } else if (kind == "edge") {
    KgEdge e;
    e.head = require_string(rec, "head");
    e.rel = parse_relation(require_string(rec, "rel"));
    e.tail = require_string(rec, "tail");
    const auto& w = require(rec, "weight");
    if (!w.is_number()) fail(Errc::ParseError, "field 'weight' must be a number");
    e.weight = w.get<double>();
    g.add_edge(std::move(e));
  } else {
    fail(Errc::ParseError, "unknown record kind '" + kind + "'");
  }
}

json node_record(const KgNode& n) {
  json j = {{"kind", "node"},
            {"id", n.id},
            {"type", to_string(n.kind)},
            {"text", n.text},
            {"embedding", n.embedding}};
  if (n.visual_prototype) j["visual_prototype"] = *n.visual_prototype;
  return j;
}

json edge_record(const KgEdge& e) {
  return {{"kind", "edge"}, {"head", e.head}, {"rel", to_string(e.rel)}, {"tail", e.tail}, {"weight", e.weight}};
}

}  // namespace

KnowledgeGraph parse_graph(std::string_view jsonl, GraphOptions options) {
  KnowledgeGraph g(std::move(options));
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= jsonl.size()) {
    const auto end = jsonl.find('\n', start);
    const auto line = jsonl.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    ++line_no;
    if (!trim(line).empty()) {
      try {
        const json rec = json::parse(line);
        apply_record(g, rec);
      } catch (const json::exception& e) {
        throw Error(Errc::ParseError, e.what(), line_no);
      } catch (const Error& e) {
        throw Error(e.code(), e.message(), line_no);
      }
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return g;
}

KnowledgeGraph load_graph(const std::filesystem::path& path, GraphOptions options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open graph file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_graph(buf.str(), std::move(options));
}

std::string serialize_graph(const KnowledgeGraph& graph) {
  std::string out;
  for (const auto& [id, n] : graph.nodes()) {
    out += node_record(n).dump();
    out += '\n';
  }
  for (const auto& e : graph.edges()) {
    out += edge_record(e).dump();
    out += '\n';
  }
  return out;
}

void save_graph(const KnowledgeGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write graph file " + path.string());
  out << serialize_graph(graph);
}

}  // namespace emokg
