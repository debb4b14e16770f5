#pragma once

// Multimodal sentiment association graph: typed nodes (scene, object,
// attribute, emotion), typed relations, per-node embeddings, JSONL persistence.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace emokg {

using NodeId = std::string;

enum class NodeKind { Scene, Object, Attribute, Emotion };
enum class Relation { Contains, HasAttr, LeadsTo };

std::string_view to_string(NodeKind kind);
std::string_view to_string(Relation rel);
NodeKind parse_node_kind(std::string_view text);
Relation parse_relation(std::string_view text);

/// True iff (head kind, rel, tail kind) is one of the four legal relation typings.
bool relation_allowed(NodeKind head, Relation rel, NodeKind tail);

/// Mikels' eight categories, in the order used for TEA indexing.
const std::vector<std::string>& default_emotion_labels();
/// Positive half of the default label set.
const std::set<std::string>& default_positive_emotions();

inline constexpr std::size_t kDefaultEmbeddingDim = 512;

struct KgNode {
  NodeId id;
  NodeKind kind = NodeKind::Object;
  std::string text;
  std::vector<double> embedding;
  std::optional<std::vector<double>> visual_prototype;

  friend bool operator==(const KgNode&, const KgNode&) = default;
};

struct KgEdge {
  NodeId head;
  Relation rel = Relation::Contains;
  NodeId tail;
  double weight = 1.0;

  auto key() const { return std::tie(head, rel, tail); }
  friend bool operator==(const KgEdge&, const KgEdge&) = default;
};

struct GraphOptions {
  /// Embedding dimension. When unset, the first inserted node fixes it.
  std::optional<std::size_t> embedding_dim;
  std::vector<std::string> emotion_labels = default_emotion_labels();
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() : KnowledgeGraph(GraphOptions{.embedding_dim = kDefaultEmbeddingDim}) {}
  explicit KnowledgeGraph(GraphOptions options);

  /// Throws DuplicateId, DimensionMismatch, PrototypeOnNonAttribute, UnknownEmotionLabel.
  void add_node(KgNode node);
  /// Throws UnknownEndpoint, IllegalRelation, DuplicateEdge, WeightOutOfRange.
  void add_edge(KgEdge edge);

  bool contains(const NodeId& id) const { return nodes_.contains(id); }
  const KgNode& node(const NodeId& id) const;
  const KgNode* find(const NodeId& id) const;

  const std::map<NodeId, KgNode>& nodes() const { return nodes_; }
  /// Edges in (head, rel, tail) order.
  std::vector<KgEdge> edges() const;
  std::size_t edge_count() const { return edges_.size(); }

  /// Outgoing edges of `id` in (rel, tail) order.
  const std::vector<KgEdge>& out_edges(const NodeId& id) const;
  std::optional<KgEdge> edge(const NodeId& head, Relation rel, const NodeId& tail) const;

  /// First node of the given kind whose text equals `text` (case-insensitive), by id order.
  const KgNode* find_by_text(NodeKind kind, std::string_view text) const;
  /// Emotion node carrying `label`, or nullptr.
  const KgNode* emotion_node(std::string_view label) const;

  std::optional<std::size_t> embedding_dim() const { return dim_; }
  const std::vector<std::string>& emotion_labels() const { return labels_; }

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  std::optional<std::size_t> dim_;
  std::vector<std::string> labels_;
  std::map<NodeId, KgNode> nodes_;
  std::map<std::tuple<NodeId, Relation, NodeId>, KgEdge> edges_;
  std::map<NodeId, std::vector<KgEdge>> out_;
};

/// Replays node/edge records in file order. Errors carry the 1-based line number.
KnowledgeGraph load_graph(const std::filesystem::path& path, GraphOptions options = {});
KnowledgeGraph parse_graph(std::string_view jsonl, GraphOptions options = {});

/// Nodes by id, then edges by (head, rel, tail); one JSON object per line.
std::string serialize_graph(const KnowledgeGraph& graph);
void save_graph(const KnowledgeGraph& graph, const std::filesystem::path& path);

}  // namespace emokg
