#include "doctest.h"

#include <random>

#include "emokg/error.hpp"
#include "emokg/kg.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace emokg;

namespace {

KgNode make(const std::string& id, NodeKind kind, std::vector<double> emb, std::string text = {}) {
  KgNode n;
  n.id = id;
  n.kind = kind;
  n.text = text.empty() ? id : text;
  n.embedding = std::move(emb);
  return n;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an emokg::Error");
  return Errc::InvalidArgument;
}

KnowledgeGraph dog_graph() {
  KnowledgeGraph g(GraphOptions{.embedding_dim = 2});
  g.add_node(make("forest", NodeKind::Scene, {1, 0}));
  g.add_node(make("dog", NodeKind::Object, {0, 1}));
  g.add_node(make("snarling", NodeKind::Attribute, {1, 1}));
  g.add_node(make("fear", NodeKind::Emotion, {1, -1}));
  return g;
}

}  // namespace

TEST_CASE("add_node into an empty graph") {
  KnowledgeGraph g(GraphOptions{.embedding_dim = 3});
  g.add_node(make("forest", NodeKind::Scene, {1, 2, 3}));
  CHECK(g.nodes().size() == 1);
  CHECK(g.node("forest").text == "forest");
}

TEST_CASE("add_node rejects duplicates and bad dimensions") {
  KnowledgeGraph g(GraphOptions{.embedding_dim = 3});
  g.add_node(make("n1", NodeKind::Object, {1, 0, 0}));
  CHECK(code_of([&] { g.add_node(make("n1", NodeKind::Object, {0, 1, 0})); }) == Errc::DuplicateId);
  CHECK(code_of([&] { g.add_node(make("a", NodeKind::Attribute, {1, 0, 0, 0})); }) == Errc::DimensionMismatch);
}

TEST_CASE("first node fixes the dimension when unset") {
  KnowledgeGraph g(GraphOptions{.embedding_dim = std::nullopt});
  g.add_node(make("a", NodeKind::Object, {1, 0}));
  CHECK(g.embedding_dim() == 2u);
  CHECK(code_of([&] { g.add_node(make("b", NodeKind::Object, {1, 0, 0})); }) == Errc::DimensionMismatch);
}

TEST_CASE("prototype only on attributes, emotion labels checked") {
  KnowledgeGraph g(GraphOptions{.embedding_dim = 2});
  KgNode obj = make("o", NodeKind::Object, {1, 0});
  obj.visual_prototype = std::vector<double>{0, 1};
  CHECK(code_of([&] { g.add_node(obj); }) == Errc::PrototypeOnNonAttribute);
  CHECK(code_of([&] { g.add_node(make("e", NodeKind::Emotion, {1, 0}, "boredom")); }) == Errc::UnknownEmotionLabel);
  KgNode attr = make("a", NodeKind::Attribute, {1, 0});
  attr.visual_prototype = std::vector<double>{0, 1};
  g.add_node(attr);
  CHECK(g.node("a").visual_prototype.has_value());
}

TEST_CASE("relation typing") {
  auto g = dog_graph();
  g.add_edge({"forest", Relation::Contains, "dog", 1.0});
  CHECK(code_of([&] { g.add_edge({"dog", Relation::LeadsTo, "fear", 0.5}); }) == Errc::IllegalRelation);
  g.add_edge({"snarling", Relation::LeadsTo, "fear", 0.9});
  CHECK(g.edge("snarling", Relation::LeadsTo, "fear")->weight == doctest::Approx(0.9));
  CHECK(code_of([&] { g.add_edge({"forest", Relation::Contains, "dog", 0.3}); }) == Errc::DuplicateEdge);
  CHECK(code_of([&] { g.add_edge({"ghost", Relation::Contains, "dog", 1}); }) == Errc::UnknownEndpoint);
  CHECK(code_of([&] { g.add_edge({"dog", Relation::HasAttr, "snarling", 1.5}); }) == Errc::WeightOutOfRange);
  CHECK(code_of([&] { g.add_edge({"dog", Relation::HasAttr, "dog", 1.0}); }) == Errc::IllegalRelation);
  g.add_edge({"forest", Relation::HasAttr, "snarling", 0.2});
  g.add_edge({"dog", Relation::HasAttr, "snarling", 0.8});
  CHECK(g.edge_count() == 4);
}

TEST_CASE("relation_allowed covers exactly the four typings") {
  const NodeKind kinds[] = {NodeKind::Scene, NodeKind::Object, NodeKind::Attribute, NodeKind::Emotion};
  const Relation rels[] = {Relation::Contains, Relation::HasAttr, Relation::LeadsTo};
  int allowed = 0;
  for (auto h : kinds)
    for (auto r : rels)
      for (auto t : kinds) allowed += relation_allowed(h, r, t) ? 1 : 0;
  CHECK(allowed == 4);
  CHECK(relation_allowed(NodeKind::Scene, Relation::HasAttr, NodeKind::Attribute));
  CHECK_FALSE(relation_allowed(NodeKind::Object, Relation::Contains, NodeKind::Object));
}

TEST_CASE("load replays records and reports the failing line") {
  const std::string ok =
      R"({"kind":"node","id":"s","type":"scene","text":"forest","embedding":[1,0]})"
      "\n"
      R"({"kind":"node","id":"o","type":"object","text":"dog","embedding":[0,1]})"
      "\n"
      R"({"kind":"edge","head":"s","rel":"CONTAINS","tail":"o","weight":1.0})"
      "\n";
  const auto g = parse_graph(ok, GraphOptions{.embedding_dim = std::nullopt});
  CHECK(g.nodes().size() == 2);
  CHECK(g.edge_count() == 1);

  const std::string bad =
      R"({"kind":"node","id":"s","type":"scene","text":"forest","embedding":[1,0]})"
      "\n"
      R"({"kind":"edge","head":"s","rel":"CONTAINS","tail":"o","weight":1.0})"
      "\n"
      R"({"kind":"node","id":"o","type":"object","text":"dog","embedding":[0,1]})"
      "\n";
  try {
    parse_graph(bad, GraphOptions{.embedding_dim = std::nullopt});
    FAIL("expected UnknownEndpoint");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::UnknownEndpoint);
    CHECK(e.line() == 2u);
  }
  CHECK(code_of([] { parse_graph("{not json\n"); }) == Errc::ParseError);
}

TEST_CASE("serialize round trip is canonical") {
  fixture::TempDir tmp("kg");
  const auto g = load_graph(fixture::toy_graph(), GraphOptions{.embedding_dim = std::nullopt});
  save_graph(g, tmp / "g.jsonl");
  const auto h = load_graph(tmp / "g.jsonl", GraphOptions{.embedding_dim = std::nullopt});
  CHECK(g == h);
  CHECK(serialize_graph(g) == serialize_graph(h));
  CHECK(fixture::read_file(tmp / "g.jsonl") == serialize_graph(g));
}

TEST_CASE("random schema graphs survive a serialize round trip") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 30; ++i) {
    const auto g = oracle::random_schema_graph(rng, 40);
    const auto h = parse_graph(serialize_graph(g), GraphOptions{.embedding_dim = std::nullopt});
    CHECK(g == h);
    for (const auto& e : g.edges())
      CHECK(relation_allowed(g.node(e.head).kind, e.rel, g.node(e.tail).kind));
  }
}

TEST_CASE("lookups by text and label") {
  const auto g = load_graph(fixture::toy_graph(), GraphOptions{.embedding_dim = std::nullopt});
  REQUIRE(g.find_by_text(NodeKind::Object, "DOG") != nullptr);
  CHECK(g.find_by_text(NodeKind::Object, "dog")->id == "o_dog");
  CHECK(g.find_by_text(NodeKind::Scene, "dog") == nullptr);
  REQUIRE(g.emotion_node("fear") != nullptr);
  CHECK(g.emotion_node("fear")->kind == NodeKind::Emotion);
  CHECK(default_emotion_labels().size() == 8);
  CHECK(default_positive_emotions().size() == 4);
}
