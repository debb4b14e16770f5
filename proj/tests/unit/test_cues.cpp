#include "doctest.h"

#include <algorithm>
#include <random>

#include <nlohmann/json.hpp>

#include "emokg/client.hpp"
#include "emokg/cues.hpp"
#include "emokg/text.hpp"
#include "emokg/error.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "prompt_cases.hpp"

using namespace emokg;
using nlohmann::json;

namespace {

KgNode make(const std::string& id, NodeKind kind, std::vector<double> emb, std::string text = {}) {
  KgNode n;
  n.id = id;
  n.kind = kind;
  n.text = text.empty() ? id : text;
  n.embedding = std::move(emb);
  return n;
}

CueCandidate cue(const std::string& text, double s_emo, std::optional<std::string> anchor = std::nullopt) {
  CueCandidate c;
  c.text = text;
  c.attribute_node = "a_" + text;
  c.type = classify_cue(text);
  c.s_emo = s_emo;
  c.fused = s_emo;
  c.anchor = std::move(anchor);
  return c;
}

SceneStructure one_object(const std::string& label, std::vector<std::string> attrs = {}) {
  SceneStructure s;
  s.objects.push_back({label, std::move(attrs)});
  s.o_prompt = "a " + label;
  return s;
}

std::vector<std::string> texts(const std::vector<CueCandidate>& cs) {
  std::vector<std::string> out;
  for (const auto& c : cs) out.push_back(c.text);
  return out;
}

/// One attribute "snarling" whose prototype has cosine 0.8 with the image (0.8, 0.6).
KnowledgeGraph scoring_graph(double weight) {
  KnowledgeGraph g(GraphOptions{.embedding_dim = 2});
  g.add_node(make("o_dog", NodeKind::Object, {0, 1}, "dog"));
  KgNode a = make("a_snarling", NodeKind::Attribute, {0, 1}, "snarling");
  a.visual_prototype = std::vector<double>{1, 0};
  g.add_node(a);
  g.add_node(make("e_fear", NodeKind::Emotion, {1, 1}, "fear"));
  g.add_node(make("e_anger", NodeKind::Emotion, {1, -1}, "anger"));
  g.add_edge({"o_dog", Relation::HasAttr, "a_snarling", 1});
  g.add_edge({"a_snarling", Relation::LeadsTo, "e_fear", weight});
  return g;
}

const std::vector<double> kImage{0.8, 0.6};

class FixedLmm final : public LmmClient {
 public:
  explicit FixedLmm(std::string reply) : reply_(std::move(reply)) {}
  std::string complete(const std::string& system, const std::string& user) override {
    last_system = system;
    last_user = user;
    return reply_;
  }
  std::string last_system, last_user;

 private:
  std::string reply_;
};

}  // namespace

TEST_CASE("fused score arithmetic") {
  const auto g = scoring_graph(0.6);
  const std::vector<std::string> fear{"fear"};
  auto c = score_cue(g, "a_snarling", kImage, fear, 0.5);
  CHECK(c.s_sim == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(c.s_emo == doctest::Approx(0.6));
  CHECK(c.fused == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(score_cue(g, "a_snarling", kImage, fear, 1.0).fused == c.s_sim);

  const auto g9 = scoring_graph(0.9);
  CHECK(score_cue(g9, "a_snarling", kImage, fear, 0.0).fused == doctest::Approx(0.9));
  const std::vector<std::string> anger{"anger"};
  CHECK(score_cue(g9, "a_snarling", kImage, anger, 0.5).s_emo == 0.0);
  const std::vector<std::string> both{"anger", "fear"};
  CHECK(score_cue(g9, "a_snarling", kImage, both, 0.5).s_emo == doctest::Approx(0.9));

  CHECK_THROWS_AS(score_cue(g, "a_snarling", kImage, fear, 1.5), Error);
  CHECK_THROWS_AS(score_cue(g, "o_dog", kImage, fear, 0.5), Error);
}

TEST_CASE("intensity provider replaces edge weights") {
  struct Half final : IntensityProvider {
    double intensity(const CueCandidate&, const std::string&) override { return 0.5; }
  } half;
  const auto g = scoring_graph(0.9);
  const std::vector<std::string> fear{"fear"};
  CHECK(score_cue(g, "a_snarling", kImage, fear, 0.0, &half).fused == doctest::Approx(0.5));
}

TEST_CASE("select_cues keeps the top K") {
  KnowledgeGraph g(GraphOptions{.embedding_dim = 2});
  g.add_node(make("o", NodeKind::Object, {1, 0}, "dog"));
  g.add_node(make("e", NodeKind::Emotion, {1, 0}, "fear"));
  for (int i = 0; i < 20; ++i) {
    const std::string id = "a" + std::to_string(100 + i);
    g.add_node(make(id, NodeKind::Attribute, {1.0, 0.05 * i}));
    g.add_edge({"o", Relation::HasAttr, id, 1});
    g.add_edge({id, Relation::LeadsTo, "e", 0.04 * i});
  }
  const auto sg = retrieve_subgraph(g, {{"o"}, {"e"}, 5});
  const std::vector<std::string> fear{"fear"};
  const std::vector<double> img{1, 0};
  const auto pool = select_cues(g, sg, img, fear, 0.0, 15);
  REQUIRE(pool.cues.size() == 15);
  CHECK(pool.cues.front().attribute_node == "a119");
  CHECK(pool.cues.back().attribute_node == "a105");

  const auto all = select_cues(g, sg, img, fear, 0.0, 30);
  CHECK(all.cues.size() == 20);
  CHECK(std::is_sorted(all.cues.begin(), all.cues.end(),
                       [](const CueCandidate& a, const CueCandidate& b) { return a.fused > b.fused; }));
}

TEST_CASE("select_cues with fewer candidates than K") {
  const auto g = scoring_graph(0.6);
  const auto sg = retrieve_subgraph(g, {{"o_dog"}, {"e_fear"}, 5});
  const std::vector<std::string> fear{"fear"};
  CHECK(select_cues(g, sg, kImage, fear, 0.5, 15).cues.size() == 1);
  CHECK_THROWS_AS(select_cues(g, Subgraph{}, kImage, fear, 0.5, 15), Error);
}

TEST_CASE("equal fused scores at the K boundary keep the smaller text") {
  KnowledgeGraph g(GraphOptions{.embedding_dim = 2});
  g.add_node(make("o", NodeKind::Object, {1, 0}, "dog"));
  g.add_node(make("e", NodeKind::Emotion, {1, 0}, "fear"));
  for (const auto& [id, text] : std::vector<std::pair<std::string, std::string>>{{"a1", "zesty"}, {"a2", "ashen"}}) {
    g.add_node(make(id, NodeKind::Attribute, {1, 0}, text));
    g.add_edge({"o", Relation::HasAttr, id, 1});
    g.add_edge({id, Relation::LeadsTo, "e", 0.5});
  }
  const auto sg = retrieve_subgraph(g, {{"o"}, {"e"}, 5});
  const std::vector<std::string> fear{"fear"};
  const std::vector<double> img{1, 0};
  const auto pool = select_cues(g, sg, img, fear, 0.5, 1);
  REQUIRE(pool.cues.size() == 1);
  CHECK(pool.cues[0].text == "ashen");
}

TEST_CASE("select_cues equals a full sort on random graphs") {
  std::mt19937_64 rng(99);
  int checked = 0;
  for (int trial = 0; trial < 80; ++trial) {
    const auto g = oracle::random_schema_graph(rng, 40);
    std::vector<NodeId> starts, emotions;
    for (const auto& [id, n] : g.nodes()) {
      if (n.kind == NodeKind::Scene || n.kind == NodeKind::Object) starts.push_back(id);
      if (n.kind == NodeKind::Emotion) emotions.push_back(id);
    }
    if (starts.empty() || emotions.empty()) continue;
    const auto sg = retrieve_subgraph(g, {starts, {emotions[0]}, 3});
    if (sg.paths.empty()) continue;
    std::vector<double> img(4);
    std::normal_distribution<double> n01;
    for (auto& v : img) v = n01(rng);
    const std::vector<std::string> targets{g.node(emotions[0]).text};

    struct Scored {
      double fused;
      std::string text, id;
    };
    std::vector<Scored> all;
    for (const auto& id : sg.nodes()) {
      const auto& n = g.node(id);
      if (n.kind != NodeKind::Attribute) continue;
      const double s_sim = oracle::cos_sim(img, n.visual_prototype.value_or(n.embedding));
      const auto e = g.edge(id, Relation::LeadsTo, emotions[0]);
      const double s_emo = e ? e->weight : 0.0;
      all.push_back({0.3 * s_sim + 0.7 * s_emo, n.text, id});
    }
    std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) {
      if (a.fused != b.fused) return a.fused > b.fused;
      if (a.text != b.text) return a.text < b.text;
      return a.id < b.id;
    });
    for (int K : {1, 2, 5, 15}) {
      const auto pool = select_cues(g, sg, img, targets, 0.3, K);
      REQUIRE(pool.cues.size() == std::min<std::size_t>(all.size(), K));
      for (std::size_t i = 0; i < pool.cues.size(); ++i) {
        CHECK(pool.cues[i].attribute_node == all[i].id);
        CHECK(pool.cues[i].fused == doctest::Approx(all[i].fused).epsilon(1e-12));
      }
    }
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("calibrate drops conflicting and duplicate cues") {
  const std::vector<ConflictRule> rules = default_conflict_rules();
  CuePool pool;
  pool.cues = {cue("rotten", 0.9), cue("shiny", 0.8)};
  const auto robot = one_object("robot", {"metallic"});
  CHECK(texts(calibrate(pool, robot, rules).cues) == std::vector<std::string>{"shiny"});

  const auto dog = one_object("dog", {"shiny"});
  CHECK(texts(calibrate(pool, dog, rules).cues) == std::vector<std::string>{"rotten"});

  const auto plain = one_object("dog");
  CHECK(texts(calibrate(pool, plain, {}).cues) == texts(pool.cues));
}

TEST_CASE("calibrate keeps a cue that fits at least one object") {
  const auto rules = default_conflict_rules();
  CuePool pool;
  pool.cues = {cue("rotten", 0.9)};
  SceneStructure s;
  s.objects = {{"robot", {"metallic"}}, {"apple", {}}};
  CHECK(calibrate(pool, s, rules).cues.size() == 1);
}

TEST_CASE("shipped conflict rules") {
  const auto rules = load_conflict_rules(fixture::data_dir() / "conflict_rules.json");
  CHECK(rules.size() >= 5);
  CHECK(rule_fires(rules[0], "rotten", SceneObject{"robot", {}}));
  CHECK_FALSE(rule_fires(rules[0], "rotten", SceneObject{"apple", {}}));
  CHECK_THROWS_AS(load_conflict_rules(fixture::data_dir() / "missing.json"), Error);
}

TEST_CASE("filter_bank threshold semantics") {
  CuePool pool;
  pool.cues = {cue("snarling", 0.9), cue("crouching", 0.59), cue("growling", 0.7)};
  const auto scene = one_object("dog");
  const auto bank = filter_bank(pool, 0.6, scene, {});
  CHECK(texts(bank.admitted) == std::vector<std::string>{"snarling", "growling"});
  REQUIRE(bank.rejected.size() == 1);
  CHECK(bank.rejected[0].second == RejectReason::BelowTau);

  pool.cues.push_back(cue("rotten", 0.0, "robot"));
  const auto robot = one_object("robot", {"metallic"});
  const auto zero = filter_bank(pool, 0.0, robot, default_conflict_rules());
  for (const auto& [c, why] : zero.rejected) CHECK(why == RejectReason::Conflict);
  CHECK(zero.rejected.size() == 1);
  CHECK_THROWS_AS(filter_bank(pool, 1.2, scene, {}), Error);
}

TEST_CASE("admitted set is monotone in tau on random banks") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u01;
  const auto rules = default_conflict_rules();
  const char* words[] = {"rotten", "snarling", "dim", "shiny", "rusty", "jagged", "pale", "low angle"};
  for (int trial = 0; trial < 100; ++trial) {
    CuePool pool;
    for (int i = 0; i < 12; ++i) {
      auto c = cue(words[i % 8], u01(rng));
      c.attribute_node += std::to_string(i);
      pool.cues.push_back(c);
    }
    SceneStructure scene;
    scene.objects = {{"robot", {"metallic"}}, {"dog", {}}};
    std::set<std::string> prev;
    bool first = true;
    for (int k = 0; k < 10; ++k) {
      const double tau = k / 9.0;
      std::set<std::string> now;
      for (const auto& c : filter_bank(pool, tau, scene, rules).admitted) now.insert(c.attribute_node);
      if (!first) CHECK(std::includes(prev.begin(), prev.end(), now.begin(), now.end()));
      prev = std::move(now);
      first = false;
    }
  }
}

TEST_CASE("template compiler on the forest dog") {
  CueBank bank;
  bank.admitted = {cue("snarling", 0.9, "dog"), cue("dim", 0.8)};
  SceneStructure scene = one_object("dog");
  scene.scene = "forest";
  scene.o_prompt = "a dog in a forest";
  const std::vector<std::string> fear{"fear"};
  const auto p = compile_prompt(bank, scene, fear);
  CHECK(p.text.find("snarling dog") != std::string::npos);
  CHECK(p.text.find("dim lighting") != std::string::npos);
  CHECK_FALSE(contains_ci(p.text, "fear"));
  CHECK(p.evidence == std::vector<NodeId>{"a_snarling", "a_dim"});
  CHECK(compile_prompt(bank, scene, fear).text == p.text);
  CHECK(prompt_from_json(to_json(p)).text == p.text);
}

TEST_CASE("toxic objects are substituted for positive targets only") {
  CueBank bank;
  bank.admitted = {cue("golden", 0.9, "garbage")};
  SceneStructure scene = one_object("garbage");
  scene.o_prompt = "garbage on the grass";
  const std::vector<std::string> pos{"contentment"};
  const auto p = compile_prompt(bank, scene, pos);
  CHECK_FALSE(contains_ci(p.text, "garbage"));
  CHECK(p.text.find("wrapped package") != std::string::npos);
  const std::vector<std::string> neg{"disgust"};
  CHECK(contains_ci(compile_prompt(bank, scene, neg).text, "garbage"));
  const std::vector<std::string> mixed{"contentment", "sadness"};
  CHECK(contains_ci(compile_prompt(bank, scene, mixed).text, "garbage"));
}

TEST_CASE("empty evidence") {
  SceneStructure scene = one_object("house");
  const std::vector<std::string> fear{"fear"};
  CHECK_THROWS_AS(compile_prompt(CueBank{}, scene, fear), Error);
  scene.atmosphere_fallback = true;
  CHECK_FALSE(compile_prompt(CueBank{}, scene, fear).text.empty());
}

TEST_CASE("golden prompts for the fixture scenes") {
  const auto cases = fixture::prompt_cases();
  REQUIRE(cases.size() == 10);
  json produced = json::object();
  for (const auto& c : cases) produced[c.name] = compile_prompt(c.bank, c.scene, c.targets).text;
  if (fixture::update_golden()) fixture::write_file(fixture::prompt_golden_path(), produced.dump(2) + "\n");
  const auto golden = json::parse(fixture::read_file(fixture::prompt_golden_path()));
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(produced[c.name] == golden.at(c.name));
    for (const auto& t : c.targets) CHECK_FALSE(contains_ci(produced[c.name].get<std::string>(), t));
  }
}

TEST_CASE("client mode uses the templates and validates the reply") {
  CueBank bank;
  bank.admitted = {cue("snarling", 0.9, "dog")};
  SceneStructure scene = one_object("dog");
  scene.scene = "forest";
  scene.o_prompt = "a dog in a forest";
  const std::vector<std::string> fear{"fear"};

  FixedLmm good("a snarling dog in a shadowy forest");
  const auto p = compile_prompt(bank, scene, fear, CompileMode::LmmClient, &good);
  CHECK(p.text == "a snarling dog in a shadowy forest");
  CHECK(good.last_system == lmm_system_prompt());
  CHECK(good.last_user.find("snarling") != std::string::npos);
  CHECK(good.last_user.find("{attributes}") == std::string::npos);

  FixedLmm leaks("a fearful dog");
  CHECK_THROWS_AS(compile_prompt(bank, scene, fear, CompileMode::LmmClient, &leaks), Error);
  FixedLmm adds("a dog next to a building");
  CHECK_THROWS_AS(compile_prompt(bank, scene, fear, CompileMode::LmmClient, &adds), Error);
  CHECK_THROWS_AS(compile_prompt(bank, scene, fear, CompileMode::LmmClient, nullptr), Error);

  JsonLmmClient wire(std::make_shared<FunctionTransport>([](const json& req) {
    CHECK(req.contains("system"));
    CHECK(req.contains("user"));
    return json{{"text", "  a snarling dog at dusk  "}};
  }));
  CHECK(compile_prompt(bank, scene, fear, CompileMode::LmmClient, &wire).text == "a snarling dog at dusk");
}

TEST_CASE("cue classification and attachment") {
  CHECK(classify_cue("dim") == CueType::Lighting);
  CHECK(classify_cue("snarling") == CueType::Posture);
  CHECK(classify_cue("low angle") == CueType::CameraView);
  CHECK(classify_cue("zorbish") == CueType::Material);
  CHECK(is_global_cue(CueType::Lighting));
  CHECK_FALSE(is_global_cue(CueType::Color));

  SceneStructure s;
  s.objects = {{"dog", {}}, {"tree", {}}};
  CHECK(attach_targets(cue("jagged", 0.5, "tree"), s) == std::vector<std::size_t>{1});
  CHECK(attach_targets(cue("jagged", 0.5), s) == std::vector<std::size_t>{0});
  CHECK(attach_targets(cue("dim", 0.5, "tree"), s).empty());
}

TEST_CASE("scene and bank JSON") {
  const auto s = scene_from_json(json{{"scene", "forest"}, {"objects", {{{"label", "dog"}}}}});
  CHECK(s.objects.size() == 1);
  CHECK(scene_from_json(to_json(s)).objects[0].label == "dog");
  CHECK_THROWS_AS(scene_from_json(json::object()), Error);
  CueBank bank;
  bank.admitted = {cue("dim", 0.7)};
  bank.rejected = {{cue("pale", 0.1), RejectReason::BelowTau}};
  const auto j = to_json(bank);
  CHECK(j.at("admitted").size() == 1);
  CHECK(j.at("rejected").size() == 1);
}
