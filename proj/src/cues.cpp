#include "emokg/cues.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "emokg/error.hpp"
#include "emokg/tensor.hpp"
#include "emokg/text.hpp"

namespace emokg {

const char* lmm_user_template();

using nlohmann::json;

std::string_view to_string(CueType type) {
  switch (type) {
    case CueType::Color: return "color";
    case CueType::Material: return "material";
    case CueType::Shape: return "shape";
    case CueType::Lighting: return "lighting";
    case CueType::Posture: return "posture";
    case CueType::CameraView: return "camera-view";
  }
  return "?";
}

std::string_view to_string(RejectReason reason) {
  return reason == RejectReason::BelowTau ? "below_tau" : "conflict";
}

namespace {

const std::map<std::string, CueType>& cue_lexicon() {
  using T = CueType;
  static const std::map<std::string, CueType> lex = [] {
    std::map<std::string, CueType> m;
    auto add = [&](T t, std::initializer_list<const char*> words) {
      for (const char* w : words) m.emplace(w, t);
    };
    add(T::Color, {"red", "crimson", "scarlet", "black", "gray", "grey", "pale", "golden", "vivid", "blue", "green",
                   "yellow", "orange", "pink", "purple", "white", "muted", "colorful", "colourful", "faded", "sepia",
                   "pastel", "saturated", "desaturated", "ashen", "bloodred", "rosy", "amber"});
    add(T::Material, {"rotten", "rusty", "metallic", "wooden", "velvet", "glossy", "wet", "muddy", "moldy", "mouldy",
                      "silky", "furry", "rough", "smooth", "cracked", "dusty", "slimy", "shiny", "soft", "weathered",
                      "decayed", "grimy", "polished", "fluffy", "sticky", "frosted", "mossy"});
    add(T::Shape, {"jagged", "twisted", "round", "sharp", "towering", "broken", "crooked", "sprawling", "tiny", "huge",
                   "spiky", "curved", "gnarled", "bent", "tall", "massive", "slender", "hollow", "tattered"});
    add(T::Lighting, {"dim", "dimly", "backlit", "rim", "lit", "shadowy", "glowing", "sunlit", "moonlit", "foggy",
                      "hazy", "neon", "candlelit", "gloomy", "radiant", "bright", "dark", "shadowed", "misty",
                      "sparkling", "flickering", "twilight", "overcast"});
    add(T::Posture, {"snarling", "crouching", "smiling", "laughing", "leaping", "slumped", "cowering", "dancing",
                     "running", "frowning", "crying", "hunched", "playful", "grinning", "growling", "bared", "jumping",
                     "sleeping", "drooping", "staring", "screaming", "trembling"});
    add(T::CameraView, {"close", "closeup", "low", "angle", "aerial", "wide", "overhead", "tilted", "panoramic",
                        "zoomed", "macro", "dutch"});
    return m;
  }();
  return lex;
}

std::set<std::string> token_set(std::string_view s) {
  const auto toks = tokenize(s);
  return {toks.begin(), toks.end()};
}

bool intersects(const std::set<std::string>& a, const std::set<std::string>& b) {
  for (const auto& x : a)
    if (b.contains(x)) return true;
  return false;
}

bool cue_order(const CueCandidate& a, const CueCandidate& b) {
  if (a.fused != b.fused) return a.fused > b.fused;
  if (a.text != b.text) return a.text < b.text;
  return a.attribute_node < b.attribute_node;
}

std::optional<std::string> path_anchor(const KnowledgeGraph& graph, const ReasoningPath& path) {
  for (const auto& id : path.nodes) {
    const KgNode* n = graph.find(id);
    if (n && n->kind == NodeKind::Object) return n->text;
  }
  return std::nullopt;
}

}  // namespace

CueType classify_cue(std::string_view text) {
  const auto& lex = cue_lexicon();
  for (const auto& tok : tokenize(text))
    if (const auto it = lex.find(tok); it != lex.end()) return it->second;
  return CueType::Material;
}

bool is_global_cue(CueType type) { return type == CueType::Lighting || type == CueType::CameraView; }

std::vector<ConflictRule> default_conflict_rules() {
  return {{"rotten", "metal metallic steel iron chrome", "organic decay on a metallic object"}};
}

std::vector<ConflictRule> load_conflict_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open conflict rules " + path.string());
  try {
    const json doc = json::parse(in);
    std::vector<ConflictRule> rules;
    for (const auto& r : doc.at("rules"))
      rules.push_back({to_lower(r.at("attribute").get<std::string>()), to_lower(r.at("object_class").get<std::string>()),
                       r.value("reason", std::string{})});
    return rules;
  } catch (const json::exception& e) {
    fail(Errc::ParseError, "malformed conflict rules " + path.string() + ": " + e.what());
  }
}

SceneStructure scene_from_json(const json& j) {
  try {
    SceneStructure s;
    s.scene = j.value("scene", std::string{});
    s.o_prompt = j.value("o_prompt", std::string{});
    s.atmosphere_fallback = j.value("atmosphere_fallback", false);
    for (const auto& o : j.value("objects", json::array())) {
      SceneObject obj;
      obj.label = o.at("label").get<std::string>();
      obj.attributes = o.value("attributes", std::vector<std::string>{});
      s.objects.push_back(std::move(obj));
    }
    if (s.objects.empty() && s.scene.empty())
      fail(Errc::InvalidArgument, "scene structure needs at least one object or a scene label");
    return s;
  } catch (const json::exception& e) {
    fail(Errc::ParseError, std::string("malformed scene structure: ") + e.what());
  }
}

json to_json(const SceneStructure& scene) {
  json objs = json::array();
  for (const auto& o : scene.objects) objs.push_back({{"label", o.label}, {"attributes", o.attributes}});
  return {{"scene", scene.scene},
          {"o_prompt", scene.o_prompt},
          {"objects", std::move(objs)},
          {"atmosphere_fallback", scene.atmosphere_fallback}};
}

json to_json(const CueCandidate& cue) {
  return {{"attribute", cue.attribute_node},
          {"text", cue.text},
          {"type", to_string(cue.type)},
          {"s_sim", cue.s_sim},
          {"s_emo", cue.s_emo},
          {"fused", cue.fused},
          {"anchor", cue.anchor ? json(*cue.anchor) : json(nullptr)},
          {"source_path", to_json(cue.source_path)}};
}

json to_json(const CuePool& pool) {
  json cues = json::array();
  for (const auto& c : pool.cues) cues.push_back(to_json(c));
  return {{"lambda", pool.lambda}, {"K", pool.K}, {"cues", std::move(cues)}};
}

json to_json(const CueBank& bank) {
  json admitted = json::array();
  for (const auto& c : bank.admitted) admitted.push_back(to_json(c));
  json rejected = json::array();
  for (const auto& [c, why] : bank.rejected) {
    json r = to_json(c);
    r["reason"] = to_string(why);
    rejected.push_back(std::move(r));
  }
  return {{"admitted", std::move(admitted)}, {"rejected", std::move(rejected)}};
}

json to_json(const EmotionPrompt& prompt) {
  return {{"text", prompt.text}, {"evidence", prompt.evidence}, {"target_emotions", prompt.target_emotions}};
}

EmotionPrompt prompt_from_json(const json& j) {
  try {
    EmotionPrompt p;
    p.text = j.value("text", std::string{});
    p.evidence = j.value("evidence", std::vector<std::string>{});
    p.target_emotions = j.value("target_emotions", std::vector<std::string>{});
    return p;
  } catch (const json::exception& e) {
    fail(Errc::ParseError, std::string("malformed prompt document: ") + e.what());
  }
}

CueCandidate score_cue(const KnowledgeGraph& graph, const NodeId& attribute, std::span<const double> image_embedding,
                       std::span<const std::string> target_emotions, double lambda, IntensityProvider* provider) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail(Errc::InvalidArgument, "lambda must lie in [0,1]");
  const KgNode& node = graph.node(attribute);
  if (node.kind != NodeKind::Attribute) fail(Errc::WrongNodeKind, "cue '" + attribute + "' is not an attribute node");

  CueCandidate c;
  c.attribute_node = attribute;
  c.text = node.text;
  c.type = classify_cue(node.text);
  c.prototype = node.visual_prototype ? *node.visual_prototype : node.embedding;
  c.s_sim = cosine(image_embedding, c.prototype);
  double s_emo = 0.0;
  for (const auto& label : target_emotions) {
    double v = 0.0;
    if (provider) {
      v = provider->intensity(c, label);
    } else if (const KgNode* emo = graph.emotion_node(label)) {
      if (const auto e = graph.edge(attribute, Relation::LeadsTo, emo->id)) v = e->weight;
    }
    s_emo = std::max(s_emo, v);
  }
  c.s_emo = std::clamp(s_emo, 0.0, 1.0);
  c.fused = lambda * c.s_sim + (1.0 - lambda) * c.s_emo;
  return c;
}

CuePool select_cues(const KnowledgeGraph& graph, const Subgraph& subgraph, std::span<const double> image_embedding,
                    std::span<const std::string> target_emotions, double lambda, int K, IntensityProvider* provider) {
  if (K < 1) fail(Errc::InvalidArgument, "K must be at least 1");
  if (subgraph.paths.empty()) fail(Errc::EmptySubgraph, "no reasoning paths were retrieved");
  if (l2_norm(image_embedding) < 1e-12) fail(Errc::ZeroEmbedding, "image embedding has zero norm");

  // First path (in path order) carrying each attribute is its source.
  std::map<NodeId, const ReasoningPath*> sources;
  for (const auto& p : subgraph.paths)
    for (const auto& id : p.nodes)
      if (graph.node(id).kind == NodeKind::Attribute) sources.try_emplace(id, &p);

  CuePool pool;
  pool.lambda = lambda;
  pool.K = K;
  for (const auto& [id, path] : sources) {
    CueCandidate c = score_cue(graph, id, image_embedding, target_emotions, lambda, provider);
    c.source_path = *path;
    c.anchor = path_anchor(graph, *path);
    pool.cues.push_back(std::move(c));
  }
  std::sort(pool.cues.begin(), pool.cues.end(), cue_order);
  if (pool.cues.size() > static_cast<std::size_t>(K)) pool.cues.resize(static_cast<std::size_t>(K));
  return pool;
}

bool rule_fires(const ConflictRule& rule, std::string_view cue_text, const SceneObject& object) {
  if (!intersects(token_set(rule.attribute_pattern), token_set(cue_text))) return false;
  auto object_tokens = token_set(object.label);
  for (const auto& a : object.attributes) object_tokens.merge(token_set(a));
  return intersects(token_set(rule.object_class_pattern), object_tokens);
}

std::vector<std::size_t> attach_targets(const CueCandidate& cue, const SceneStructure& scene) {
  if (is_global_cue(cue.type) || scene.objects.empty()) return {};
  std::vector<std::size_t> out;
  if (cue.anchor)
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
      if (to_lower(scene.objects[i].label) == to_lower(*cue.anchor)) out.push_back(i);
  if (out.empty()) out.push_back(0);
  return out;
}

namespace {

bool conflicts_with(const CueCandidate& cue, const SceneObject& obj, std::span<const ConflictRule> rules) {
  return std::any_of(rules.begin(), rules.end(), [&](const ConflictRule& r) { return rule_fires(r, cue.text, obj); });
}

bool duplicates_scene_attribute(const CueCandidate& cue, const SceneStructure& scene) {
  const auto want = tokenize(cue.text);
  for (const auto& o : scene.objects)
    for (const auto& a : o.attributes)
      if (tokenize(a) == want) return true;
  return false;
}

}  // namespace

CuePool calibrate(const CuePool& pool, const SceneStructure& scene, std::span<const ConflictRule> rules) {
  CuePool out = pool;
  out.cues.clear();
  for (const auto& c : pool.cues) {
    const bool all_conflict =
        !scene.objects.empty() &&
        std::all_of(scene.objects.begin(), scene.objects.end(),
                    [&](const SceneObject& o) { return conflicts_with(c, o, rules); });
    if (all_conflict || duplicates_scene_attribute(c, scene)) continue;
    out.cues.push_back(c);
  }
  return out;
}

CueBank filter_bank(const CuePool& pool, double tau, const SceneStructure& scene, std::span<const ConflictRule> rules) {
  if (!(tau >= 0.0 && tau <= 1.0)) fail(Errc::InvalidArgument, "tau must lie in [0,1]");
  CueBank bank;
  for (const auto& c : pool.cues) {
    if (c.s_emo < tau) {
      bank.rejected.emplace_back(c, RejectReason::BelowTau);
      continue;
    }
    bool conflict = false;
    if (is_global_cue(c.type)) {
      // global cues touch every object
      for (const auto& o : scene.objects) conflict = conflict || conflicts_with(c, o, rules);
    } else {
      for (std::size_t i : attach_targets(c, scene)) conflict = conflict || conflicts_with(c, scene.objects[i], rules);
    }
    if (conflict)
      bank.rejected.emplace_back(c, RejectReason::Conflict);
    else
      bank.admitted.push_back(c);
  }
  return bank;
}

// ---------------------------------------------------------------------------
// Prompt compilation

namespace {

struct EmotionStyle {
  std::string mood;
  std::vector<std::string> effects;
};

const std::map<std::string, EmotionStyle>& emotion_styles() {
  static const std::map<std::string, EmotionStyle> styles = {
      {"amusement", {"playful bright tones", {"small drifting light specks"}}},
      {"awe", {"grand luminous stillness", {"soft volumetric light shafts"}}},
      {"contentment", {"calm warm glow", {"gentle soft haze"}}},
      {"excitement", {"vivid saturated energy", {"subtle motion shimmer"}}},
      {"anger", {"harsh high-contrast red tint", {"faint heat shimmer"}}},
      {"disgust", {"murky sickly green tint", {"faint grimy film on surfaces"}}},
      {"fear", {"eerie stillness", {"faint drifting mist"}}},
      {"sadness", {"muted desaturated tones", {"fine drizzle haze"}}},
  };
  return styles;
}

const std::map<std::string, std::string>& toxic_substitutes() {
  static const std::map<std::string, std::string> table = {
      {"trash", "gift box"}, {"garbage", "wrapped package"}, {"litter", "clean lidded bin"}};
  return table;
}

constexpr std::size_t kAdjectivesPerObject = 3;
constexpr std::size_t kMaxEffects = 2;

std::string global_modifier(const CueCandidate& c) {
  const auto toks = tokenize(c.text);
  const std::string last = toks.empty() ? "" : toks.back();
  if (c.type == CueType::Lighting) {
    if (last == "lit" || last == "light" || last == "lighting" || last == "glow") return c.text;
    return c.text + " lighting";
  }
  if (last == "view" || last == "shot" || last == "angle") return c.text;
  return c.text + " view";
}

// Position of the first whole-word, case-insensitive occurrence of `word` at or after `from`.
std::size_t find_word(const std::string& haystack_lower, const std::string& word_lower, std::size_t from) {
  auto is_word = [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) != 0; };
  for (auto pos = haystack_lower.find(word_lower, from); pos != std::string::npos;
       pos = haystack_lower.find(word_lower, pos + 1)) {
    const bool left = pos == 0 || !is_word(haystack_lower[pos - 1]);
    const std::size_t end = pos + word_lower.size();
    const bool right = end >= haystack_lower.size() || !is_word(haystack_lower[end]);
    if (left && right) return pos;
  }
  return std::string::npos;
}

bool names_target(std::string_view text, std::span<const std::string> targets) {
  return std::any_of(targets.begin(), targets.end(), [&](const std::string& t) { return contains_ci(text, t); });
}

std::string compile_template(const CueBank& bank, const SceneStructure& scene, std::span<const std::string> targets,
                             const std::set<std::string>& positive) {
  const bool positive_target =
      !targets.empty() && std::all_of(targets.begin(), targets.end(),
                                      [&](const std::string& t) { return positive.contains(to_lower(t)); });

  std::vector<const CueCandidate*> cues;
  for (const auto& c : bank.admitted)
    if (!names_target(c.text, targets)) cues.push_back(&c);

  // Per-object noun phrases.
  struct Splice {
    std::size_t pos, len;
    std::string text;
  };
  std::vector<Splice> splices;
  std::vector<std::string> appended;
  const std::string lower_prompt = to_lower(scene.o_prompt);
  std::size_t search_from = 0;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& obj = scene.objects[i];
    std::string noun = obj.label;
    bool substituted = false;
    if (positive_target)
      if (const auto it = toxic_substitutes().find(to_lower(obj.label)); it != toxic_substitutes().end()) {
        noun = it->second;
        substituted = true;
      }
    std::vector<std::string> adjectives;
    std::vector<std::string> with_phrases;
    for (const CueCandidate* c : cues) {
      const auto at = attach_targets(*c, scene);
      if (std::find(at.begin(), at.end(), i) == at.end()) continue;
      if (c->text.rfind("with ", 0) == 0) {
        with_phrases.push_back(c->text);
      } else if (adjectives.size() < kAdjectivesPerObject &&
                 std::find(adjectives.begin(), adjectives.end(), c->text) == adjectives.end()) {
        adjectives.push_back(c->text);
      }
    }
    std::string phrase = join(adjectives, " ");
    if (!phrase.empty()) phrase += ' ';
    phrase += noun;
    for (const auto& w : with_phrases) phrase += " " + w;

    const std::size_t pos = find_word(lower_prompt, to_lower(obj.label), search_from);
    if (pos != std::string::npos) {
      splices.push_back({pos, obj.label.size(), phrase});
      search_from = pos + obj.label.size();
    } else if (!adjectives.empty() || !with_phrases.empty() || substituted) {
      appended.push_back(phrase);
    }
  }
  std::string text;
  std::size_t cursor = 0;
  std::sort(splices.begin(), splices.end(), [](const Splice& a, const Splice& b) { return a.pos < b.pos; });
  for (const auto& s : splices) {
    text += scene.o_prompt.substr(cursor, s.pos - cursor);
    text += s.text;
    cursor = s.pos + s.len;
  }
  text += scene.o_prompt.substr(std::min(cursor, scene.o_prompt.size()));
  text = trim(text);
  if (text.empty()) text = scene.scene.empty() ? "" : "a " + scene.scene + " scene";
  for (const auto& a : appended) text += ", " + a;

  // Global atmosphere from lighting/camera cues plus one mood tone per target.
  std::vector<std::string> atmosphere;
  std::size_t lighting = 0;
  for (const CueCandidate* c : cues) {
    if (!is_global_cue(c->type)) continue;
    const auto mod = global_modifier(*c);
    if (std::find(atmosphere.begin(), atmosphere.end(), mod) == atmosphere.end()) atmosphere.push_back(mod);
    if (c->type == CueType::Lighting) ++lighting;
  }
  for (const auto& t : targets)
    if (const auto it = emotion_styles().find(to_lower(t)); it != emotion_styles().end())
      if (std::find(atmosphere.begin(), atmosphere.end(), it->second.mood) == atmosphere.end())
        atmosphere.push_back(it->second.mood);

  // Subtle effects only when lighting evidence is thin.
  if (lighting < 2) {
    std::size_t added = 0;
    for (const auto& t : targets) {
      const auto it = emotion_styles().find(to_lower(t));
      if (it == emotion_styles().end()) continue;
      for (const auto& fx : it->second.effects)
        if (added < kMaxEffects && std::find(atmosphere.begin(), atmosphere.end(), fx) == atmosphere.end()) {
          atmosphere.push_back(fx);
          ++added;
        }
    }
  }
  for (const auto& a : atmosphere) text += ", " + a;
  return text;
}

}  // namespace

const std::vector<std::string>& forbidden_entity_nouns() {
  static const std::vector<std::string> nouns = {
      "building", "buildings", "sky",    "skies",    "wall",  "walls", "people",  "person", "persons",
      "man",      "men",       "woman",  "women",    "child", "crowd", "animal",  "animals", "vehicle",
      "vehicles", "car",       "cars",   "truck",    "trucks", "bus",  "house",   "houses", "tower"};
  return nouns;
}

void validate_prompt_text(const std::string& text, const SceneStructure& scene, std::span<const std::string> targets) {
  if (trim(text).empty()) fail(Errc::InvariantViolation, "compiled prompt is empty");
  for (const auto& t : targets)
    if (contains_ci(text, t)) fail(Errc::InvariantViolation, "compiled prompt names the target emotion '" + t + "'");
  std::set<std::string> allowed = token_set(scene.o_prompt);
  allowed.merge(token_set(scene.scene));
  for (const auto& o : scene.objects) allowed.merge(token_set(o.label));
  const auto& forbidden = forbidden_entity_nouns();
  for (const auto& tok : tokenize(text))
    if (std::find(forbidden.begin(), forbidden.end(), tok) != forbidden.end() && !allowed.contains(tok))
      fail(Errc::InvariantViolation, "compiled prompt introduces a new entity '" + tok + "'");
}

std::string render_lmm_user_prompt(const CueBank& bank, const SceneStructure& scene,
                                   std::span<const std::string> targets) {
  std::vector<std::string> objects;
  for (const auto& o : scene.objects) objects.push_back(o.label);
  std::vector<std::string> attrs;
  for (const auto& c : bank.admitted) attrs.push_back(c.text);
  const std::vector<std::string> emo(targets.begin(), targets.end());
  const std::map<std::string, std::string> slots = {{"{objects}", join(objects, ", ")},
                                                    {"{o_prompt}", scene.o_prompt},
                                                    {"{emotion}", join(emo, " and ")},
                                                    {"{scene}", scene.scene},
                                                    {"{attributes}", join(attrs, ", ")}};
  std::string out = lmm_user_template();
  for (const auto& [slot, value] : slots)
    for (auto pos = out.find(slot); pos != std::string::npos; pos = out.find(slot, pos + value.size()))
      out.replace(pos, slot.size(), value);
  return out;
}

EmotionPrompt compile_prompt(const CueBank& bank, const SceneStructure& scene, std::span<const std::string> targets,
                             CompileMode mode, LmmClient* client, const std::set<std::string>& positive) {
  if (targets.empty()) fail(Errc::InvalidArgument, "at least one target emotion is required");
  if (bank.admitted.empty() && !scene.atmosphere_fallback)
    fail(Errc::EmptyEvidence, "no admitted cues and no atmosphere fallback");

  EmotionPrompt prompt;
  prompt.target_emotions.assign(targets.begin(), targets.end());
  for (const auto& c : bank.admitted) prompt.evidence.push_back(c.attribute_node);

  if (mode == CompileMode::Template) {
    prompt.text = compile_template(bank, scene, targets, positive);
  } else {
    if (!client) fail(Errc::ClientError, "client mode requested without an LMM client");
    std::string reply;
    try {
      reply = client->complete(lmm_system_prompt(), render_lmm_user_prompt(bank, scene, targets));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(Errc::ClientError, e.what());
    }
    prompt.text = trim(reply);
  }
  validate_prompt_text(prompt.text, scene, targets);
  return prompt;
}

}  // namespace emokg
