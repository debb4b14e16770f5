#pragma once

// Emotion cue transfer: score attribute cues from a retrieved subgraph,
// select and calibrate the top-K, filter by intensity and conflict rules,
// and compile the admitted cues into an editing instruction.

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "emokg/kg.hpp"
#include "emokg/retrieval.hpp"

namespace emokg {

inline constexpr double kDefaultCueLambda = 0.5;
inline constexpr double kDefaultTau = 0.6;
inline constexpr int kDefaultTopK = 15;

enum class CueType { Color, Material, Shape, Lighting, Posture, CameraView };

std::string_view to_string(CueType type);
/// Lexicon lookup on the cue's tokens. Unlisted words fall back to Material.
CueType classify_cue(std::string_view text);
/// Lighting and camera-view cues modify the whole frame, the rest attach to objects.
bool is_global_cue(CueType type);

struct CueCandidate {
  NodeId attribute_node;
  std::string text;
  std::vector<double> prototype;
  double s_sim = 0.0;
  double s_emo = 0.0;
  double fused = 0.0;
  ReasoningPath source_path;
  /// Text of the object node on the source path, when the path runs through one.
  std::optional<std::string> anchor;
  CueType type = CueType::Material;
};

struct CuePool {
  std::vector<CueCandidate> cues;  // descending fused score, ties by text
  double lambda = kDefaultCueLambda;
  int K = kDefaultTopK;
};

enum class RejectReason { BelowTau, Conflict };
std::string_view to_string(RejectReason reason);

struct CueBank {
  std::vector<CueCandidate> admitted;
  std::vector<std::pair<CueCandidate, RejectReason>> rejected;
};

/// Patterns are whitespace-separated lowercase token sets; a pattern matches
/// when any of its tokens equals any token of the inspected text.
struct ConflictRule {
  std::string attribute_pattern;
  std::string object_class_pattern;
  std::string reason;
};

std::vector<ConflictRule> default_conflict_rules();
std::vector<ConflictRule> load_conflict_rules(const std::filesystem::path& path);

struct SceneObject {
  std::string label;
  std::vector<std::string> attributes;
};

/// objects[0] is treated as the primary object: cues without a matching
/// anchor attach to it.
struct SceneStructure {
  std::vector<SceneObject> objects;
  std::string scene;
  std::string o_prompt;
  /// Permit an atmosphere-only instruction when no cue survives filtering.
  bool atmosphere_fallback = false;
};

SceneStructure scene_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneStructure& scene);

struct EmotionPrompt {
  std::string text;
  std::vector<NodeId> evidence;
  std::vector<std::string> target_emotions;

  bool empty_condition() const { return text.empty(); }
};

nlohmann::json to_json(const CueCandidate& cue);
nlohmann::json to_json(const CuePool& pool);
nlohmann::json to_json(const CueBank& bank);
nlohmann::json to_json(const EmotionPrompt& prompt);
EmotionPrompt prompt_from_json(const nlohmann::json& j);

/// Optional replacement for LEADS_TO weights as the intensity signal s_emo.
class IntensityProvider {
 public:
  virtual ~IntensityProvider() = default;
  virtual double intensity(const CueCandidate& cue, const std::string& emotion) = 0;
};

/// Scores one attribute node. s_sim is the cosine between the image embedding
/// and the attribute's visual prototype (its text embedding when absent);
/// s_emo is the strongest LEADS_TO weight from the attribute to any target
/// (0 when no edge exists), or the provider's value.
CueCandidate score_cue(const KnowledgeGraph& graph, const NodeId& attribute, std::span<const double> image_embedding,
                       std::span<const std::string> target_emotions, double lambda,
                       IntensityProvider* provider = nullptr);

/// Scores every attribute on the subgraph's paths and keeps the K best.
CuePool select_cues(const KnowledgeGraph& graph, const Subgraph& subgraph, std::span<const double> image_embedding,
                    std::span<const std::string> target_emotions, double lambda = kDefaultCueLambda,
                    int K = kDefaultTopK, IntensityProvider* provider = nullptr);

bool rule_fires(const ConflictRule& rule, std::string_view cue_text, const SceneObject& object);

/// Indices of the scene objects a cue would be attached to.
std::vector<std::size_t> attach_targets(const CueCandidate& cue, const SceneStructure& scene);

/// Drops cues conflicting with every scene object and cues duplicating an
/// attribute the scene already has. Order preserved.
CuePool calibrate(const CuePool& pool, const SceneStructure& scene, std::span<const ConflictRule> rules);

/// Intensity check (s_emo >= tau) and conflict check against attach targets.
CueBank filter_bank(const CuePool& pool, double tau, const SceneStructure& scene, std::span<const ConflictRule> rules);

/// Transport for the large multimodal model.
class LmmClient {
 public:
  virtual ~LmmClient() = default;
  virtual std::string complete(const std::string& system, const std::string& user) = 0;
};

enum class CompileMode { Template, LmmClient };

/// The rewriting instruction sent as the system message in client mode.
const std::string& lmm_system_prompt();
/// User message with the {objects}, {o_prompt}, {emotion}, {scene} and {attributes} slots filled.
std::string render_lmm_user_prompt(const CueBank& bank, const SceneStructure& scene,
                                   std::span<const std::string> target_emotions);

/// Nouns a client response may not introduce unless already present in the scene.
const std::vector<std::string>& forbidden_entity_nouns();

/// Checks a candidate instruction: nonempty, no target label as a substring,
/// no forbidden nouns that the scene did not already contain.
void validate_prompt_text(const std::string& text, const SceneStructure& scene,
                          std::span<const std::string> target_emotions);

EmotionPrompt compile_prompt(const CueBank& bank, const SceneStructure& scene,
                             std::span<const std::string> target_emotions, CompileMode mode = CompileMode::Template,
                             LmmClient* client = nullptr,
                             const std::set<std::string>& positive = default_positive_emotions());

}  // namespace emokg
