#include "emokg/pipeline.hpp"

#include <atomic>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include "emokg/text.hpp"

namespace emokg {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) fail(Errc::IoError, "failed writing " + path.string());
}

std::string file_digest(const fs::path& path) { return hex64(fnv1a(read_text(path))); }

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
  if (graph.empty()) fail(Errc::ConfigError, "config: 'graph' is required");
  if (!fs::is_regular_file(graph)) fail(Errc::ConfigError, "config: graph file " + graph.string() + " does not exist");
  if (conflict_rules && !fs::is_regular_file(*conflict_rules))
    fail(Errc::ConfigError, "config: conflict rules file " + conflict_rules->string() + " does not exist");
  if (decoder && !fs::is_regular_file(*decoder))
    fail(Errc::ConfigError, "config: decoder file " + decoder->string() + " does not exist");
  if (emotion_labels.empty()) fail(Errc::ConfigError, "config: emotion_labels is empty");
  if (!(cue_lambda >= 0.0 && cue_lambda <= 1.0)) fail(Errc::ConfigError, "config: cues.lambda must lie in [0,1]");
  if (!(tau >= 0.0 && tau <= 1.0)) fail(Errc::ConfigError, "config: cues.tau must lie in [0,1]");
  if (top_k < 1) fail(Errc::ConfigError, "config: cues.K must be >= 1");
  if (neighbours < 1) fail(Errc::ConfigError, "config: cues.k must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) fail(Errc::ConfigError, "config: era.threshold must lie in (0,1)");
  if (steps < 1) fail(Errc::ConfigError, "config: dsee.steps must be >= 1");
  if (!(guidance >= 0.0)) fail(Errc::ConfigError, "config: dsee.guidance must be >= 0");
  if (!(lambda_att >= 0.0)) fail(Errc::ConfigError, "config: dsee.lambda_att must be >= 0");
  if (harmonize_steps < 0 || harmonize_steps >= steps) fail(Errc::ConfigError, "config: dsee.harmonize_steps must lie in [0, steps)");
  if (inversion_iterations < 0) fail(Errc::ConfigError, "config: dsee.inversion_iterations must be >= 0");
  if (workers < 1) fail(Errc::ConfigError, "config: workers must be >= 1");
  if (codec.factor < 1) fail(Errc::ConfigError, "config: dsee.codec.factor must be >= 1");
  if (compile_mode == CompileMode::LmmClient && !lmm_client.is_object())
    fail(Errc::ConfigError, "config: cues.mode 'lmm' needs a cues.lmm transport config");
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
void read_opt(const json& section, const char* key, T& out) {
  if (section.contains(key) && !section.at(key).is_null()) out = section.at(key).get<T>();
}

}  // namespace

PipelineConfig config_from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    if (j.contains("graph")) c.graph = resolve(base_dir, j.at("graph").get<std::string>());
    read_opt(j, "emotion_labels", c.emotion_labels);
    read_opt(j, "positive_emotions", c.positive_emotions);
    read_opt(j, "seed", c.seed);
    read_opt(j, "workers", c.workers);
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    if (j.contains("embedding")) c.embedding = j.at("embedding");

    const json cues = j.value("cues", json::object());
    read_opt(cues, "lambda", c.cue_lambda);
    read_opt(cues, "K", c.top_k);
    read_opt(cues, "tau", c.tau);
    read_opt(cues, "k", c.neighbours);
    if (cues.contains("conflict_rules") && !cues.at("conflict_rules").is_null())
      c.conflict_rules = resolve(base_dir, cues.at("conflict_rules").get<std::string>());
    const std::string mode = cues.value("mode", "template");
    if (mode == "template") {
      c.compile_mode = CompileMode::Template;
    } else if (mode == "lmm") {
      c.compile_mode = CompileMode::LmmClient;
    } else {
      fail(Errc::ConfigError, "config: cues.mode must be 'template' or 'lmm'");
    }
    if (cues.contains("lmm")) c.lmm_client = cues.at("lmm");

    const json era = j.value("era", json::object());
    if (era.contains("backbone")) c.backbone = era.at("backbone");
    read_opt(era, "layers", c.era_layers);
    read_opt(era, "threshold", c.threshold);
    if (era.contains("decoder") && !era.at("decoder").is_null())
      c.decoder = resolve(base_dir, era.at("decoder").get<std::string>());
    const json train = era.value("train", json::object());
    read_opt(train, "image_size", c.decoder_train_size);
    read_opt(train, "hidden", c.decoder_training.hidden);
    read_opt(train, "steps", c.decoder_training.train_steps);
    read_opt(train, "lr", c.decoder_training.learning_rate);
    read_opt(train, "images", c.decoder_training.train_images);

    const json dsee = j.value("dsee", json::object());
    read_opt(dsee, "enabled", c.dsee_enabled);
    read_opt(dsee, "steps", c.steps);
    read_opt(dsee, "guidance", c.guidance);
    read_opt(dsee, "lambda_att", c.lambda_att);
    read_opt(dsee, "harmonize_steps", c.harmonize_steps);
    read_opt(dsee, "inversion_iterations", c.inversion_iterations);
    if (dsee.contains("fusion")) {
      const auto f = dsee.at("fusion").get<std::string>();
      if (f != "hard" && f != "soft") fail(Errc::ConfigError, "config: dsee.fusion must be 'hard' or 'soft'");
      c.fusion = f == "hard" ? FusionMode::Hard : FusionMode::Soft;
    }
    if (dsee.contains("denoiser")) c.denoiser = dsee.at("denoiser");
    const json codec = dsee.value("codec", json::object());
    read_opt(codec, "factor", c.codec.factor);
    if (codec.contains("latent_size") && !codec.at("latent_size").is_null())
      c.codec.latent_size = codec.at("latent_size").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, std::string("config: ") + e.what());
  }
  c.decoder_training.seed = c.seed;
  c.decoder_training.threshold = c.threshold;
  c.decoder_training.layers.indices = c.era_layers;
  return c;
}

json to_json(const PipelineConfig& c) {
  json j;
  j["graph"] = c.graph.string();
  j["emotion_labels"] = c.emotion_labels;
  j["positive_emotions"] = c.positive_emotions;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["output_dir"] = c.output_dir.string();
  j["embedding"] = c.embedding;
  j["cues"] = {{"lambda", c.cue_lambda},
               {"K", c.top_k},
               {"tau", c.tau},
               {"k", c.neighbours},
               {"conflict_rules", c.conflict_rules ? json(c.conflict_rules->string()) : json(nullptr)},
               {"mode", c.compile_mode == CompileMode::Template ? "template" : "lmm"}};
  if (!c.lmm_client.is_null()) j["cues"]["lmm"] = c.lmm_client;
  j["era"] = {{"backbone", c.backbone},
              {"layers", c.era_layers},
              {"threshold", c.threshold},
              {"decoder", c.decoder ? json(c.decoder->string()) : json(nullptr)},
              {"train",
               {{"image_size", c.decoder_train_size},
                {"hidden", c.decoder_training.hidden},
                {"steps", c.decoder_training.train_steps},
                {"lr", c.decoder_training.learning_rate},
                {"images", c.decoder_training.train_images}}}};
  j["dsee"] = {{"enabled", c.dsee_enabled},
               {"steps", c.steps},
               {"guidance", c.guidance},
               {"lambda_att", c.lambda_att},
               {"harmonize_steps", c.harmonize_steps},
               {"inversion_iterations", c.inversion_iterations},
               {"fusion", c.fusion == FusionMode::Hard ? "hard" : "soft"},
               {"denoiser", c.denoiser},
               {"codec",
                {{"factor", c.codec.factor},
                 {"latent_size", c.codec.latent_size ? json(*c.codec.latent_size) : json(nullptr)}}}};
  return j;
}

PipelineConfig load_config(const fs::path& path) {
  fs::path p = path;
  if (p.empty()) {
    const char* env = std::getenv(kConfigEnvVar);
    if (!env || !*env) fail(Errc::ConfigError, std::string("no config given and ") + kConfigEnvVar + " is unset");
    p = env;
  }
  json j;
  try {
    j = json::parse(read_text(p));
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, "config " + p.string() + ": " + e.what());
  }
  return config_from_json(j, p.parent_path());
}

// ---------------------------------------------------------------------------
// Records

json to_json(const RunRecord& r) {
  json j = {{"item_id", r.item_id},
            {"input", r.input},
            {"targets", r.targets},
            {"scene", r.scene},
            {"mask", r.mask_path},
            {"box", r.box},
            {"retrieved_paths", r.retrieved_paths},
            {"subgraph", r.subgraph_path},
            {"admitted_cues", r.admitted_cues},
            {"cues", r.cues_path},
            {"prompt", r.prompt},
            {"prompt_file", r.prompt_path},
            {"edit_config", r.edit_config},
            {"output", r.output_path},
            {"digests", r.digests},
            {"status", r.status}};
  if (!r.failed_stage.empty()) {
    j["failed_stage"] = r.failed_stage;
    j["error"] = r.error;
  }
  return j;
}

StageError::StageError(std::string stage, const Error& cause, RunRecord partial)
    : Error(cause.code(), stage + ": " + cause.message()), stage_(std::move(stage)), partial_(std::move(partial)) {
  partial_.status = "failed";
  partial_.failed_stage = stage_;
  partial_.error = cause.message();
}

fs::path scene_sidecar(const fs::path& image) {
  fs::path p = image;
  p.replace_extension(".scene.json");
  return p;
}

std::vector<BatchItem> read_batch_manifest(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const Error& e) {
    fail(Errc::ManifestError, e.message());
  }
  const auto rows = parse_csv(text);
  if (rows.empty()) fail(Errc::ManifestError, "manifest " + path.string() + " is empty");
  const auto& header = rows.front();
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    return std::nullopt;
  };
  const auto ci = column("image_path");
  const auto ct = column("target_emotions");
  if (!ci || !ct) fail(Errc::ManifestError, "manifest needs image_path and target_emotions columns");
  const auto cid = column("item_id");
  const auto cs = column("scene_path");
  std::vector<BatchItem> items;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) fail(Errc::ManifestError, "manifest row " + std::to_string(r + 1) + " is malformed");
    BatchItem item;
    item.image = resolve(path.parent_path(), trim(row[*ci]));
    for (const auto& t : split(row[*ct], ';'))
      if (!trim(t).empty()) item.targets.push_back(to_lower(trim(t)));
    if (item.targets.empty()) fail(Errc::ManifestError, "manifest row " + std::to_string(r + 1) + " has no targets");
    item.item_id = cid && !trim(row[*cid]).empty() ? trim(row[*cid]) : item.image.stem().string();
    if (cs && !trim(row[*cs]).empty()) item.scene = resolve(path.parent_path(), trim(row[*cs]));
    items.push_back(std::move(item));
  }
  std::set<std::string> ids;
  for (const auto& it : items)
    if (!ids.insert(it.item_id).second) fail(Errc::ManifestError, "duplicate item id '" + it.item_id + "'");
  return items;
}

// ---------------------------------------------------------------------------
// Pipeline

std::unique_ptr<Backbone> make_backbone(const json& config) {
  const std::string kind = config.value("kind", "tiny");
  if (kind == "tiny") {
    TinyBackboneConfig t;
    t.patch = config.value("patch", t.patch);
    t.dim = config.value("dim", t.dim);
    t.layers = config.value("layers", t.layers);
    t.heads = config.value("heads", t.heads);
    t.seed = config.value("seed", t.seed);
    return std::make_unique<TinyBackbone>(t);
  }
  if (kind == "client") {
    if (!config.contains("client")) fail(Errc::ConfigError, "client backbone needs a 'client' transport config");
    return std::make_unique<ClientBackbone>(std::shared_ptr<JsonTransport>(make_transport(config.at("client"))),
                                            config.value("layer_count", 12));
  }
  fail(Errc::ConfigError, "unknown backbone kind '" + kind + "'");
}

Pipeline::Pipeline(PipelineConfig config) : config_(std::move(config)) {
  config_.validate();
  graph_ = load_graph(config_.graph, GraphOptions{.embedding_dim = std::nullopt, .emotion_labels = config_.emotion_labels});
  rules_ = config_.conflict_rules ? load_conflict_rules(*config_.conflict_rules) : default_conflict_rules();
  backbone_ = make_backbone(config_.backbone);
  backbone_exclusive_ = config_.backbone.value("kind", "tiny") == "client";

  if (config_.decoder) {
    try {
      decoder_ = decoder_from_json(json::parse(read_text(*config_.decoder)));
    } catch (const json::exception& e) {
      fail(Errc::ConfigError, "decoder file: " + std::string(e.what()));
    }
  } else {
    decoder_ = train_on_synthetic(*backbone_, config_.decoder_training, config_.decoder_train_size).params;
  }

  json emb = config_.embedding;
  if (emb.value("kind", "hashing") == "hashing" && !emb.contains("dim") && graph_.embedding_dim())
    emb["dim"] = *graph_.embedding_dim();
  if (!emb.contains("seed")) emb["seed"] = config_.seed;
  embedder_ = make_embedding_provider(emb);

  if (config_.compile_mode == CompileMode::LmmClient)
    lmm_ = std::make_unique<JsonLmmClient>(std::shared_ptr<JsonTransport>(make_transport(config_.lmm_client)));

  json den = config_.denoiser;
  if (den.value("kind", "toy") == "toy" && !den.contains("seed")) den["seed"] = config_.seed;
  denoiser_ = make_denoiser(den);
  schedule_ = NoiseSchedule::scaled_linear(config_.steps);
}

fs::path Pipeline::make_run_dir() const {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::create_directories(config_.output_dir);
  fs::path dir = config_.output_dir / (std::string("run-") + stamp);
  for (int n = 1; !fs::create_directory(dir); ++n)
    dir = config_.output_dir / (std::string("run-") + stamp + "-" + std::to_string(n));
  return dir;
}

namespace {

std::string path_id(const ReasoningPath& p) {
  std::string s = join(p.nodes, ">");
  if (p.completed_from) s += " (via " + *p.completed_from + ")";
  return s;
}

class Timer {
 public:
  Timer(StageTimings* t, std::string stage) : t_(t), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    if (t_) t_->seconds[stage_] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  StageTimings* t_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

template <typename F>
void stage(const char* name, RunRecord& record, StageTimings* timings, F&& body) {
  Timer timer(timings, name);
  try {
    body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e, record);
  } catch (const json::exception& e) {
    throw StageError(name, Error(Errc::ParseError, e.what()), record);
  } catch (const std::filesystem::filesystem_error& e) {
    throw StageError(name, Error(Errc::IoError, e.what()), record);
  }
}

}  // namespace

RunRecord Pipeline::run_single(const BatchItem& item, const fs::path& run_dir, StageTimings* timings) {
  RunRecord rec;
  rec.item_id = item.item_id;
  rec.input = item.image.string();
  rec.targets = item.targets;
  const fs::path rel = fs::path("items") / item.item_id;
  const fs::path dir = run_dir / rel;

  Image image;
  SceneStructure scene;
  std::vector<NodeId> target_nodes;
  stage("load", rec, timings, [&] {
    if (item.targets.empty()) fail(Errc::InvalidArgument, "no target emotions");
    for (const auto& t : item.targets) {
      const KgNode* n = graph_.emotion_node(t);
      if (!n) fail(Errc::UnknownEmotionLabel, "target emotion '" + t + "' has no node in the graph");
      target_nodes.push_back(n->id);
    }
    image = read_png(item.image);
    const fs::path sc = item.scene.value_or(scene_sidecar(item.image));
    scene = scene_from_json(json::parse(read_text(sc)));
    rec.scene = to_json(scene);
    fs::create_directories(dir);
  });

  AffectiveMask mask;
  stage("era", rec, timings, [&] {
    std::unique_lock lock(backbone_mutex_, std::defer_lock);
    if (backbone_exclusive_) lock.lock();
    mask = localize(*backbone_, image, decoder_, LayerSet{config_.era_layers}, config_.threshold);
    if (lock.owns_lock()) lock.unlock();
    rec.mask_path = (rel / "mask.png").string();
    write_png(map_to_image(mask.binary), run_dir / rec.mask_path);
    rec.box = box_to_json(mask.box);
    write_text(dir / "box.json", rec.box.dump(2) + "\n");
    rec.digests["mask.png"] = file_digest(run_dir / rec.mask_path);
  });

  Subgraph subgraph;
  stage("retrieval", rec, timings, [&] {
    RetrievalQuery q;
    auto add_start = [&](NodeKind kind, const std::string& text) {
      if (text.empty()) return;
      const KgNode* n = graph_.find_by_text(kind, text);
      if (n && std::find(q.starts.begin(), q.starts.end(), n->id) == q.starts.end()) q.starts.push_back(n->id);
    };
    add_start(NodeKind::Scene, scene.scene);
    for (const auto& o : scene.objects) add_start(NodeKind::Object, o.label);
    if (q.starts.empty()) fail(Errc::UnknownNode, "no scene or object of the image is present in the graph");
    q.targets = target_nodes;
    q.k = config_.neighbours;
    subgraph = retrieve_subgraph(graph_, q);
    for (const auto& p : subgraph.paths) rec.retrieved_paths.push_back(path_id(p));
    rec.subgraph_path = (rel / "subgraph.json").string();
    write_text(run_dir / rec.subgraph_path, to_json(subgraph).dump(2) + "\n");
  });

  EmotionPrompt prompt;
  stage("cues", rec, timings, [&] {
    const auto img_emb = embedder_->embed_image(item.image);
    const CuePool pool = select_cues(graph_, subgraph, img_emb, item.targets, config_.cue_lambda, config_.top_k);
    const CuePool calibrated = calibrate(pool, scene, rules_);
    const CueBank bank = filter_bank(calibrated, config_.tau, scene, rules_);
    rec.cues_path = (rel / "cues.json").string();
    write_text(run_dir / rec.cues_path,
               json{{"image_embedding", img_emb}, {"pool", to_json(pool)}, {"calibrated", to_json(calibrated)}, {"bank", to_json(bank)}}
                       .dump(2) +
                   "\n");
    for (const auto& c : bank.admitted) rec.admitted_cues.push_back(c.attribute_node);
    const std::set<std::string> positive(config_.positive_emotions.begin(), config_.positive_emotions.end());
    if (lmm_) {
      std::lock_guard lock(lmm_mutex_);
      prompt = compile_prompt(bank, scene, item.targets, config_.compile_mode, lmm_.get(), positive);
    } else {
      prompt = compile_prompt(bank, scene, item.targets, config_.compile_mode, nullptr, positive);
    }
    rec.prompt = prompt.text;
    rec.prompt_path = (rel / "prompt.json").string();
    write_text(run_dir / rec.prompt_path, to_json(prompt).dump(2) + "\n");
  });

  if (config_.dsee_enabled) {
    stage("dsee", rec, timings, [&] {
      EditConfig ec;
      ec.guidance_scale = config_.guidance;
      ec.lambda_att = config_.lambda_att;
      ec.harmonize_steps = config_.harmonize_steps;
      ec.fusion = config_.fusion;
      ec.inversion.fixed_point_iterations = config_.inversion_iterations;
      rec.edit_config = {{"steps", config_.steps},
                         {"guidance", ec.guidance_scale},
                         {"lambda_att", ec.lambda_att},
                         {"harmonize_steps", ec.harmonize_steps},
                         {"inversion_iterations", ec.inversion.fixed_point_iterations},
                         {"fusion", ec.fusion == FusionMode::Hard ? "hard" : "soft"},
                         {"denoiser", config_.denoiser},
                         {"codec_factor", config_.codec.factor}};
      const Tensor3 x0 = config_.codec.encode(image);
      const Map2D m = mask_to_latent(mask.binary, x0.height, x0.width);
      EditResult er;
      {
        std::unique_lock lock(denoiser_mutex_, std::defer_lock);
        if (denoiser_->exclusive()) lock.lock();
        er = edit(x0, prompt, m, *denoiser_, schedule_, ec);
      }
      const Image out = config_.codec.decode(image, x0, er.output);
      rec.output_path = (rel / "edited.png").string();
      write_png(out, run_dir / rec.output_path);
      rec.digests["edited.png"] = file_digest(run_dir / rec.output_path);
    });
  }

  rec.digests["subgraph.json"] = file_digest(run_dir / rec.subgraph_path);
  rec.digests["cues.json"] = file_digest(run_dir / rec.cues_path);
  rec.digests["prompt.json"] = file_digest(run_dir / rec.prompt_path);
  return rec;
}

BatchResult Pipeline::run_batch(const std::vector<BatchItem>& items, const fs::path& run_dir) {
  fs::create_directories(run_dir / "records");
  struct Slot {
    std::optional<RunRecord> record;
    std::optional<BatchFailure> failure;
    std::optional<RunRecord> partial;
    StageTimings timings;
    double total = 0.0;
  };
  std::vector<Slot> slots(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      Slot& s = slots[i];
      const auto start = std::chrono::steady_clock::now();
      try {
        s.record = run_single(items[i], run_dir, &s.timings);
      } catch (const StageError& e) {
        s.failure = BatchFailure{items[i].item_id, e.stage(), e.message()};
        s.partial = e.partial();
      } catch (const std::exception& e) {
        s.failure = BatchFailure{items[i].item_id, "internal", e.what()};
      }
      s.total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  const int n = std::max(1, std::min<int>(config_.workers, static_cast<int>(items.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  BatchResult result;
  result.run_dir = run_dir;
  std::map<std::string, std::pair<double, int>> sums;
  json index_items = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Slot& s = slots[i];
    json entry = {{"item_id", items[i].item_id}, {"seconds", s.timings.seconds}, {"total_seconds", s.total}};
    if (s.record) {
      const std::string rel = "records/" + items[i].item_id + ".json";
      write_text(run_dir / rel, to_json(*s.record).dump(2) + "\n");
      entry["status"] = "ok";
      entry["record"] = rel;
      result.records.push_back(*s.record);
      for (const auto& [stage, sec] : s.timings.seconds) {
        sums[stage].first += sec;
        sums[stage].second += 1;
      }
      sums["total"].first += s.total;
      sums["total"].second += 1;
    } else {
      entry["status"] = "failed";
      entry["stage"] = s.failure->stage;
      entry["error"] = s.failure->error;
      if (s.partial) {
        const std::string rel = "records/" + items[i].item_id + ".json";
        write_text(run_dir / rel, to_json(*s.partial).dump(2) + "\n");
        entry["record"] = rel;
      }
      result.failures.push_back(*s.failure);
    }
    index_items.push_back(std::move(entry));
  }
  for (const auto& [stage, v] : sums) result.mean_seconds[stage] = v.first / v.second;

  json failures = json::array();
  for (const auto& f : result.failures) failures.push_back({{"item_id", f.item_id}, {"stage", f.stage}, {"error", f.error}});
  const json index = {{"config", to_json(config_)},
                      {"items", std::move(index_items)},
                      {"summary",
                       {{"total", items.size()},
                        {"succeeded", result.records.size()},
                        {"failed", result.failures.size()},
                        {"failures", std::move(failures)},
                        {"mean_seconds", result.mean_seconds}}}};
  write_text(run_dir / "index.json", index.dump(2) + "\n");
  return result;
}

}  // namespace emokg
