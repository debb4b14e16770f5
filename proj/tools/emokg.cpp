#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "emokg/pipeline.hpp"
#include "emokg/text.hpp"

using namespace emokg;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// A config argument is either a JSON file path or an inline JSON object.
json load_json_arg(const std::string& arg) {
  if (arg.empty()) return json::object();
  try {
    if (trim(arg).front() == '{') return json::parse(arg);
    return json::parse(read_text(arg));
  } catch (const json::exception& e) {
    fail(Errc::ConfigError, "cannot parse '" + arg + "': " + e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& part : split(s, ','))
    if (!trim(part).empty()) out.push_back(trim(part));
  return out;
}

NodeId resolve_start(const KnowledgeGraph& g, const std::string& token) {
  if (g.contains(token)) return token;
  if (const auto* n = g.find_by_text(NodeKind::Scene, token)) return n->id;
  if (const auto* n = g.find_by_text(NodeKind::Object, token)) return n->id;
  fail(Errc::UnknownNode, "no scene or object node matches '" + token + "'");
}

NodeId resolve_emotion(const KnowledgeGraph& g, const std::string& token) {
  if (g.contains(token) && g.node(token).kind == NodeKind::Emotion) return token;
  if (const auto* n = g.emotion_node(token)) return n->id;
  fail(Errc::UnknownEmotionLabel, "no emotion node matches '" + token + "'");
}

std::vector<double> read_embedding(const std::string& path) {
  const json j = load_json_arg(path);
  if (j.is_array()) return j.get<std::vector<double>>();
  if (j.is_object() && j.contains("embedding")) return j.at("embedding").get<std::vector<double>>();
  fail(Errc::ParseError, "image embedding file must hold an array or {\"embedding\": [...]}");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotion-aware image editing toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  // kg ------------------------------------------------------------------
  auto* kg = app.add_subcommand("kg", "Knowledge graph tools");
  kg->require_subcommand(1);

  auto* kg_build = kg->add_subcommand("build", "Validate and merge JSONL graph files into one canonical file");
  std::vector<std::string> build_inputs;
  std::string build_out;
  kg_build->add_option("--input,-i", build_inputs, "JSONL input (repeatable)")->required();
  kg_build->add_option("--out,-o", build_out, "Output JSONL")->required();
  kg_build->callback([&] {
    std::string merged;
    for (const auto& in : build_inputs) {
      std::string text = read_text(in);
      if (!text.empty() && text.back() != '\n') text += '\n';
      merged += text;
    }
    const KnowledgeGraph g = parse_graph(merged, GraphOptions{.embedding_dim = std::nullopt});
    save_graph(g, build_out);
    std::printf("%zu nodes, %zu edges -> %s\n", g.nodes().size(), g.edge_count(), build_out.c_str());
  });

  auto* kg_query = kg->add_subcommand("query", "Retrieve reasoning paths from start nodes to target emotions");
  std::string q_graph, q_start, q_emotion, q_out;
  int q_k = kDefaultNeighbours;
  kg_query->add_option("--graph", q_graph)->required();
  kg_query->add_option("--start", q_start, "Comma-separated node ids or scene/object texts")->required();
  kg_query->add_option("--emotion", q_emotion, "Comma-separated emotion labels")->required();
  kg_query->add_option("--k", q_k, "Neighbours for completion");
  kg_query->add_option("--out", q_out, "Subgraph JSON (stdout when omitted)");
  kg_query->callback([&] {
    const KnowledgeGraph g = load_graph(q_graph, GraphOptions{.embedding_dim = std::nullopt});
    RetrievalQuery q;
    for (const auto& s : split_list(q_start)) q.starts.push_back(resolve_start(g, s));
    for (const auto& e : split_list(q_emotion)) q.targets.push_back(resolve_emotion(g, e));
    q.k = q_k;
    const json out = to_json(retrieve_subgraph(g, q));
    if (q_out.empty()) {
      std::cout << out.dump(2) << "\n";
    } else {
      write_json(q_out, out);
    }
  });

  // era -----------------------------------------------------------------
  auto* era = app.add_subcommand("era", "Affective region localization");
  era->require_subcommand(1);
  auto* era_loc = era->add_subcommand("localize", "Write a binary mask PNG and a box JSON sidecar");
  std::string e_image, e_backbone, e_decoder, e_out, e_layers;
  double e_threshold = kDefaultMaskThreshold;
  std::size_t e_train_size = 32;
  std::uint64_t e_seed = 0;
  era_loc->add_option("--image", e_image)->required();
  era_loc->add_option("--backbone", e_backbone, "Backbone config (file or inline JSON); default tiny");
  era_loc->add_option("--decoder", e_decoder, "Decoder parameters JSON; trained on synthetic blobs when omitted");
  era_loc->add_option("--threshold", e_threshold);
  era_loc->add_option("--layers", e_layers, "Comma-separated layer indices; default last three");
  era_loc->add_option("--train-size", e_train_size, "Synthetic training image side");
  era_loc->add_option("--seed", e_seed);
  era_loc->add_option("--out", e_out)->required();
  era_loc->callback([&] {
    auto backbone = make_backbone(e_backbone.empty() ? json{{"kind", "tiny"}} : load_json_arg(e_backbone));
    LayerSet layers;
    for (const auto& l : split_list(e_layers)) layers.indices.push_back(std::stoi(l));
    DecoderParams dec;
    if (!e_decoder.empty()) {
      dec = decoder_from_json(load_json_arg(e_decoder));
    } else {
      LocalizerConfig lc;
      lc.layers = layers;
      lc.seed = e_seed;
      dec = train_on_synthetic(*backbone, lc, e_train_size).params;
    }
    const AffectiveMask m = localize(*backbone, read_png(e_image), dec, layers, e_threshold);
    write_png(map_to_image(m.binary), e_out);
    fs::path sidecar(e_out);
    sidecar.replace_extension(".json");
    write_json(sidecar, json{{"box", box_to_json(m.box)}, {"threshold", e_threshold}});
  });

  // cues ----------------------------------------------------------------
  auto* cues = app.add_subcommand("cues", "Emotion cue transfer");
  cues->require_subcommand(1);
  auto* cues_sel = cues->add_subcommand("select", "Score, filter and compile cues into an editing prompt");
  std::string c_graph, c_subgraph, c_emb, c_emotion, c_scene, c_rules, c_mode = "template", c_lmm, c_out;
  double c_lambda = kDefaultCueLambda, c_tau = kDefaultTau;
  int c_k = kDefaultTopK;
  cues_sel->add_option("--graph", c_graph)->required();
  cues_sel->add_option("--subgraph", c_subgraph)->required();
  cues_sel->add_option("--image-emb", c_emb, "JSON array or {\"embedding\": [...]}")->required();
  cues_sel->add_option("--emotion", c_emotion, "Comma-separated target labels")->required();
  cues_sel->add_option("--lambda", c_lambda);
  cues_sel->add_option("--k", c_k, "Number of cues kept");
  cues_sel->add_option("--tau", c_tau);
  cues_sel->add_option("--scene", c_scene, "Scene structure JSON");
  cues_sel->add_option("--rules", c_rules, "Conflict rules JSON");
  cues_sel->add_option("--mode", c_mode)->check(CLI::IsMember({"template", "lmm"}));
  cues_sel->add_option("--lmm", c_lmm, "LMM transport config");
  cues_sel->add_option("--out", c_out, "Output JSON (stdout when omitted)");
  cues_sel->callback([&] {
    const KnowledgeGraph g = load_graph(c_graph, GraphOptions{.embedding_dim = std::nullopt});
    const Subgraph sg = subgraph_from_json(load_json_arg(c_subgraph));
    const auto targets = split_list(c_emotion);
    const auto emb = read_embedding(c_emb);
    SceneStructure scene;
    if (!c_scene.empty()) scene = scene_from_json(load_json_arg(c_scene));
    const auto rules = c_rules.empty() ? default_conflict_rules() : load_conflict_rules(c_rules);
    const CuePool pool = select_cues(g, sg, emb, targets, c_lambda, c_k);
    const CuePool cal = calibrate(pool, scene, rules);
    const CueBank bank = filter_bank(cal, c_tau, scene, rules);
    json out = {{"pool", to_json(pool)}, {"bank", to_json(bank)}};
    if (!scene.objects.empty() || !scene.scene.empty()) {
      std::unique_ptr<JsonLmmClient> lmm;
      if (c_mode == "lmm") {
        if (c_lmm.empty()) fail(Errc::ConfigError, "--mode lmm needs --lmm");
        lmm = std::make_unique<JsonLmmClient>(std::shared_ptr<JsonTransport>(make_transport(load_json_arg(c_lmm))));
      }
      out["prompt"] = to_json(compile_prompt(bank, scene, targets,
                                             c_mode == "lmm" ? CompileMode::LmmClient : CompileMode::Template, lmm.get()));
    }
    if (c_out.empty()) {
      std::cout << out.dump(2) << "\n";
    } else {
      write_json(c_out, out);
    }
  });

  // edit ----------------------------------------------------------------
  auto* editc = app.add_subcommand("edit", "Latent editing");
  editc->require_subcommand(1);
  auto* edit_run = editc->add_subcommand("run", "Invert, edit inside the mask, and decode");
  std::string d_image, d_mask, d_prompt, d_backend, d_out, d_traj;
  int d_steps = kDefaultSteps, d_harmonize = kDefaultHarmonizeSteps, d_iters = kDefaultInversionIterations;
  double d_w = kDefaultGuidance, d_lambda = kDefaultLambdaAtt;
  std::size_t d_factor = 4;
  bool d_soft = false;
  edit_run->add_option("--image", d_image)->required();
  edit_run->add_option("--mask", d_mask, "Mask PNG at image resolution (all-ones when omitted)");
  edit_run->add_option("--prompt", d_prompt, "EmotionPrompt JSON (or a cues select output)")->required();
  edit_run->add_option("--backend", d_backend, "Denoiser config; default toy");
  edit_run->add_option("--steps", d_steps);
  edit_run->add_option("--w", d_w, "Guidance scale");
  edit_run->add_option("--lambda-att", d_lambda);
  edit_run->add_option("--harmonize", d_harmonize, "Final merged denoising steps");
  edit_run->add_option("--inversion-iterations", d_iters);
  edit_run->add_option("--factor", d_factor, "Pixel-to-latent downsampling factor");
  edit_run->add_flag("--soft", d_soft, "Soft mask blending");
  edit_run->add_option("--out", d_out)->required();
  edit_run->add_option("--dump-trajectory", d_traj, "Directory for reconstruction/editing trajectories");
  edit_run->callback([&] {
    const Image img = read_png(d_image);
    json pj = load_json_arg(d_prompt);
    if (pj.contains("prompt")) pj = pj.at("prompt");
    const EmotionPrompt prompt = prompt_from_json(pj);
    PixelCodec codec;
    codec.factor = d_factor;
    const Tensor3 x0 = codec.encode(img);
    Map2D mask(x0.height, x0.width, 1.0);
    if (!d_mask.empty()) {
      Map2D full = image_to_map(read_png(d_mask));
      for (auto& v : full.data) v = v >= 0.5 ? 1.0 : 0.0;
      mask = mask_to_latent(full, x0.height, x0.width);
    }
    auto denoiser = make_denoiser(d_backend.empty() ? json{{"kind", "toy"}} : load_json_arg(d_backend));
    EditConfig ec;
    ec.guidance_scale = d_w;
    ec.lambda_att = d_lambda;
    ec.harmonize_steps = d_harmonize;
    ec.fusion = d_soft ? FusionMode::Soft : FusionMode::Hard;
    ec.inversion.fixed_point_iterations = d_iters;
    const EditResult r = edit(x0, prompt, mask, *denoiser, NoiseSchedule::scaled_linear(d_steps), ec);
    write_png(codec.decode(img, x0, r.output), d_out);
    if (!d_traj.empty()) {
      fs::create_directories(d_traj);
      write_json(fs::path(d_traj) / "reconstruction.json", to_json(r.reconstruction));
      write_json(fs::path(d_traj) / "editing.json", to_json(r.editing));
    }
  });

  // eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluation");
  eval->require_subcommand(1);
  auto* eval_rep = eval->add_subcommand("report", "Per-item metrics and summary tables for a manifest");
  std::string v_manifest, v_provider, v_classifier, v_out;
  eval_rep->add_option("--manifest", v_manifest)->required();
  eval_rep->add_option("--provider", v_provider, "Embedding provider config; default hashing");
  eval_rep->add_option("--classifier", v_classifier, "Classifier config; default nearest emotion text");
  eval_rep->add_option("--out", v_out)->required();
  eval_rep->callback([&] {
    auto provider = make_embedding_provider(v_provider.empty() ? json{{"kind", "hashing"}} : load_json_arg(v_provider));
    const PolarityTable table = PolarityTable::mikels();
    auto classifier = make_classifier(v_classifier.empty() ? json{{"kind", "embedding"}} : load_json_arg(v_classifier),
                                      provider, table.labels);
    const MetricReport rep = report(v_manifest, *provider, *classifier, table);
    write_report(rep, v_out);
    std::cout << report_markdown(rep);
  });

  // pipeline ------------------------------------------------------------
  auto* pipe = app.add_subcommand("pipeline", "End-to-end runs");
  pipe->require_subcommand(1);
  std::string p_config, p_out_dir;
  std::optional<std::uint64_t> p_seed;
  std::optional<int> p_workers;
  bool p_no_dsee = false;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", p_config, std::string("Config JSON; falls back to $") + kConfigEnvVar);
    cmd->add_option("--out-dir", p_out_dir, "Override output_dir");
    cmd->add_option("--seed", p_seed);
    cmd->add_option("--workers", p_workers);
    cmd->add_flag("--no-dsee", p_no_dsee, "Skip the editing stage");
  };
  auto make_pipeline = [&] {
    PipelineConfig cfg = load_config(p_config);
    if (!p_out_dir.empty()) cfg.output_dir = p_out_dir;
    if (p_seed) {
      cfg.seed = *p_seed;
      cfg.decoder_training.seed = *p_seed;
    }
    if (p_workers) cfg.workers = *p_workers;
    if (p_no_dsee) cfg.dsee_enabled = false;
    return Pipeline(cfg);
  };

  auto* pipe_run = pipe->add_subcommand("run", "Run one image");
  std::string r_image, r_emotion, r_scene, r_id;
  add_common(pipe_run);
  pipe_run->add_option("--image", r_image)->required();
  pipe_run->add_option("--emotion", r_emotion, "Comma-separated target labels")->required();
  pipe_run->add_option("--scene", r_scene, "Scene JSON; default <image>.scene.json");
  pipe_run->add_option("--id", r_id, "Item id; default image stem");
  pipe_run->callback([&] {
    Pipeline p = make_pipeline();
    BatchItem item{r_id.empty() ? fs::path(r_image).stem().string() : r_id, r_image, {}, std::nullopt};
    for (const auto& e : split_list(r_emotion)) item.targets.push_back(to_lower(e));
    if (!r_scene.empty()) item.scene = r_scene;
    const BatchResult res = p.run_batch({item}, p.make_run_dir());
    std::cout << res.run_dir.string() << "\n";
    for (const auto& f : res.failures) std::cerr << f.item_id << ": " << f.stage << ": " << f.error << "\n";
    if (res.partial_failure()) exit_code = 1;
  });

  auto* pipe_batch = pipe->add_subcommand("batch", "Run a manifest of images");
  std::string b_manifest;
  add_common(pipe_batch);
  pipe_batch->add_option("--manifest", b_manifest, "CSV: image_path,target_emotions[,item_id,scene_path]")->required();
  pipe_batch->callback([&] {
    Pipeline p = make_pipeline();
    const auto items = read_batch_manifest(b_manifest);
    const BatchResult res = p.run_batch(items, p.make_run_dir());
    std::cout << res.run_dir.string() << "\n"
              << res.records.size() << " succeeded, " << res.failures.size() << " failed\n";
    for (const auto& f : res.failures) std::cerr << f.item_id << ": " << f.stage << ": " << f.error << "\n";
    if (res.partial_failure()) exit_code = 2;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
