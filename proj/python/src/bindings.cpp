#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "emokg/cues.hpp"
#include "emokg/dsee.hpp"
#include "emokg/error.hpp"
#include "emokg/kg.hpp"
#include "emokg/metrics.hpp"
#include "emokg/pipeline.hpp"
#include "emokg/region.hpp"
#include "emokg/retrieval.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace emokg {
namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Map2D to_map(const Array& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-D array");
  Map2D m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

Tensor3 to_tensor(const Array& a) {
  if (a.ndim() != 3) throw py::value_error("expected a (C, H, W) array");
  Tensor3 t(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
            static_cast<std::size_t>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

Array from_map(const Map2D& m) {
  Array a({m.height, m.width});
  std::copy(m.data.begin(), m.data.end(), a.mutable_data());
  return a;
}

Array from_tensor(const Tensor3& t) {
  Array a({t.channels, t.height, t.width});
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

std::string dump(const json& j) { return j.dump(); }

std::string paths_json(const std::vector<ReasoningPath>& ps) {
  json out = json::array();
  for (const auto& p : ps) out.push_back(to_json(p));
  return out.dump();
}

py::dict node_dict(const KgNode& n) {
  py::dict d;
  d["id"] = n.id;
  d["kind"] = std::string(to_string(n.kind));
  d["text"] = n.text;
  d["embedding"] = n.embedding;
  if (n.visual_prototype) d["visual_prototype"] = *n.visual_prototype;
  return d;
}

std::string record_json(const RunRecord& r) { return to_json(r).dump(); }

}  // namespace
}  // namespace emokg

PYBIND11_MODULE(_core, m) {
  using namespace emokg;
  m.doc() = "Native core of emokg";

  static py::handle error = py::exception<Error>(m, "Error", PyExc_RuntimeError).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const StageError& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error)(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      exc.attr("stage") = e.stage();
      exc.attr("partial") = to_json(e.partial()).dump();
      PyErr_SetObject(error.ptr(), exc.ptr());
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error)(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      exc.attr("line") = e.line() ? py::cast(*e.line()) : py::none();
      PyErr_SetObject(error.ptr(), exc.ptr());
    }
  });

  py::class_<KnowledgeGraph>(m, "Graph")
      .def(py::init<>())
      .def_static("load", [](const std::filesystem::path& p) { return load_graph(p); })
      .def_static("parse", [](const std::string& text) { return parse_graph(text); })
      .def("serialize", [](const KnowledgeGraph& g) { return serialize_graph(g); })
      .def("save", [](const KnowledgeGraph& g, const std::filesystem::path& p) { save_graph(g, p); })
      .def("__len__", [](const KnowledgeGraph& g) { return g.nodes().size(); })
      .def("__contains__", &KnowledgeGraph::contains)
      .def_property_readonly("edge_count", &KnowledgeGraph::edge_count)
      .def_property_readonly("emotion_labels", &KnowledgeGraph::emotion_labels)
      .def("node_ids",
           [](const KnowledgeGraph& g, std::optional<std::string> kind) {
             std::vector<std::string> ids;
             const auto want = kind ? std::optional(parse_node_kind(*kind)) : std::nullopt;
             for (const auto& [id, n] : g.nodes())
               if (!want || n.kind == *want) ids.push_back(id);
             return ids;
           },
           py::arg("kind") = py::none())
      .def("node", [](const KnowledgeGraph& g, const std::string& id) { return node_dict(g.node(id)); })
      .def("find",
           [](const KnowledgeGraph& g, const std::string& kind, const std::string& text) -> std::optional<std::string> {
             const KgNode* n = g.find_by_text(parse_node_kind(kind), text);
             return n ? std::optional(n->id) : std::nullopt;
           })
      .def("edges", [](const KnowledgeGraph& g) {
        py::list out;
        for (const auto& e : g.edges())
          out.append(py::make_tuple(e.head, std::string(to_string(e.rel)), e.tail, e.weight));
        return out;
      });

  m.def("paths", [](const KnowledgeGraph& g, const std::string& s, const std::string& t) {
    return paths_json(paths(g, s, t));
  });
  m.def("knn", &knn, py::arg("graph"), py::arg("source"), py::arg("k"));
  m.def("completed_paths", [](const KnowledgeGraph& g, const std::string& s, const std::string& t, int k) {
    return paths_json(completed_paths(g, s, t, k));
  });
  m.def(
      "retrieve_subgraph",
      [](const KnowledgeGraph& g, std::vector<std::string> starts, std::vector<std::string> targets, int k) {
        return dump(to_json(retrieve_subgraph(g, {std::move(starts), std::move(targets), k})));
      },
      py::arg("graph"), py::arg("starts"), py::arg("targets"), py::arg("k") = kDefaultNeighbours);

  m.def("classify_cue", [](const std::string& text) { return std::string(to_string(classify_cue(text))); });
  m.def("lmm_system_prompt", &lmm_system_prompt);

  m.def("clip_i_prox", &clip_i_prox);
  m.def("tea_from_similarities",
        [](const std::vector<double>& s, std::size_t target) { return tea_from_similarities(s, target); });
  m.def("tea", [](const std::vector<double>& z, const std::vector<std::vector<double>>& emotions,
                  std::size_t target) { return tea(z, emotions, target); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_map(a), to_map(b)); });
  m.def(
      "emo_acc",
      [](const std::vector<std::string>& pred, const std::vector<std::string>& target, int classes) {
        if (classes != 8 && classes != 2) throw py::value_error("classes must be 8 or 2");
        return emo_acc(pred, target, classes == 8 ? AccMode::Acc8 : AccMode::Acc2);
      },
      py::arg("predictions"), py::arg("targets"), py::arg("classes") = 8);

  m.def(
      "postprocess",
      [](const Array& dense, double threshold) {
        const auto mask = postprocess(to_map(dense), threshold);
        py::object box = py::none();
        if (mask.box) box = py::make_tuple(mask.box->x0, mask.box->y0, mask.box->x1, mask.box->y1);
        return py::make_tuple(from_map(mask.binary), box);
      },
      py::arg("dense"), py::arg("threshold") = kDefaultMaskThreshold);

  m.def("schedule", [](int steps) {
    const auto s = NoiseSchedule::scaled_linear(steps);
    return py::make_tuple(s.alphas_bar, s.model_timesteps);
  });
  m.def(
      "invert",
      [](const Array& x0, const std::string& denoiser, int steps, int iterations) {
        const auto d = make_denoiser(json::parse(denoiser));
        return from_tensor(invert(to_tensor(x0), *d, NoiseSchedule::scaled_linear(steps), {iterations}));
      },
      py::arg("x0"), py::arg("denoiser"), py::arg("steps") = kDefaultSteps,
      py::arg("iterations") = kDefaultInversionIterations);
  m.def(
      "sample",
      [](const Array& xT, const std::string& denoiser, int steps) {
        const auto d = make_denoiser(json::parse(denoiser));
        return from_tensor(sample(to_tensor(xT), *d, NoiseSchedule::scaled_linear(steps)));
      },
      py::arg("xT"), py::arg("denoiser"), py::arg("steps") = kDefaultSteps);
  m.def(
      "edit",
      [](const Array& x0, const std::string& prompt, const Array& mask, const std::string& denoiser, int steps,
         double guidance, double lambda_att, int harmonize_steps, std::optional<std::vector<int>> layers,
         bool trajectories) {
        const auto d = make_denoiser(json::parse(denoiser));
        EditConfig cfg;
        cfg.guidance_scale = guidance;
        cfg.lambda_att = lambda_att;
        cfg.harmonize_steps = harmonize_steps;
        cfg.injection_layers = std::move(layers);
        EmotionPrompt p;
        p.text = prompt;
        const auto r = edit(to_tensor(x0), p, to_map(mask), *d, NoiseSchedule::scaled_linear(steps), cfg);
        py::dict out;
        out["output"] = from_tensor(r.output);
        out["inverted"] = from_tensor(r.inverted);
        if (trajectories) {
          py::list rec, ed;
          for (const auto& s : r.reconstruction.states) rec.append(from_tensor(s));
          for (const auto& s : r.editing.states) ed.append(from_tensor(s));
          out["reconstruction"] = rec;
          out["editing"] = ed;
        }
        return out;
      },
      py::arg("x0"), py::arg("prompt"), py::arg("mask"), py::arg("denoiser"), py::arg("steps") = kDefaultSteps,
      py::arg("guidance") = kDefaultGuidance, py::arg("lambda_att") = kDefaultLambdaAtt,
      py::arg("harmonize_steps") = kDefaultHarmonizeSteps, py::arg("injection_layers") = py::none(),
      py::arg("trajectories") = false);

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init([](const std::string& config, const std::filesystem::path& base_dir) {
             return std::make_unique<Pipeline>(config_from_json(json::parse(config), base_dir));
           }),
           py::arg("config"), py::arg("base_dir") = std::filesystem::path())
      .def("config", [](const Pipeline& p) { return to_json(p.config()).dump(); })
      .def("make_run_dir", &Pipeline::make_run_dir)
      .def(
          "run_single",
          [](Pipeline& p, const std::filesystem::path& image, std::vector<std::string> targets,
             const std::filesystem::path& run_dir, std::optional<std::string> item_id,
             std::optional<std::filesystem::path> scene) {
            BatchItem item{item_id.value_or(image.stem().string()), image, std::move(targets), std::move(scene)};
            py::gil_scoped_release release;
            return record_json(p.run_single(item, run_dir));
          },
          py::arg("image"), py::arg("targets"), py::arg("run_dir"), py::arg("item_id") = py::none(),
          py::arg("scene") = py::none())
      .def(
          "run_batch",
          [](Pipeline& p, const std::filesystem::path& manifest, const std::filesystem::path& run_dir) {
            const auto items = read_batch_manifest(manifest);
            BatchResult r;
            {
              py::gil_scoped_release release;
              r = p.run_batch(items, run_dir);
            }
            json failures = json::array();
            for (const auto& f : r.failures) failures.push_back({{"item_id", f.item_id}, {"stage", f.stage}, {"error", f.error}});
            json records = json::array();
            for (const auto& rec : r.records) records.push_back(to_json(rec));
            return json{{"run_dir", r.run_dir.string()}, {"records", records}, {"failures", failures}}.dump();
          },
          py::arg("manifest"), py::arg("run_dir"));
}
