#include "emokg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "emokg/error.hpp"
#include "emokg/kg.hpp"
#include "emokg/text.hpp"

namespace emokg {

using nlohmann::json;

double clip_i_prox(double d) {
  if (!(d >= 0.0 && d <= 1.0)) fail(Errc::OutOfRange, "CLIP-I similarity must lie in [0,1]");
  return std::max(0.0, 1.0 - std::abs(d - 0.75) / 0.25);
}

double tea_from_similarities(std::span<const double> similarities, std::size_t target) {
  if (target >= similarities.size()) fail(Errc::OutOfRange, "target index out of range");
  double sum = 0.0;
  for (double s : similarities) sum += std::max(s, 0.0);
  if (sum < 1e-12) fail(Errc::AllZeroSimilarity, "all emotion similarities are nonpositive");
  return std::max(similarities[target], 0.0) / sum;
}

double tea(std::span<const double> image_embedding, const std::vector<std::vector<double>>& emotion_embeddings,
           std::size_t target) {
  std::vector<double> s;
  s.reserve(emotion_embeddings.size());
  for (const auto& e : emotion_embeddings) s.push_back(cosine(image_embedding, e));
  return tea_from_similarities(s, target);
}

namespace {

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(window));
  const int r = window / 2;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    const double x = i - r;
    k[static_cast<std::size_t>(i)] = std::exp(-0.5 * x * x / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Valid-region separable filtering.
Map2D filter_valid(const Map2D& m, const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t oh = m.height - n + 1;
  const std::size_t ow = m.width - n + 1;
  Map2D rows(m.height, ow);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * m.at(y, x + i);
      rows.at(y, x) = s;
    }
  Map2D out(oh, ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * rows.at(y + i, x);
      out.at(y, x) = s;
    }
  return out;
}

Map2D product(const Map2D& a, const Map2D& b) {
  Map2D out(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return out;
}

}  // namespace

double ssim(const Map2D& a, const Map2D& b, const SsimOptions& o) {
  if (a.height != b.height || a.width != b.width) fail(Errc::ShapeMismatch, "SSIM inputs differ in size");
  if (o.window <= 0 || o.window % 2 == 0) fail(Errc::InvalidArgument, "SSIM window must be odd and positive");
  const auto win = static_cast<std::size_t>(o.window);
  if (a.height < win || a.width < win)
    fail(Errc::ShapeMismatch, "images must be at least " + std::to_string(win) + " pixels on each side for SSIM");
  const auto k = gaussian_kernel(o.window, o.sigma);
  const Map2D ux = filter_valid(a, k);
  const Map2D uy = filter_valid(b, k);
  const Map2D uxx = filter_valid(product(a, a), k);
  const Map2D uyy = filter_valid(product(b, b), k);
  const Map2D uxy = filter_valid(product(a, b), k);
  const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
  const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
  double total = 0.0;
  for (std::size_t i = 0; i < ux.size(); ++i) {
    const double mx = ux.data[i];
    const double my = uy.data[i];
    const double vx = uxx.data[i] - mx * mx;
    const double vy = uyy.data[i] - my * my;
    const double vxy = uxy.data[i] - mx * my;
    total += ((2 * mx * my + c1) * (2 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(ux.size());
}

double ssim(const Image& a, const Image& b, const SsimOptions& options) {
  return ssim(to_gray(a), to_gray(b), options);
}

PolarityTable PolarityTable::mikels() {
  const auto& pos = default_positive_emotions();
  return {default_emotion_labels(), {pos.begin(), pos.end()}};
}

bool PolarityTable::known(const std::string& label) const {
  return std::find(labels.begin(), labels.end(), label) != labels.end();
}

bool PolarityTable::is_positive(const std::string& label) const {
  return std::find(positive.begin(), positive.end(), label) != positive.end();
}

double emo_acc(const std::vector<std::string>& predictions, const std::vector<std::string>& targets, AccMode mode,
               const PolarityTable& table) {
  if (predictions.empty() || targets.empty()) fail(Errc::EmptySet, "no predictions to score");
  if (predictions.size() != targets.size()) fail(Errc::ShapeMismatch, "predictions and targets differ in length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    for (const auto* l : {&predictions[i], &targets[i]})
      if (!table.known(*l)) fail(Errc::UnknownLabel, "unknown emotion label '" + *l + "'");
    if (mode == AccMode::Acc8 ? predictions[i] == targets[i]
                              : table.is_positive(predictions[i]) == table.is_positive(targets[i]))
      ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// Providers

namespace {

constexpr std::size_t kThumb = 4;

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  return x ^ (x >> 33);
}

}  // namespace

std::vector<double> HashingEmbeddingProvider::embed_image(const std::filesystem::path& path) {
  return embed_image(read_png(path));
}

std::vector<double> HashingEmbeddingProvider::embed_image(const Image& image) const {
  std::vector<double> thumb;
  for (std::size_t c = 0; c < 3; ++c) {
    Map2D plane(image.height, image.width);
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x)
        plane.at(y, x) = image.at(y, x, image.channels == 1 ? 0 : c) / 255.0 - 0.5;
    const Map2D small = resample_area(plane, kThumb, kThumb);
    thumb.insert(thumb.end(), small.data.begin(), small.data.end());
  }
  std::mt19937_64 rng(seed_ ^ 0x5bd1e995ULL);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> out(dim_, 0.0);
  for (std::size_t d = 1; d < dim_; ++d) {
    double s = 0.0;
    for (double v : thumb) s += n01(rng) * v;
    out[d] = s / std::sqrt(static_cast<double>(thumb.size()));
  }
  // shared offset keeps image and text embeddings in a common positive cone
  if (dim_ > 0) out[0] = 1.0;
  return out;
}

std::vector<double> HashingEmbeddingProvider::embed_text(const std::string& text) {
  std::vector<double> out(dim_, 0.0);
  const auto tokens = tokenize(text);
  if (tokens.empty() || dim_ < 2) return out;
  for (const auto& tok : tokens) {
    std::uint64_t h = fnv1a(tok) ^ seed_;
    for (int k = 0; k < 4; ++k) {
      h = mix64(h + static_cast<std::uint64_t>(k));
      out[1 + h % (dim_ - 1)] += (h >> 63) ? 1.0 : -1.0;
    }
  }
  out[0] = std::sqrt(static_cast<double>(tokens.size()));
  return out;
}

std::vector<double> ClientEmbeddingProvider::request(const json& req) {
  json reply;
  try {
    reply = transport_->call(req);
  } catch (const Error& e) {
    fail(Errc::ProviderError, e.message());
  }
  if (!reply.is_object() || !reply.contains("embedding")) fail(Errc::ProviderError, "provider response lacks 'embedding'");
  try {
    return reply.at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(Errc::ProviderError, std::string("malformed embedding: ") + e.what());
  }
}

std::vector<double> ClientEmbeddingProvider::embed_image(const std::filesystem::path& path) {
  return request({{"image_path", path.string()}});
}

std::vector<double> ClientEmbeddingProvider::embed_text(const std::string& text) { return request({{"text", text}}); }

Classification EmbeddingClassifier::classify(const std::filesystem::path& image_path) {
  const auto img = provider_->embed_image(image_path);
  Classification c;
  double best = -2.0;
  for (const auto& label : labels_) {
    const double s = cosine(img, provider_->embed_text(label));
    c.scores[label] = s;
    if (s > best) {
      best = s;
      c.label = label;
    }
  }
  return c;
}

Classification ClientClassifier::classify(const std::filesystem::path& image_path) {
  json reply;
  try {
    reply = transport_->call({{"image_path", image_path.string()}});
  } catch (const Error& e) {
    fail(Errc::ProviderError, e.message());
  }
  try {
    Classification c;
    c.label = reply.at("label").get<std::string>();
    if (reply.contains("scores")) c.scores = reply.at("scores").get<std::map<std::string, double>>();
    return c;
  } catch (const json::exception& e) {
    fail(Errc::ProviderError, std::string("malformed classifier response: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Manifest and report

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += ch;
      any = true;
    }
  }
  if (quoted) fail(Errc::ManifestError, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::ManifestError, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto rows = parse_csv(ss.str());
  if (rows.empty()) fail(Errc::ManifestError, "manifest " + path.string() + " is empty");
  const auto& header = rows.front();
  auto column = [&](const std::string& name) -> std::size_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    fail(Errc::ManifestError, "manifest lacks column '" + name + "'");
  };
  const std::size_t cs = column("source_path");
  const std::size_t ce = column("edited_path");
  const std::size_t ct = column("target_emotion");
  const std::size_t cm = column("method");
  std::vector<ManifestRow> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size())
      fail(Errc::ManifestError, "manifest row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                                    " fields, expected " + std::to_string(header.size()));
    out.push_back({trim(row[cs]), trim(row[ce]), trim(row[ct]), trim(row[cm])});
  }
  if (out.empty()) fail(Errc::ManifestError, "manifest " + path.string() + " has no items");
  return out;
}

MetricAggregate aggregate(std::span<const MetricItem> items, const PolarityTable& table) {
  MetricAggregate a;
  a.count = items.size();
  if (items.empty()) return a;
  std::vector<std::string> pred, tgt;
  for (const auto& it : items) {
    a.clip_i_raw += it.clip_i_raw;
    a.clip_i_prox += it.clip_i_prox;
    a.tea += it.tea;
    a.ssim += it.ssim;
    pred.push_back(it.predicted);
    tgt.push_back(it.row.target_emotion);
  }
  const double n = static_cast<double>(items.size());
  a.clip_i_raw /= n;
  a.clip_i_prox /= n;
  a.tea /= n;
  a.ssim /= n;
  a.emo_acc8 = emo_acc(pred, tgt, AccMode::Acc8, table);
  a.emo_acc2 = emo_acc(pred, tgt, AccMode::Acc2, table);
  return a;
}

MetricReport report(const std::filesystem::path& manifest, EmbeddingProvider& provider, EmotionClassifier& classifier,
                    const PolarityTable& table) {
  const auto rows = read_manifest(manifest);
  const auto base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };

  std::vector<std::vector<double>> emotion_embeddings;
  try {
    for (const auto& label : table.labels) emotion_embeddings.push_back(provider.embed_text(label));
  } catch (const Error& e) {
    if (e.code() == Errc::ProviderError) throw;
    fail(Errc::ProviderError, e.message());
  }

  MetricReport rep;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const std::string where = "manifest item " + std::to_string(i + 1);
    const auto target = std::find(table.labels.begin(), table.labels.end(), row.target_emotion);
    if (target == table.labels.end())
      fail(Errc::ManifestError, where + ": unknown target emotion '" + row.target_emotion + "'");
    const auto src_path = resolve(row.source_path);
    const auto edit_path = resolve(row.edited_path);
    Image src, edited;
    try {
      src = read_png(src_path);
      edited = read_png(edit_path);
    } catch (const Error& e) {
      fail(Errc::ManifestError, where + ": " + e.message());
    }

    MetricItem item{row, 0, 0, 0, 0, {}};
    try {
      item.ssim = ssim(src, edited);
    } catch (const Error& e) {
      fail(Errc::ManifestError, where + ": " + e.message());
    }
    try {
      const auto zs = provider.embed_image(src_path);
      const auto ze = provider.embed_image(edit_path);
      item.clip_i_raw = std::clamp(cosine(zs, ze), 0.0, 1.0);
      item.clip_i_prox = clip_i_prox(item.clip_i_raw);
      item.tea = tea(ze, emotion_embeddings, static_cast<std::size_t>(target - table.labels.begin()));
      item.predicted = classifier.classify(edit_path).label;
    } catch (const Error& e) {
      if (e.code() == Errc::ProviderError) throw;
      fail(Errc::ProviderError, where + ": " + e.message());
    }
    if (!table.known(item.predicted))
      fail(Errc::ProviderError, where + ": classifier returned unknown label '" + item.predicted + "'");
    rep.items.push_back(std::move(item));
  }

  rep.overall = aggregate(rep.items, table);
  std::map<std::string, std::vector<MetricItem>> groups;
  for (const auto& it : rep.items) groups[it.row.method].push_back(it);
  for (const auto& [method, items] : groups) rep.by_method[method] = aggregate(items, table);
  return rep;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string num4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string report_csv(const MetricReport& rep) {
  std::string out = "source_path,edited_path,target_emotion,method,clip_i_raw,clip_i_prox,tea,ssim,predicted_label\n";
  for (const auto& it : rep.items) {
    out += csv_escape(it.row.source_path) + "," + csv_escape(it.row.edited_path) + "," +
           csv_escape(it.row.target_emotion) + "," + csv_escape(it.row.method) + "," + num(it.clip_i_raw) + "," +
           num(it.clip_i_prox) + "," + num(it.tea) + "," + num(it.ssim) + "," + csv_escape(it.predicted) + "\n";
  }
  return out;
}

std::string report_markdown(const MetricReport& rep) {
  std::string out = "| Method | N | CLIP-I | CLIP-I Prox | TEA | SSIM | Emo_Acc8 | Emo_Acc2 |\n";
  out += "|---|---:|---:|---:|---:|---:|---:|---:|\n";
  auto line = [&](const std::string& name, const MetricAggregate& a) {
    out += "| " + name + " | " + std::to_string(a.count) + " | " + num4(a.clip_i_raw) + " | " + num4(a.clip_i_prox) +
           " | " + num4(a.tea) + " | " + num4(a.ssim) + " | " + num4(a.emo_acc8) + " | " + num4(a.emo_acc2) + " |\n";
  };
  for (const auto& [method, a] : rep.by_method) line(method.empty() ? "(unnamed)" : method, a);
  if (rep.by_method.size() > 1) line("**all**", rep.overall);
  return out;
}

void write_report(const MetricReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, body] : {std::pair{"metrics.csv", report_csv(rep)}, std::pair{"metrics.md", report_markdown(rep)}}) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) fail(Errc::IoError, "cannot write " + (dir / name).string());
    f << body;
  }
}

std::shared_ptr<EmbeddingProvider> make_embedding_provider(const json& config) {
  const std::string kind = config.value("kind", "hashing");
  if (kind == "hashing")
    return std::make_shared<HashingEmbeddingProvider>(config.value("dim", std::size_t{64}),
                                                      config.value("seed", std::uint64_t{0}));
  if (kind == "client") {
    if (!config.contains("client")) fail(Errc::ConfigError, "client provider needs a 'client' transport config");
    return std::make_shared<ClientEmbeddingProvider>(std::shared_ptr<JsonTransport>(make_transport(config.at("client"))));
  }
  fail(Errc::ConfigError, "unknown embedding provider kind '" + kind + "'");
}

std::shared_ptr<EmotionClassifier> make_classifier(const json& config, std::shared_ptr<EmbeddingProvider> provider,
                                                   std::vector<std::string> labels) {
  const std::string kind = config.value("kind", "embedding");
  if (kind == "embedding") return std::make_shared<EmbeddingClassifier>(std::move(provider), std::move(labels));
  if (kind == "client") {
    if (!config.contains("client")) fail(Errc::ConfigError, "client classifier needs a 'client' transport config");
    return std::make_shared<ClientClassifier>(std::shared_ptr<JsonTransport>(make_transport(config.at("client"))));
  }
  fail(Errc::ConfigError, "unknown classifier kind '" + kind + "'");
}

}  // namespace emokg
