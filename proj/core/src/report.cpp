#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include "bronchograde/augment.hpp"
#include "bronchograde/csv.hpp"
#include "bronchograde/hash.hpp"
#include "bronchograde/log.hpp"
#include "bronchograde/pipeline.hpp"

namespace bronchograde::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string html_table(const std::vector<csv::Row>& rows, const std::string& cls) {
  std::ostringstream o;
  o << "<table class=\"" << cls << "\">\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    o << "<tr>";
    for (const auto& cell : rows[r]) {
      const char* tag = r == 0 ? "th" : "td";
      o << '<' << tag << '>' << escape(cell) << "</" << tag << '>';
    }
    o << "</tr>\n";
  }
  o << "</table>\n";
  return o.str();
}

/// Rows per grade in a manifest's `grade` column.
std::array<std::size_t, GradeLabel::kCount> grade_counts(const fs::path& manifest) {
  std::array<std::size_t, GradeLabel::kCount> out{};
  const auto rows = csv::read_file(manifest);
  if (rows.empty()) return out;
  std::size_t col = rows[0].size();
  for (std::size_t i = 0; i < rows[0].size(); ++i)
    if (rows[0][i] == "grade") col = i;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (col >= rows[r].size()) continue;
    const int g = std::stoi(rows[r][col]);
    if (g >= GradeLabel::kMin && g <= GradeLabel::kMax) ++out[static_cast<std::size_t>(g - GradeLabel::kMin)];
  }
  return out;
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

fs::path make_report(const PipelineConfig& cfg) {
  const auto ws = cfg.workspace();
  const std::vector<fs::path> required = {"data/split/train.csv",     "augmented/counts.csv",   "eval/metrics.csv",
                                          "eval/isolation.json",      "interpret/histograms.csv", "interpret/spectra.csv",
                                          "interpret/pca.csv",        "interpret/intensity.csv"};
  std::vector<fs::path> missing;
  for (const auto& p : required)
    if (!fs::exists(ws / p)) missing.push_back(p);
  if (!missing.empty()) {
    std::string list;
    for (const auto& p : missing) list += (list.empty() ? "" : ", ") + p.generic_string();
    log::error("report: missing artifacts: ", list);
    throw MissingArtifact(missing.front());
  }

  const auto out = ws / "report";
  fs::remove_all(out);
  fs::create_directories(out / "assets");
  fs::create_directories(out / "tables");

  // Dataset counts.
  std::vector<std::string> columns = {"Original"};
  std::vector<std::array<std::size_t, GradeLabel::kCount>> counts = {grade_counts(ws / "data/split/train.csv")};
  if (fs::exists(ws / "augmented/transform/manifest.csv")) {
    columns.push_back("Transformations");
    counts.push_back(grade_counts(ws / "augmented/transform/manifest.csv"));
  }
  for (const auto& [key, name] : std::vector<std::pair<std::string, std::string>>{{"cyclegan", "CycleGAN"}, {"cut", "CUT"}}) {
    if (!fs::exists(ws / "generated" / key)) continue;
    std::array<std::size_t, GradeLabel::kCount> c{};
    for (int g = 1; g <= GradeLabel::kCount; ++g) {
      const auto m = ws / "generated" / key / ("grade_" + std::to_string(g)) / "manifest.csv";
      if (fs::exists(m)) c[static_cast<std::size_t>(g - 1)] = grade_counts(m)[static_cast<std::size_t>(g - 1)];
    }
    columns.push_back(name);
    counts.push_back(c);
  }
  const auto count_rows = augment::count_table(columns, counts);
  csv::write_file(out / "tables/counts.csv", count_rows);
  const auto metric_rows = csv::read_file(ws / "eval/metrics.csv");
  csv::write_file(out / "tables/metrics.csv", metric_rows);
  const auto intensity_rows = csv::read_file(ws / "interpret/intensity.csv");
  csv::write_file(out / "tables/intensity.csv", intensity_rows);
  const auto pca_rows = csv::read_file(ws / "interpret/pca.csv");
  const auto spectra_rows = csv::read_file(ws / "interpret/spectra.csv");

  // Figures: every PNG under interpret/ is copied and linked.
  std::map<std::string, std::vector<fs::path>> figures;  // family -> asset paths
  for (const auto& rel : files_under(ws / "interpret")) {
    if (rel.extension() != ".png") continue;
    const auto dst = out / "assets" / rel;
    fs::create_directories(dst.parent_path());
    fs::copy_file(ws / "interpret" / rel, dst, fs::copy_options::overwrite_existing);
    figures[rel.begin()->string()].push_back(fs::path("assets") / rel);
  }

  json isolation;
  std::ifstream(ws / "eval/isolation.json") >> isolation;

  const std::string title = cfg.tree["report"]["title"].get<std::string>();
  std::ostringstream h;
  h << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>" << escape(title)
    << "</title>\n<style>\n"
    << "body{font-family:sans-serif;margin:2em;max-width:1200px}\n"
    << "table{border-collapse:collapse;margin:1em 0}\n"
    << "td,th{border:1px solid #bbb;padding:3px 8px;text-align:right}\n"
    << "th{background:#eee}\n"
    << ".figs img{margin:3px;border:1px solid #ccc}\n"
    << "pre{background:#f6f6f6;padding:1em;overflow-x:auto;font-size:12px}\n"
    << "</style>\n</head>\n<body>\n";
  h << "<h1>" << escape(title) << "</h1>\n";
  if (cfg.tree["report"]["timestamp"].get<bool>()) h << "<p id=\"generated\">Generated " << utc_now() << "</p>\n";
  h << "<p>Profile <b>" << escape(cfg.tree["profile"].get<std::string>()) << "</b>, seed " << cfg.seed()
    << ", bronchograde " << kToolVersion << ".</p>\n";

  h << "<h2 id=\"counts\">Dataset counts</h2>\n<p>Training images per grade for each augmentation method "
       "(the test split is never augmented).</p>\n"
    << html_table(count_rows, "counts");
  h << "<h2 id=\"metrics\">Classification metrics</h2>\n<p>Macro-averaged over the six grades on the held-out "
       "test split ("
    << isolation.value("test_images", 0) << " images). Test/train content-hash overlap: "
    << (isolation.value("disjoint", false) ? "none" : "DETECTED") << ".</p>\n"
    << html_table(metric_rows, "metrics");
  h << "<h2 id=\"intensity\">Mean heatmap intensity</h2>\n<p>Mean Grad-CAM intensity (0-255) per true grade, "
       "classifier backbone "
    << escape(cfg.tree["interpret"]["backbone"].get<std::string>()) << ", target "
    << escape(cfg.tree["interpret"]["target"].get<std::string>()) << " grade.</p>\n"
    << html_table(intensity_rows, "intensity");

  const std::vector<std::pair<std::string, std::string>> families = {
      {"histograms", "Colour histograms"}, {"spectra", "Frequency spectra"}, {"pca", "Feature embeddings (PCA)"},
      {"heatmaps", "Grad-CAM overlays"}};
  for (const auto& [key, heading] : families) {
    h << "<h2 id=\"" << key << "\">" << heading << "</h2>\n";
    if (key == "spectra") h << html_table(spectra_rows, "spectra");
    if (key == "pca") h << html_table(pca_rows, "pca");
    h << "<div class=\"figs\">\n";
    for (const auto& p : figures[key]) {
      const auto s = p.generic_string();
      h << "<a href=\"" << escape(s) << "\"><img src=\"" << escape(s) << "\" alt=\"" << escape(p.stem().string())
        << "\" title=\"" << escape(s) << "\" width=\"" << (key == "heatmaps" ? 128 : 256) << "\"></a>\n";
    }
    h << "</div>\n";
  }

  h << "<h2 id=\"provenance\">Provenance</h2>\n";
  h << "<p>Configuration hash " << sha256_hex(cfg.tree.dump()) << ".</p>\n";
  h << "<details><summary>Resolved configuration</summary>\n<pre>" << escape(cfg.tree.dump(2)) << "</pre>\n</details>\n";
  std::vector<csv::Row> unit_rows = {{"unit", "seed", "config hash", "outputs"}};
  for (const auto& rel : files_under(ws / "manifests")) {
    if (rel.extension() != ".json" || rel.filename() == "config.json") continue;
    json m;
    std::ifstream(ws / "manifests" / rel) >> m;
    std::string outs;
    for (const auto& [k, v] : m["outputs"].items()) outs += (outs.empty() ? "" : " ") + k + "=" + v.get<std::string>().substr(0, 12);
    unit_rows.push_back({m.value("unit", ""), std::to_string(m.value("seed", std::uint64_t{0})),
                         m.value("config_hash", "").substr(0, 16), outs});
  }
  h << "<p>Stage units and their manifests (inputs, config, seed, outputs):</p>\n" << html_table(unit_rows, "units");
  h << "<details><summary>Artifact index</summary>\n<table class=\"artifacts\">\n<tr><th>artifact</th><th>sha256</th></tr>\n";
  for (const auto& top : {"data", "augmented", "generated", "models", "eval", "interpret", "manifests"}) {
    for (const auto& rel : files_under(ws / top)) {
      const auto path = (fs::path(top) / rel).generic_string();
      h << "<tr><td><a href=\"../" << escape(path) << "\">" << escape(path) << "</a></td><td>"
        << sha256_file(ws / top / rel) << "</td></tr>\n";
    }
  }
  h << "</table>\n</details>\n</body>\n</html>\n";

  const auto index = out / "index.html";
  std::ofstream(index) << h.str();
  std::ofstream(out / "config.json") << cfg.tree.dump(2) << '\n';
  log::info("report: ", index.string());
  return index;
}

}  // namespace bronchograde::pipeline
