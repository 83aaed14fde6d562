#pragma once

// Experiment definitions and result streams: the "mla-config/1" JSON config,
// the JSONL metrics stream and the CSV plot exports.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mla/altopt.hpp"
#include "mla/binio.hpp"
#include "mla/data.hpp"
#include "mla/error.hpp"
#include "mla/eval.hpp"

namespace mla {

inline constexpr const char* kConfigVersion = "mla-config/1";

// Invalid experiment definition (unknown key, wrong type, bad value).
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two-modality benchmark with one near-noiseless (dominant) and one noisy
// (subordinate) view of the same 8-dim latent, 4 classes, 6000 samples.
inline SyntheticSpec laziness_benchmark(std::uint64_t seed) {
  SyntheticSpec s;
  s.latent_dim = 8;
  s.class_count = 4;
  s.samples = 6000;
  s.modalities = {{16, 10.0, 0.1}, {16, 10.0, 1.0}};
  s.seed = seed;
  return s;
}

// 3600 / 1200 / 1200 rows on the benchmark.
inline SplitSpec laziness_split(std::uint64_t seed) { return {0.6, 0.2, 0.2, seed}; }

struct ExperimentConfig {
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::string> dataset_path;
  double missing_rate = 0.0;  // applied to every split with split-specific sub-seeds
  SplitSpec split;
  TrainConfig train;
  std::string model = "mla";  // mla | concat | late
  bool dynamic_fusion = true;
  bool gap = true;
  std::vector<double> sweep_etas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::vector<std::uint64_t> sweep_seeds{0, 1, 2};
  unsigned jobs = 1;
  std::string output_dir = "runs/default";
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw config_error(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw config_error("unknown key \"" + where + "." + k + "\"");
  }
}

template <typename T>
void read_opt(const nlohmann::json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw config_error("\"" + where + "." + key + "\" has the wrong type: " + obj.at(key).dump());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : s.modalities) mods.push_back({{"dim", m.dim}, {"mixing_scale", m.mixing_scale}, {"noise_std", m.noise_std}});
  return {{"latent_dim", s.latent_dim}, {"class_count", s.class_count}, {"samples", s.samples}, {"seed", s.seed}, {"modalities", mods}};
}

// Canonical, fully expanded form of a config; equal configs dump identically.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json ds;
  if (c.synthetic) ds["synthetic"] = to_json(*c.synthetic);
  if (c.dataset_path) ds["path"] = *c.dataset_path;
  ds["missing_rate"] = c.missing_rate;
  const TrainConfig& t = c.train;
  return {{"version", kConfigVersion},
          {"dataset", ds},
          {"split", {{"train", c.split.train_fraction}, {"val", c.split.val_fraction}, {"test", c.split.test_fraction}, {"seed", c.split.seed}}},
          {"model", c.model},
          {"train",
           {{"total_steps", t.total_steps}, {"lr", t.lr}, {"momentum", t.momentum}, {"decay_ratio", t.decay_ratio},
            {"decay_steps", t.decay_steps}, {"batch_size", t.batch_size}, {"alpha", t.alpha}, {"hgm", t.hgm_enabled},
            {"seed", t.seed}, {"hidden", t.hidden}, {"embed_dim", t.embed_dim}}},
          {"eval", {{"dynamic_fusion", c.dynamic_fusion}, {"gap", c.gap}}},
          {"sweep", {{"etas", c.sweep_etas}, {"seeds", c.sweep_seeds}, {"jobs", c.jobs}}},
          {"output_dir", c.output_dir}};
}

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "dataset.synthetic", {"latent_dim", "class_count", "samples", "seed", "modalities", "preset"});
  SyntheticSpec s;
  if (j.contains("preset")) {
    if (j.at("preset") != "laziness") throw config_error("unknown synthetic preset " + j.at("preset").dump());
    s = laziness_benchmark(0);
  }
  detail::read_opt(j, "latent_dim", s.latent_dim, "dataset.synthetic");
  detail::read_opt(j, "class_count", s.class_count, "dataset.synthetic");
  detail::read_opt(j, "samples", s.samples, "dataset.synthetic");
  detail::read_opt(j, "seed", s.seed, "dataset.synthetic");
  if (j.contains("modalities")) {
    if (!j.at("modalities").is_array()) throw config_error("dataset.synthetic.modalities must be an array");
    s.modalities.clear();
    for (const auto& m : j.at("modalities")) {
      detail::check_keys(m, "dataset.synthetic.modalities[]", {"dim", "mixing_scale", "noise_std"});
      ModalitySpec ms;
      detail::read_opt(m, "dim", ms.dim, "dataset.synthetic.modalities[]");
      detail::read_opt(m, "mixing_scale", ms.mixing_scale, "dataset.synthetic.modalities[]");
      detail::read_opt(m, "noise_std", ms.noise_std, "dataset.synthetic.modalities[]");
      s.modalities.push_back(ms);
    }
  }
  try {
    validate(s);
  } catch (const contract_error& e) {
    throw config_error(e.what());
  }
  return s;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, "config", {"version", "dataset", "split", "model", "train", "eval", "sweep", "output_dir"});
  if (!j.contains("version") || j.at("version") != kConfigVersion)
    throw config_error(std::string("config version must be \"") + kConfigVersion + "\"");
  ExperimentConfig c;
  if (!j.contains("dataset")) throw config_error("config needs a \"dataset\" section");
  const auto& ds = j.at("dataset");
  detail::check_keys(ds, "dataset", {"synthetic", "path", "missing_rate"});
  if (ds.contains("synthetic") == ds.contains("path"))
    throw config_error("dataset must name exactly one source: \"synthetic\" or \"path\"");
  if (ds.contains("synthetic")) c.synthetic = synthetic_from_json(ds.at("synthetic"));
  if (ds.contains("path")) {
    std::string p;
    detail::read_opt(ds, "path", p, "dataset");
    c.dataset_path = p;
  }
  detail::read_opt(ds, "missing_rate", c.missing_rate, "dataset");
  if (!(c.missing_rate >= 0.0 && c.missing_rate < 1.0)) throw config_error("dataset.missing_rate must lie in [0, 1)");

  if (j.contains("split")) {
    const auto& s = j.at("split");
    detail::check_keys(s, "split", {"train", "val", "test", "seed"});
    detail::read_opt(s, "train", c.split.train_fraction, "split");
    detail::read_opt(s, "val", c.split.val_fraction, "split");
    detail::read_opt(s, "test", c.split.test_fraction, "split");
    detail::read_opt(s, "seed", c.split.seed, "split");
  }
  detail::read_opt(j, "model", c.model, "config");
  if (c.model != "mla" && c.model != "concat" && c.model != "late")
    throw config_error("model must be one of mla, concat, late");
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(t, "train", {"total_steps", "lr", "momentum", "decay_ratio", "decay_steps", "batch_size", "alpha",
                                    "hgm", "seed", "hidden", "embed_dim"});
    detail::read_opt(t, "total_steps", c.train.total_steps, "train");
    detail::read_opt(t, "lr", c.train.lr, "train");
    detail::read_opt(t, "momentum", c.train.momentum, "train");
    detail::read_opt(t, "decay_ratio", c.train.decay_ratio, "train");
    detail::read_opt(t, "decay_steps", c.train.decay_steps, "train");
    detail::read_opt(t, "batch_size", c.train.batch_size, "train");
    detail::read_opt(t, "alpha", c.train.alpha, "train");
    detail::read_opt(t, "hgm", c.train.hgm_enabled, "train");
    detail::read_opt(t, "seed", c.train.seed, "train");
    detail::read_opt(t, "hidden", c.train.hidden, "train");
    detail::read_opt(t, "embed_dim", c.train.embed_dim, "train");
  }
  try {
    validate(c.train);
  } catch (const contract_error& e) {
    throw config_error(e.what());
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::check_keys(e, "eval", {"dynamic_fusion", "gap"});
    detail::read_opt(e, "dynamic_fusion", c.dynamic_fusion, "eval");
    detail::read_opt(e, "gap", c.gap, "eval");
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    detail::check_keys(s, "sweep", {"etas", "seeds", "jobs"});
    detail::read_opt(s, "etas", c.sweep_etas, "sweep");
    detail::read_opt(s, "seeds", c.sweep_seeds, "sweep");
    detail::read_opt(s, "jobs", c.jobs, "sweep");
    for (double e : c.sweep_etas)
      if (!(e >= 0.0 && e <= 0.7)) throw config_error("sweep.etas must lie in [0, 0.7]");
    if (c.sweep_etas.empty() || c.sweep_seeds.empty()) throw config_error("sweep needs at least one eta and one seed");
  }
  detail::read_opt(j, "output_dir", c.output_dir, "config");
  return c;
}

// Applies "a.b.c=value" to a config document. The value is parsed as JSON when it
// parses, otherwise taken as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw config_error("--set expects key=value, got \"" + assignment + "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw config_error("--set " + key + ": \"" + parts[i] + "\" is not a section");
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc;
  try {
    doc = binio::read_json(path);
  } catch (const parse_error& e) {
    throw config_error(e.what());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

inline MultimodalDataset resolve_dataset(const ExperimentConfig& c) {
  if (c.synthetic) return generate_synthetic(*c.synthetic);
  return load_dataset(*c.dataset_path);
}

// Unmasked splits of the configured dataset.
inline Splits base_splits(const ExperimentConfig& c) { return split(resolve_dataset(c), c.split); }

// Splits as seen by train and eval: masked at the configured missing rate, with
// the same sub-seeds a sweep uses for that rate and the training seed.
inline Splits experiment_splits(const ExperimentConfig& c) {
  Splits s = base_splits(c);
  if (c.missing_rate == 0.0) return s;
  return mask_splits(s, c.missing_rate, c.train.seed);
}

// ---------------------------------------------------------------------------
// Metrics stream: one JSON object per line.

struct MetricsRecord {
  std::int64_t timestamp = 0;
  std::string run_id;
  std::string phase;  // train | eval | sweep | ablate
  std::optional<std::uint64_t> step;
  std::optional<double> eta;
  std::map<std::string, std::string> labels;
  std::map<std::string, double> metrics;
};

// Record timestamps come from MLA_TIMESTAMP (integer seconds) and default to 0,
// so identical runs produce identical streams.
inline std::int64_t record_timestamp() {
  const char* v = std::getenv("MLA_TIMESTAMP");
  return v ? std::strtoll(v, nullptr, 10) : 0;
}

// Hash of the canonical config, shared by every record a config produces. Where
// the results go and how many jobs produce them do not change the id.
inline std::string run_id_for(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output_dir");
  j["sweep"].erase("jobs");
  const std::string canon = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : canon) h = (h ^ ch) * 0x100000001b3ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json to_json(const MetricsRecord& r) {
  for (const auto& [k, v] : r.metrics)
    if (!std::isfinite(v)) throw numeric_error("metric " + k + " is not finite", r.step.value_or(0));
  nlohmann::json j{{"timestamp", r.timestamp}, {"run_id", r.run_id}, {"phase", r.phase}};
  if (r.step) j["step"] = *r.step;
  if (r.eta) j["eta"] = *r.eta;
  if (!r.labels.empty()) j["labels"] = r.labels;
  j["metrics"] = r.metrics;
  return j;
}

inline MetricsRecord record_from_json(const nlohmann::json& j) {
  MetricsRecord r;
  r.timestamp = j.at("timestamp").get<std::int64_t>();
  r.run_id = j.at("run_id").get<std::string>();
  r.phase = j.at("phase").get<std::string>();
  if (j.contains("step")) r.step = j.at("step").get<std::uint64_t>();
  if (j.contains("eta")) r.eta = j.at("eta").get<double>();
  if (j.contains("labels")) r.labels = j.at("labels").get<std::map<std::string, std::string>>();
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  return r;
}

// Append-only writer; every record is flushed as soon as it is written.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, bool truncate) : path_(path) {
    out_.open(path, truncate ? std::ios::trunc : std::ios::app);
    if (!out_) throw io_error("cannot open metrics file " + path.string());
  }

  void write(const MetricsRecord& r) {
    out_ << to_json(r).dump() << '\n';
    out_.flush();
    if (!out_) throw io_error("write to " + path_.string() + " failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Reads a JSONL stream. A malformed line raises parse_error naming the 1-based
// line number; the offset is the byte at which that line starts.
inline std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open metrics file " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  std::uint64_t lineno = 0, offset = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::uint64_t start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw parse_error(path.filename().string() + ": malformed record on line " + std::to_string(lineno) + ": " + e.what(),
                        start);
    }
  }
  return out;
}

// Report records shared by cmd_eval, cmd_sweep and cmd_ablate.
inline void add_report_metrics(MetricsRecord& r, const EvalReport& e) {
  r.metrics["multi"] = e.multi;
  r.metrics["samples"] = static_cast<double>(e.samples);
  for (std::size_t m = 0; m < e.probes.size(); ++m)
    if (e.probes[m]) r.metrics["probe_" + std::to_string(m)] = *e.probes[m];
}

inline nlohmann::json to_json(const EvalReport& e) {
  nlohmann::json probes = nlohmann::json::array();
  for (const auto& p : e.probes) probes.push_back(p ? nlohmann::json(*p) : nlohmann::json(nullptr));
  return {{"probes", probes}, {"multi", e.multi}, {"confusion", e.confusion}, {"samples", e.samples}};
}

inline nlohmann::json to_json(const GapReport& g) {
  nlohmann::json d = nlohmann::json::array();
  for (std::size_t a = 0; a < g.distances.rows; ++a)
    for (std::size_t b = a + 1; b < g.distances.cols; ++b) d.push_back({{"a", a}, {"b", b}, {"distance", g.distances(a, b)}});
  return {{"centroids", g.centroids}, {"distances", d}};
}

// ---------------------------------------------------------------------------
// CSV export.

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct PlotExport {
  std::size_t loss_rows = 0;
  std::size_t accuracy_rows = 0;
  std::size_t gap_rows = 0;
};

// Writes accuracy_vs_eta.csv (one row per sweep record), loss_vs_step.csv (one
// row per train record) and gap_distances.csv (one row per gap_<a>_<b> metric of
// an eval record). Numbers carry 17 significant digits.
inline PlotExport export_plot(const std::vector<MetricsRecord>& records, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw io_error("cannot create " + out_dir.string() + ": " + ec.message());
  std::string loss = "run_id,step,modality,mean_loss,lr\n";
  std::string acc = "run_id,eta,seed,mla_multi,late_multi\n";
  std::string gap = "run_id,modality_a,modality_b,distance\n";
  PlotExport n;
  auto metric = [](const MetricsRecord& r, const std::string& k) {
    auto it = r.metrics.find(k);
    return it == r.metrics.end() ? std::string() : fmt17(it->second);
  };
  auto label = [](const MetricsRecord& r, const std::string& k) {
    auto it = r.labels.find(k);
    return it == r.labels.end() ? std::string() : it->second;
  };
  for (const auto& r : records) {
    if (r.phase == "train") {
      loss += r.run_id + "," + (r.step ? std::to_string(*r.step) : "") + "," + metric(r, "modality") + "," +
              metric(r, "mean_loss") + "," + metric(r, "lr") + "\n";
      ++n.loss_rows;
    } else if (r.phase == "sweep") {
      acc += r.run_id + "," + (r.eta ? fmt17(*r.eta) : "") + "," + label(r, "seed") + "," + metric(r, "mla_multi") + "," +
             metric(r, "late_multi") + "\n";
      ++n.accuracy_rows;
    } else if (r.phase == "eval") {
      for (const auto& [k, v] : r.metrics) {
        unsigned a = 0, b = 0;
        if (std::sscanf(k.c_str(), "gap_%u_%u", &a, &b) == 2) {
          gap += r.run_id + "," + std::to_string(a) + "," + std::to_string(b) + "," + fmt17(v) + "\n";
          ++n.gap_rows;
        }
      }
    }
  }
  binio::write_file(out_dir / "loss_vs_step.csv", loss);
  binio::write_file(out_dir / "accuracy_vs_eta.csv", acc);
  binio::write_file(out_dir / "gap_distances.csv", gap);
  return n;
}

}  // namespace mla
