#include "latnav/pipeline.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "latnav/anonymize.hpp"
#include "latnav/random.hpp"

namespace latnav {

namespace fs = std::filesystem;
using json = nlohmann::json;

// --- names -------------------------------------------------------------------------

std::string_view stage_name(Stage s) noexcept {
  switch (s) {
    case Stage::synth_data: return "synth-data";
    case Stage::train_gan: return "train-gan";
    case Stage::project: return "project";
    case Stage::train_classifiers: return "train-classifiers";
    case Stage::ksame: return "ksame";
    case Stage::plan: return "plan";
    case Stage::gen_dataset: return "gen-dataset";
    case Stage::eval: return "eval";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : kAllStages) {
    if (stage_name(s) == name) return s;
  }
  throw PipelineError("invalid_argument", "unknown stage '" + name + "'",
                      "stages: synth-data, train-gan, project, train-classifiers, ksame, plan, gen-dataset, eval");
}

std::string_view arm_name(Arm a) noexcept {
  switch (a) {
    case Arm::real: return "real";
    case Arm::linear: return "linear";
    case Arm::plan: return "plan";
    case Arm::ksame: return "ksame";
    case Arm::ksame_plan: return "ksame-plan";
  }
  return "?";
}

Arm parse_arm(const std::string& name) {
  for (Arm a : kAllArms) {
    if (arm_name(a) == name) return a;
  }
  throw PipelineError("invalid_argument", "unknown arm '" + name + "'", "arms: real, linear, plan, ksame, ksame-plan");
}

// --- config ----------------------------------------------------------------------------

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string format_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size()) throw PipelineError("invalid_config", key + ": expected a non-negative integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(out)) {
    throw PipelineError("invalid_config", key + ": expected a finite number, got '" + value + "'");
  }
  return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_u64(key, item));
  }
  return out;
}

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

#define LATNAV_SIZE(sec, name, expr)                                                                        \
  Field {                                                                                                   \
    sec, name, [](const PipelineConfig& c) { return std::to_string(c.expr); },                              \
        [](PipelineConfig& c, const std::string& v) { c.expr = parse_u64(std::string(sec) + "." + name, v); } \
  }
#define LATNAV_REAL(sec, name, expr)                                                                            \
  Field {                                                                                                       \
    sec, name, [](const PipelineConfig& c) { return format_double(c.expr); },                                   \
        [](PipelineConfig& c, const std::string& v) { c.expr = parse_double(std::string(sec) + "." + name, v); } \
  }
#define LATNAV_LIST(sec, name, expr)                                                                          \
  Field {                                                                                                     \
    sec, name, [](const PipelineConfig& c) { return format_list(c.expr); },                                   \
        [](PipelineConfig& c, const std::string& v) { c.expr = parse_list(std::string(sec) + "." + name, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      LATNAV_SIZE("data", "n_id", n_id),
      LATNAV_SIZE("data", "n_classes", n_classes),
      LATNAV_SIZE("data", "height", identicon.height),
      LATNAV_SIZE("data", "width", identicon.width),
      LATNAV_SIZE("data", "grid", identicon.grid),
      LATNAV_REAL("data", "pattern_amplitude", identicon.pattern_amplitude),
      LATNAV_REAL("data", "background", identicon.background),
      LATNAV_REAL("data", "class_amplitude", identicon.class_amplitude),
      LATNAV_REAL("data", "class_jitter", identicon.class_jitter),
      LATNAV_REAL("data", "blob_radius", identicon.blob_radius),
      LATNAV_REAL("data", "noise", identicon.noise),
      LATNAV_REAL("data", "train_fraction", identicon.splits.train),
      LATNAV_REAL("data", "val_fraction", identicon.splits.val),
      LATNAV_REAL("data", "test_fraction", identicon.splits.test),

      LATNAV_SIZE("gan", "latent_dim", gan.latent_dim),
      LATNAV_LIST("gan", "generator_hidden", gan.generator_hidden),
      LATNAV_LIST("gan", "discriminator_hidden", gan.discriminator_hidden),
      LATNAV_SIZE("gan", "steps", gan.steps),
      LATNAV_SIZE("gan", "batch", gan.batch),
      LATNAV_REAL("gan", "lr", gan.lr),
      LATNAV_REAL("gan", "beta1", gan.beta1),

      LATNAV_SIZE("project", "restarts", projection.restarts),
      LATNAV_SIZE("project", "steps", projection.steps),
      LATNAV_REAL("project", "lr", projection.lr),

      LATNAV_LIST("classifier", "hidden", label_classifier.hidden),
      LATNAV_SIZE("classifier", "steps", label_classifier.steps),
      LATNAV_SIZE("classifier", "batch", label_classifier.batch),
      LATNAV_REAL("classifier", "lr", label_classifier.lr),
      LATNAV_SIZE("classifier", "eval_every", label_classifier.eval_every),

      LATNAV_LIST("identity", "hidden", identity_classifier.hidden),
      LATNAV_SIZE("identity", "steps", identity_classifier.steps),
      LATNAV_SIZE("identity", "batch", identity_classifier.batch),
      LATNAV_REAL("identity", "lr", identity_classifier.lr),
      LATNAV_SIZE("identity", "eval_every", identity_classifier.eval_every),
      LATNAV_REAL("identity", "val_noise", identity_classifier.identity_val_noise),
      LATNAV_SIZE("identity", "per_identity", per_identity),

      LATNAV_SIZE("ksame", "endpoint_k", endpoint_k),
      LATNAV_LIST("ksame", "utility_k", utility_k),

      LATNAV_SIZE("plan", "length", length),
      LATNAV_SIZE("plan", "steps", steps),
      LATNAV_REAL("plan", "lr", lr),
      LATNAV_REAL("plan", "lambda_id", weights.identity),
      LATNAV_REAL("plan", "lambda_class", weights.label),
      LATNAV_SIZE("plan", "max_pairs", max_pairs),
      LATNAV_SIZE("plan", "utility_max_pairs", utility_max_pairs),

      LATNAV_SIZE("eval", "runs", downstream.runs),
      LATNAV_LIST("eval", "hidden", downstream.classifier.hidden),
      LATNAV_SIZE("eval", "epochs", downstream.epochs),
      LATNAV_SIZE("eval", "steps", downstream.classifier.steps),
      LATNAV_SIZE("eval", "batch", downstream.classifier.batch),
      LATNAV_REAL("eval", "lr", downstream.classifier.lr),
      LATNAV_SIZE("eval", "eval_every", downstream.classifier.eval_every),
      LATNAV_LIST("eval", "mia_hidden", mia.hidden),
      LATNAV_SIZE("eval", "mia_steps", mia.steps),
      LATNAV_SIZE("eval", "mia_batch", mia.batch),
      LATNAV_REAL("eval", "mia_lr", mia.lr),

      LATNAV_SIZE("run", "seed", seed),
      Field{"run", "out", [](const PipelineConfig& c) { return c.out.string(); },
            [](PipelineConfig& c, const std::string& v) { c.out = trim(v); }},
      LATNAV_SIZE("run", "workers", workers),
  };
  return table;
}

#undef LATNAV_SIZE
#undef LATNAV_REAL
#undef LATNAV_LIST

bool affects_results(const Field& f) {
  const std::string_view s = f.section, k = f.key;
  return !(s == "run" && (k == "out" || k == "workers"));
}

std::string section_text(const PipelineConfig& config, std::initializer_list<std::string_view> sections) {
  std::string out;
  for (std::string_view sec : sections) {
    out += "[" + std::string(sec) + "]\n";
    for (const Field& f : fields()) {
      if (f.section == sec && affects_results(f)) out += std::string(f.key) + " = " + f.get(config) + "\n";
    }
  }
  return out;
}

void validate(const PipelineConfig& c) {
  auto bad = [](const std::string& what) { throw PipelineError("invalid_config", what); };
  try {
    validate_splits(c.identicon.splits);
  } catch (const std::exception& e) {
    bad(e.what());
  }
  if (c.n_classes < 2) bad("data.n_classes must be at least 2");
  if (c.n_id < 2 * c.n_classes) bad("data.n_id must be at least 2 * n_classes");
  if (c.length < 3) bad("plan.length must be at least 3");
  if (c.endpoint_k < 2) bad("ksame.endpoint_k must be at least 2");
  for (std::size_t k : c.utility_k) {
    if (k < 2) bad("ksame.utility_k entries must be at least 2");
  }
  if (c.per_identity > c.projection.restarts) bad("identity.per_identity cannot exceed project.restarts");
  if (c.downstream.runs == 0) bad("eval.runs must be at least 1");
  if (c.workers == 0) bad("run.workers must be at least 1");
  if (!(c.lr > 0.0)) bad("plan.lr must be positive");
  if (c.weights.identity < 0.0 || c.weights.label < 0.0) bad("plan.lambda_id and plan.lambda_class must be non-negative");
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw PipelineError("invalid_config", std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  PipelineConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw PipelineError("invalid_config", "config: key '" + section + "' must sit under a [section]");
    }
    for (const auto& [key, value] : body) {
      const auto it = std::find_if(fields().begin(), fields().end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == fields().end()) throw PipelineError("invalid_config", "config: unknown key " + section + "." + key);
      it->set(config, value.data());
    }
  }
  validate(config);
  return config;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw PipelineError("invalid_config", "cannot read config file " + path.string(), "pass --config <path> to an INI file");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_text(const PipelineConfig& config) {
  return section_text(config, {"data", "gan", "project", "classifier", "identity", "ksame", "plan", "eval", "run"});
}

void apply_environment(PipelineConfig& config) {
  if (const char* out = std::getenv("PLAN_OUT"); out != nullptr && *out != '\0') config.out = out;
  if (const char* w = std::getenv("PLAN_WORKERS"); w != nullptr && *w != '\0') {
    config.workers = parse_u64("PLAN_WORKERS", w);
    if (config.workers == 0) throw PipelineError("invalid_config", "PLAN_WORKERS must be at least 1");
  }
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- stage graph ------------------------------------------------------------------

namespace {

constexpr int kStageVersion = 1;

std::string own_text(const PipelineConfig& c, Stage s) {
  switch (s) {
    case Stage::synth_data: return section_text(c, {"data"});
    case Stage::train_gan: return section_text(c, {"gan"});
    case Stage::project: return section_text(c, {"project"});
    case Stage::train_classifiers: return section_text(c, {"classifier", "identity"});
    case Stage::ksame: return section_text(c, {"ksame"});
    case Stage::plan: return section_text(c, {"plan"});
    case Stage::gen_dataset: return {};
    case Stage::eval: return section_text(c, {"eval"});
  }
  return {};
}

std::vector<Stage> eval_upstream(Arm arm) {
  if (arm == Arm::real) return {Stage::synth_data, Stage::train_classifiers};
  return {Stage::synth_data, Stage::train_classifiers, Stage::gen_dataset};
}

std::string hash_with(const PipelineConfig& c, const std::string& name, const std::string& own,
                      const std::vector<Stage>& upstream) {
  std::string text = "stage " + name + "\nversion " + std::to_string(kStageVersion) + "\nseed " + std::to_string(c.seed) +
                     "\n" + own;
  for (Stage u : upstream) text += "upstream " + std::string(stage_name(u)) + " " + stage_hash(c, u) + "\n";
  return fnv1a_hex(text);
}

std::string eval_stage_name(Arm arm) { return "eval-" + std::string(arm_name(arm)); }

std::string eval_hash(const PipelineConfig& c, Arm arm) {
  return hash_with(c, eval_stage_name(arm), own_text(c, Stage::eval) + "arm " + std::string(arm_name(arm)) + "\n",
                   eval_upstream(arm));
}

}  // namespace

std::vector<Stage> upstream_of(Stage stage) {
  switch (stage) {
    case Stage::synth_data: return {};
    case Stage::train_gan: return {Stage::synth_data};
    case Stage::project: return {Stage::synth_data, Stage::train_gan};
    case Stage::train_classifiers: return {Stage::synth_data, Stage::train_gan, Stage::project};
    case Stage::ksame: return {Stage::synth_data, Stage::train_gan, Stage::project};
    case Stage::plan: return {Stage::train_gan, Stage::train_classifiers, Stage::ksame};
    case Stage::gen_dataset: return {Stage::train_gan, Stage::ksame, Stage::plan};
    case Stage::eval: return {Stage::synth_data, Stage::train_classifiers, Stage::gen_dataset};
  }
  return {};
}

std::string stage_hash(const PipelineConfig& config, Stage stage) {
  return hash_with(config, std::string(stage_name(stage)), own_text(config, stage), upstream_of(stage));
}

// --- manifests ---------------------------------------------------------------------

std::string manifest_json(const Manifest& m) {
  json j;
  j["stage"] = m.stage;
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["config_hash"] = m.config_hash;
  j["upstream"] = m.upstream;
  json arts = json::array();
  for (const auto& a : m.artifacts) arts.push_back({{"path", a.path}, {"fnv1a", a.hash}, {"bytes", a.bytes}});
  j["artifacts"] = arts;
  return j.dump(2) + "\n";
}

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    m.stage = j.at("stage").get<std::string>();
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.upstream = j.at("upstream").get<std::map<std::string, std::string>>();
    for (const auto& a : j.at("artifacts")) {
      m.artifacts.push_back({a.at("path").get<std::string>(), a.at("fnv1a").get<std::string>(),
                             a.at("bytes").get<std::uintmax_t>()});
    }
  } catch (const json::exception& e) {
    throw PipelineError("corrupt_manifest", std::string("manifest: ") + e.what(), "delete the manifest and rerun the stage");
  }
  return m;
}

// --- layout ----------------------------------------------------------------------------

namespace layout {
std::string centroid_set_name(std::size_t k) { return "k" + std::to_string(k); }
fs::path private_centroids(std::size_t k) { return fs::path("private") / ("centroids_" + centroid_set_name(k) + ".txt"); }
fs::path export_centroids(std::size_t k) { return kExport / ("centroids_" + centroid_set_name(k) + ".txt"); }
fs::path trajectories(std::size_t k, bool optimized) {
  return fs::path("plan") / centroid_set_name(k) / (optimized ? "plan.trajs" : "linear.trajs");
}
fs::path plan_trace(std::size_t k) { return fs::path("plan") / centroid_set_name(k) / "trace.csv"; }
fs::path export_images(const std::string& arm_set) { return kExport / arm_set / "images"; }
fs::path report(const std::string& arm_set) { return fs::path("reports") / (arm_set + ".json"); }
}  // namespace layout

std::vector<std::string> arm_sets(const PipelineConfig& config, Arm arm) {
  switch (arm) {
    case Arm::real: return {"real"};
    case Arm::linear: return {"linear"};
    case Arm::plan: return {"plan"};
    case Arm::ksame:
    case Arm::ksame_plan: {
      std::vector<std::string> out;
      for (std::size_t k : config.utility_k) out.push_back(std::string(arm_name(arm)) + "_" + layout::centroid_set_name(k));
      return out;
    }
  }
  return {};
}

// --- trajectory sets ------------------------------------------------------------------

void write_trajectory_set(std::ostream& out, const std::vector<Trajectory>& trajs, const TrajectoryMeta& meta) {
  out << "latnav-trajectories 1\ncount " << trajs.size() << "\n";
  for (const auto& t : trajs) write_trajectory(out, t, meta);
}

std::vector<Trajectory> read_trajectory_set(std::istream& in) {
  std::string magic, key;
  std::size_t count = 0;
  std::getline(in, magic);
  if (magic != "latnav-trajectories 1") throw std::runtime_error("read_trajectory_set: bad header");
  if (!(in >> key >> count) || key != "count") throw std::runtime_error("read_trajectory_set: missing count");
  std::vector<Trajectory> out;
  for (std::size_t i = 0; i < count; ++i) {
    in >> std::ws;
    out.push_back(read_trajectory(in));
  }
  return out;
}

// --- stage machinery -------------------------------------------------------------------

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void make_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

fs::path tmp_of(const fs::path& p) { return fs::path(p).concat(".tmp"); }

void commit(const fs::path& tmp, const fs::path& final) { fs::rename(tmp, final); }

void write_text_atomic(const fs::path& path, const std::string& text) {
  make_parent(path);
  {
    std::ofstream out(tmp_of(path), std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  commit(tmp_of(path), path);
}

template <typename Writer>
void write_stream_atomic(const fs::path& path, Writer&& writer) {
  std::ostringstream out;
  writer(out);
  write_text_atomic(path, out.str());
}

void write_images_atomic(const fs::path& stem, const LabeledDataset& data) {
  make_parent(stem);
  const fs::path tmp = tmp_of(stem);
  write_images(tmp, data);
  commit(fs::path(tmp).concat(".bin"), fs::path(stem).concat(".bin"));
  commit(fs::path(tmp).concat(".hdr"), fs::path(stem).concat(".hdr"));
}

std::string json_text(const json& j) { return j.dump(2) + "\n"; }

void log(const std::string& line) { std::cerr << "[pipeline] " << line << "\n"; }

class StageRun {
 public:
  StageRun(const PipelineConfig& config, std::string name, std::string hash, std::vector<Stage> upstream)
      : config_(config), name_(std::move(name)), hash_(std::move(hash)), upstream_(std::move(upstream)) {}

  fs::path path(const fs::path& rel) const { return config_.out / rel; }
  fs::path manifest_path() const { return config_.out / layout::kManifests / (name_ + ".json"); }

  void check_upstream() {
    for (Stage u : upstream_) {
      const std::string name(stage_name(u));
      const fs::path mp = config_.out / layout::kManifests / (name + ".json");
      const std::string hint = "run `plan-cli " + name + " --config <path>` with the same config and seed first";
      if (!fs::exists(mp)) {
        throw PipelineError("missing_upstream", "stage " + name_ + " needs " + name + ", whose manifest " + mp.string() + " is missing", hint);
      }
      const Manifest m = parse_manifest(read_file(mp));
      const std::string expected = stage_hash(config_, u);
      if (m.config_hash != expected) {
        throw PipelineError("config_hash_mismatch",
                            "upstream " + name + " was built with config hash " + m.config_hash + " but this config gives " + expected,
                            "rerun `plan-cli " + name + "` and the stages after it with this config and seed");
      }
      verify(m, name);
      upstream_hashes_[name] = m.config_hash;
    }
  }

  // True when a matching manifest exists and every recorded artifact is intact.
  bool up_to_date() const {
    if (!fs::exists(manifest_path())) return false;
    try {
      const Manifest m = parse_manifest(read_file(manifest_path()));
      if (m.config_hash != hash_ || m.seed != config_.seed || m.version != kStageVersion) return false;
      verify(m, name_);
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }

  void record(const fs::path& rel) { artifacts_.push_back(rel); }

  StageOutcome finish() {
    Manifest m;
    m.stage = name_;
    m.version = kStageVersion;
    m.seed = config_.seed;
    m.config_hash = hash_;
    m.upstream = upstream_hashes_;
    for (const auto& rel : artifacts_) {
      const std::string bytes = read_file(path(rel));
      m.artifacts.push_back({rel.generic_string(), fnv1a_hex(bytes), bytes.size()});
    }
    write_text_atomic(manifest_path(), manifest_json(m));
    return {name_, false, m, manifest_path()};
  }

  StageOutcome skipped() const {
    return {name_, true, parse_manifest(read_file(manifest_path())), manifest_path()};
  }

  const std::string& hash() const { return hash_; }

 private:
  void verify(const Manifest& m, const std::string& name) const {
    for (const auto& a : m.artifacts) {
      const fs::path p = config_.out / a.path;
      if (!fs::exists(p)) {
        throw PipelineError("missing_upstream", "artifact " + p.string() + " of stage " + name + " is missing",
                            "rerun `plan-cli " + name + "`");
      }
      if (fnv1a_hex(read_file(p)) != a.hash) {
        throw PipelineError("artifact_modified", "artifact " + p.string() + " of stage " + name + " no longer matches its manifest",
                            "rerun `plan-cli " + name + "`");
      }
    }
  }

  const PipelineConfig& config_;
  std::string name_;
  std::string hash_;
  std::vector<Stage> upstream_;
  std::map<std::string, std::string> upstream_hashes_;
  std::vector<fs::path> artifacts_;
};

// --- private projection file ----------------------------------------------------------

void write_projections(std::ostream& out, const LabeledDataset& data, const std::vector<Projection>& projections) {
  out << "latnav-projections 1\ncount " << projections.size() << "\n";
  auto values = [&](const LatentPoint& w) {
    for (double v : w.values) out << ' ' << format_double(v);
  };
  for (std::size_t i = 0; i < projections.size(); ++i) {
    const Projection& p = projections[i];
    const ToyImage& img = data.images[data.train[i]];
    out << "image " << data.train[i] << ' ' << img.identity << ' ' << img.label << ' ' << p.best_restart << ' '
        << format_double(p.error) << ' ' << p.restart_latents.size() << "\n";
    for (std::size_t r = 0; r < p.restart_latents.size(); ++r) {
      out << "restart " << format_double(p.restart_errors[r]);
      values(p.restart_latents[r]);
      out << "\n";
    }
  }
}

std::vector<Projection> read_projections(std::istream& in, const LabeledDataset& data, std::size_t latent_dim) {
  std::string line, key;
  std::getline(in, line);
  if (line != "latnav-projections 1") throw std::runtime_error("projections: bad header");
  std::size_t count = 0;
  if (!(in >> key >> count) || key != "count" || count != data.train.size()) {
    throw std::runtime_error("projections: count does not match the training split");
  }
  auto number = [&](const std::string& s) {
    if (s == "inf") return std::numeric_limits<double>::infinity();
    return std::stod(s);
  };
  std::vector<Projection> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t index = 0, restarts = 0;
    int identity = 0, label = 0;
    std::string err;
    if (!(in >> key >> index >> identity >> label >> out[i].best_restart >> err >> restarts) || key != "image" ||
        index != data.train[i]) {
      throw std::runtime_error("projections: malformed image record " + std::to_string(i));
    }
    out[i].error = number(err);
    for (std::size_t r = 0; r < restarts; ++r) {
      std::string e;
      if (!(in >> key >> e) || key != "restart") throw std::runtime_error("projections: malformed restart record");
      out[i].restart_errors.push_back(number(e));
      LatentPoint w;
      w.values.resize(latent_dim);
      for (double& v : w.values) {
        std::string s;
        if (!(in >> s)) throw std::runtime_error("projections: truncated latent");
        v = std::stod(s);
      }
      out[i].restart_latents.push_back(std::move(w));
    }
    if (out[i].best_restart >= restarts) throw std::runtime_error("projections: best restart out of range");
    out[i].latent = out[i].restart_latents[out[i].best_restart];
  }
  return out;
}

std::vector<std::size_t> centroid_sets(const PipelineConfig& c) {
  std::set<std::size_t> ks(c.utility_k.begin(), c.utility_k.end());
  ks.insert(c.endpoint_k);
  return {ks.begin(), ks.end()};
}

AnonymizedSet load_centroids(const PipelineConfig& c, std::size_t k) {
  std::ifstream in(c.out / layout::export_centroids(k));
  if (!in) throw std::runtime_error("cannot read " + (c.out / layout::export_centroids(k)).string());
  return read_anonymized(in);
}

// Keeps at most `cap` pairs, taking one class at a time in turn so every class
// stays represented.
std::vector<EndpointPair> cap_pairs(const std::vector<EndpointPair>& pairs, std::size_t cap) {
  if (cap == 0 || pairs.size() <= cap) return pairs;
  std::map<int, std::vector<const EndpointPair*>> by_class;
  for (const auto& p : pairs) by_class[p.label].push_back(&p);
  std::vector<EndpointPair> out;
  for (std::size_t round = 0; out.size() < cap; ++round) {
    for (auto& [label, list] : by_class) {
      if (round < list.size() && out.size() < cap) out.push_back(*list[round]);
    }
  }
  return out;
}

// --- stages -----------------------------------------------------------------------------

LabeledDataset load_dataset(const PipelineConfig& c) { return read_images(c.out / layout::kDataset); }

void stage_synth_data(const PipelineConfig& c, StageRun& run) {
  const LabeledDataset data = generate_identicon_dataset(c.identicon, c.n_id, c.n_classes, mix_seed(c.seed, 0x11));
  write_images_atomic(run.path(layout::kDataset), data);
  run.record(fs::path(layout::kDataset).concat(".bin"));
  run.record(fs::path(layout::kDataset).concat(".hdr"));
  log("synth-data: " + std::to_string(data.images.size()) + " images, split " + std::to_string(data.train.size()) + "/" +
      std::to_string(data.val.size()) + "/" + std::to_string(data.test.size()));
}

void stage_train_gan(const PipelineConfig& c, StageRun& run) {
  const LabeledDataset data = load_dataset(c);
  GanConfig gc = c.gan;
  gc.seed = mix_seed(c.seed, 0x12);
  const GanResult gan = train_tiny_gan(data, data.train, gc);
  const fs::path ckpt = run.path(layout::kGenerator);
  make_parent(ckpt);
  save_generator(tmp_of(ckpt), gan.generator, gc.seed, run.hash());
  commit(tmp_of(ckpt), ckpt);
  run.record(layout::kGenerator);
  write_stream_atomic(run.path(layout::kGanLog), [&](std::ostream& out) {
    out << "step,d_loss,g_loss\n";
    for (const auto& e : gan.log) out << e.step << ',' << format_double(e.d_loss) << ',' << format_double(e.g_loss) << '\n';
    out << "# final_discriminator_accuracy " << format_double(gan.final_discriminator_accuracy) << '\n';
  });
  run.record(layout::kGanLog);
  const bool ok = gan.final_discriminator_accuracy < gc.discriminator_threshold;
  log("train-gan: final discriminator accuracy " + short_double(gan.final_discriminator_accuracy) + (ok ? " (pass" : " (FAIL") +
      ", threshold " + short_double(gc.discriminator_threshold) + ")");
}

void stage_project(const PipelineConfig& c, StageRun& run) {
  const LabeledDataset data = load_dataset(c);
  const Generator g = load_generator(c.out / layout::kGenerator);
  std::vector<ToyImage> images;
  for (std::size_t i : data.train) images.push_back(data.images[i]);
  ProjectionConfig pc = c.projection;
  pc.seed = mix_seed(c.seed, 0x13);
  const std::vector<Projection> projections = project_images(images, g, pc);
  write_stream_atomic(run.path(layout::kProjections), [&](std::ostream& out) { write_projections(out, data, projections); });
  run.record(layout::kProjections);
  double mean = 0.0;
  for (const auto& p : projections) mean += p.error;
  log("project: " + std::to_string(projections.size()) + " images, mean error " +
      short_double(mean / static_cast<double>(std::max<std::size_t>(1, projections.size()))));
}

std::vector<Projection> load_projections(const PipelineConfig& c, const LabeledDataset& data, std::size_t latent_dim) {
  std::ifstream in(c.out / layout::kProjections);
  if (!in) throw std::runtime_error("cannot read " + (c.out / layout::kProjections).string());
  return read_projections(in, data, latent_dim);
}

void stage_train_classifiers(const PipelineConfig& c, StageRun& run) {
  const LabeledDataset data = load_dataset(c);
  const Generator g = load_generator(c.out / layout::kGenerator);
  const std::vector<Projection> projections = load_projections(c, data, g.latent_dim);

  ClassifierConfig lc = c.label_classifier;
  lc.seed = mix_seed(c.seed, 0x14);
  const TrainedClassifier phi_class = train_classifier(data, ClassifierTarget::label, lc);
  const double test_acc = phi_class.model.accuracy(make_samples(data, data.test, LabelKind::label));

  AugmentationConfig aug;
  aug.per_identity = c.per_identity;
  aug.projection = c.projection;
  const LabeledDataset augmented = augment_identity_with_projections(data, g, aug, projections);
  ClassifierConfig ic = c.identity_classifier;
  ic.seed = mix_seed(c.seed, 0x15);
  const TrainedClassifier phi_id = train_classifier(augmented, ClassifierTarget::identity, ic);

  auto save = [&](const fs::path& rel, const TrainedClassifier& t, std::uint64_t seed, const std::string& target) {
    const fs::path p = run.path(rel);
    make_parent(p);
    save_classifier(tmp_of(p), t.model, seed, run.hash(), {{"target", target}});
    commit(tmp_of(p), p);
    run.record(rel);
  };
  save(layout::kPhiClass, phi_class, lc.seed, "label");
  save(layout::kPhiId, phi_id, ic.seed, "identity");

  json report;
  report["phi_class"] = {{"train_accuracy", phi_class.train_accuracy},
                         {"val_accuracy", phi_class.val_accuracy},
                         {"test_accuracy", test_acc},
                         {"selected_step", phi_class.selected_step},
                         {"seed", lc.seed}};
  report["phi_id"] = {{"train_accuracy", phi_id.train_accuracy},
                      {"val_accuracy", phi_id.val_accuracy},
                      {"selected_step", phi_id.selected_step},
                      {"identities", phi_id.output_identity.size()},
                      {"projection_images", augmented.projections.size()},
                      {"seed", ic.seed}};
  report["config_hash"] = run.hash();
  write_text_atomic(run.path(layout::kClassifierReport), json_text(report));
  run.record(layout::kClassifierReport);
  log("train-classifiers: phi_class val " + short_double(phi_class.val_accuracy) + ", phi_id val " +
      short_double(phi_id.val_accuracy) + " over " + std::to_string(phi_id.output_identity.size()) + " identities");
}

void stage_ksame(const PipelineConfig& c, StageRun& run) {
  const LabeledDataset data = load_dataset(c);
  const std::size_t d = load_generator(c.out / layout::kGenerator).latent_dim;
  const std::vector<Projection> projections = load_projections(c, data, d);
  std::vector<ProjectedLatent> latents;
  for (std::size_t i = 0; i < projections.size(); ++i) {
    const ToyImage& img = data.images[data.train[i]];
    latents.push_back({projections[i].latent, img.identity, img.label});
  }
  for (std::size_t k : centroid_sets(c)) {
    const AnonymizedSet set = ksame_centroids(latents, k, mix_seed(c.seed, 0x16, k));
    write_stream_atomic(run.path(layout::private_centroids(k)), [&](std::ostream& out) { write_anonymized(out, set, true); });
    write_stream_atomic(run.path(layout::export_centroids(k)), [&](std::ostream& out) { write_anonymized(out, set, false); });
    run.record(layout::private_centroids(k));
    run.record(layout::export_centroids(k));
    log("ksame: k=" + std::to_string(k) + " -> " + std::to_string(set.centroids.size()) + " centroids");
  }
}

void stage_plan(const PipelineConfig& c, StageRun& run) {
  ModelBundle bundle{load_generator(c.out / layout::kGenerator), load_classifier(c.out / layout::kPhiId),
                     load_classifier(c.out / layout::kPhiClass), std::nullopt};
  const PlanModels models = plan_models(bundle);
  for (std::size_t k : centroid_sets(c)) {
    const AnonymizedSet set = load_centroids(c, k);
    const std::size_t cap = k == c.endpoint_k ? c.max_pairs : c.utility_max_pairs;
    const auto pairs = cap_pairs(sample_pairs(set, mix_seed(c.seed, 0x17, k)).pairs, cap);
    std::vector<Trajectory> linear;
    for (const auto& p : pairs) linear.push_back(init_linear(p.a, p.b, c.length, p.label));
    const auto optimized = optimize_trajectories(linear, models, c.weights, c.steps, c.lr, c.workers);
    std::vector<Trajectory> planned;
    for (const auto& o : optimized) planned.push_back(o.trajectory);

    TrajectoryMeta linear_meta{c.weights, 0, c.lr, c.seed};
    TrajectoryMeta plan_meta{c.weights, c.steps, c.lr, c.seed};
    write_stream_atomic(run.path(layout::trajectories(k, false)),
                        [&](std::ostream& out) { write_trajectory_set(out, linear, linear_meta); });
    write_stream_atomic(run.path(layout::trajectories(k, true)),
                        [&](std::ostream& out) { write_trajectory_set(out, planned, plan_meta); });
    write_stream_atomic(run.path(layout::plan_trace(k)), [&](std::ostream& out) {
      out << "pair,step,dist,identity,class,total,identity_confidence\n";
      for (std::size_t i = 0; i < optimized.size(); ++i) {
        const auto& steps = optimized[i].trace.steps;
        for (std::size_t s = 0; s < steps.size(); ++s) {
          const LossTerms& t = steps[s];
          out << i << ',' << s << ',' << format_double(t.dist) << ',' << format_double(t.identity) << ','
              << format_double(t.label) << ',' << format_double(t.total) << ',' << format_double(t.identity_confidence)
              << '\n';
        }
      }
    });
    run.record(layout::trajectories(k, false));
    run.record(layout::trajectories(k, true));
    run.record(layout::plan_trace(k));
    log("plan: k=" + std::to_string(k) + ", " + std::to_string(pairs.size()) + " pairs optimised");
  }
}

std::vector<Trajectory> load_trajectories(const PipelineConfig& c, std::size_t k, bool optimized) {
  const fs::path p = c.out / layout::trajectories(k, optimized);
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return read_trajectory_set(in);
}

LabeledDataset synthetic_dataset(const Generator& g, std::vector<ToyImage> images) {
  LabeledDataset data;
  data.height = g.height;
  data.width = g.width;
  data.n_classes = g.n_classes;
  data.images = std::move(images);
  return data;
}

void stage_gen_dataset(const PipelineConfig& c, StageRun& run) {
  const Generator g = load_generator(c.out / layout::kGenerator);
  auto emit = [&](const std::string& name, std::vector<ToyImage> images, std::size_t expected) {
    if (images.size() != expected) {
      throw std::logic_error("gen-dataset: " + name + " produced " + std::to_string(images.size()) + " images, expected " +
                             std::to_string(expected));
    }
    const fs::path stem = layout::export_images(name);
    write_images_atomic(run.path(stem), synthetic_dataset(g, images));
    write_pgm_strip(tmp_of(run.path(stem.parent_path() / "preview.pgm")), images, std::min<std::size_t>(images.size(), c.length));
    commit(tmp_of(run.path(stem.parent_path() / "preview.pgm")), run.path(stem.parent_path() / "preview.pgm"));
    run.record(fs::path(stem).concat(".bin"));
    run.record(fs::path(stem).concat(".hdr"));
    run.record(stem.parent_path() / "preview.pgm");
    log("gen-dataset: " + name + " -> " + std::to_string(images.size()) + " images");
  };
  auto from_trajectories = [&](const std::vector<Trajectory>& trajs) {
    std::vector<ToyImage> out;
    for (const auto& t : trajs) {
      auto imgs = generate_from_trajectory(t, g);
      out.insert(out.end(), imgs.begin(), imgs.end());
    }
    return out;
  };
  for (bool optimized : {false, true}) {
    const auto trajs = load_trajectories(c, c.endpoint_k, optimized);
    // T images per pair: T * N / 2 for N paired centroids
    emit(optimized ? "plan" : "linear", from_trajectories(trajs), c.length * (2 * trajs.size()) / 2);
  }
  for (std::size_t k : c.utility_k) {
    const AnonymizedSet set = load_centroids(c, k);
    std::vector<ToyImage> centroids;
    for (const auto& ct : set.centroids) {
      ToyImage img = g.generate_image(ct.latent, ct.label);
      img.identity = -1;
      img.origin = Origin::synthetic;
      centroids.push_back(std::move(img));
    }
    emit("ksame_" + layout::centroid_set_name(k), centroids, set.centroids.size());
    const auto trajs = load_trajectories(c, k, true);
    emit("ksame-plan_" + layout::centroid_set_name(k), from_trajectories(trajs), c.length * (2 * trajs.size()) / 2);
  }
}

json mia_json(const MiaReport& r) {
  return {{"accuracy", r.accuracy},           {"val_accuracy", r.val_accuracy},   {"per_side", r.per_side},
          {"train_per_side", r.train_per_side}, {"val_per_side", r.val_per_side}, {"eval_per_side", r.eval_per_side},
          {"seed", r.seed}};
}

double max_softmax_mean(const Tensor& logits, std::size_t begin, std::size_t end) {
  const Tensor p = ad::softmax(logits);
  double sum = 0.0;
  for (std::size_t r = begin; r < end; ++r) {
    const auto row = p.row(r);
    sum += *std::max_element(row.begin(), row.end());
  }
  return sum / static_cast<double>(end - begin);
}

void stage_eval_arm(const PipelineConfig& c, Arm arm, StageRun& run) {
  const LabeledDataset data = load_dataset(c);
  const Classifier phi_class = load_classifier(c.out / layout::kPhiClass);
  const Classifier phi_id = load_classifier(c.out / layout::kPhiId);
  const Samples real_train = make_samples(data, data.train, LabelKind::label);
  const Samples real_val = make_samples(data, data.val, LabelKind::label);
  const Samples real_test = make_samples(data, data.test, LabelKind::label);
  const Tensor real_features = phi_class.features(real_train.inputs);

  for (const std::string& set : arm_sets(c, arm)) {
    Samples train;
    if (arm == Arm::real) {
      train = real_train;
    } else {
      const LabeledDataset syn = read_images(c.out / layout::export_images(set));
      train = make_samples(syn.images, LabelKind::label);
    }
    const std::uint64_t run_seed = mix_seed(c.seed, 0x18, std::stoull(fnv1a_hex(set), nullptr, 16));

    DownstreamConfig dc = c.downstream;
    dc.seed = run_seed;
    dc.require_synthetic = arm != Arm::real;
    dc.workers = c.workers;
    const DownstreamReport down = downstream_eval(train, real_val, real_test, data.n_classes, dc);

    json mia_runs = json::array();
    double mia_sum = 0.0;
    for (std::size_t r = 0; r < down.models.size(); ++r) {
      MiaConfig mc = c.mia;
      mc.seed = mix_seed(run_seed, 0x19, r);
      const MiaReport mia = mia_attack(down.models[r], real_train, real_test, mc);
      mia_runs.push_back(mia_json(mia));
      mia_sum += mia.accuracy;
    }
    const double mia_mean = mia_sum / static_cast<double>(down.models.size());

    // The real arm is scored on the held-out test split against the training reference.
    const Samples& scored = arm == Arm::real ? real_test : train;
    const Tensor scored_features = phi_class.features(scored.inputs);
    std::optional<FrechetResult> fid;
    if (scored_features.rows() > scored_features.cols()) {
      fid = frechet_distance_ex(scored_features, real_features);
      if (fid->regularized) log("eval: " + set + ": singular covariance, added 1e-6 * I before the Frechet distance");
    } else {
      log("eval: " + set + ": " + std::to_string(scored_features.rows()) + " images are too few for a Frechet distance over " +
          std::to_string(scored_features.cols()) + " features, reported as null");
    }
    const MinDistances mml = min_feature_distances(scored_features, real_features);
    const double consistency = phi_class.accuracy(scored);
    const Tensor id_logits = phi_id.logits(scored.inputs);

    json report;
    report["arm"] = std::string(arm_name(arm));
    report["set"] = set;
    report["seed"] = c.seed;
    report["config_hash"] = run.hash();
    report["n_train"] = train.size();
    report["n_scored"] = scored.size();
    report["downstream"] = {{"runs", down.accuracies.size()},
                            {"accuracies", down.accuracies},
                            {"mean", down.mean},
                            {"std", down.std},
                            {"steps", down.steps},
                            {"seed", run_seed}};
    report["mia"] = {{"accuracy", mia_mean}, {"runs", mia_runs}};
    report["frechet"] = fid ? json{{"distance", fid->distance}, {"regularized", fid->regularized}}
                            : json{{"distance", nullptr}, {"regularized", false}};
    report["mmL"] = mml.mean;
    report["class_consistency"] = consistency;
    report["identity_confidence"] = max_softmax_mean(id_logits, 0, scored.size());

    const fs::path dist_csv = fs::path("reports") / (set + "_distances.csv");
    write_stream_atomic(run.path(dist_csv), [&](std::ostream& out) { write_distances_csv(out, mml); });
    run.record(dist_csv);

    const bool trajectory_arm = arm == Arm::linear || arm == Arm::plan || arm == Arm::ksame_plan;
    if (trajectory_arm) {
      // distance to the nearest real image and identity confidence per trajectory step
      const std::size_t T = c.length;
      const std::size_t n_traj = scored.size() / T;
      const Tensor probs = ad::softmax(id_logits);
      const fs::path step_csv = fs::path("reports") / (set + "_steps.csv");
      write_stream_atomic(run.path(step_csv), [&](std::ostream& out) {
        out << "step,mean_min_distance,mean_identity_confidence\n";
        for (std::size_t s = 0; s < T; ++s) {
          double dist = 0.0, conf = 0.0;
          for (std::size_t t = 0; t < n_traj; ++t) {
            dist += mml.per_sample[t * T + s];
            const auto row = probs.row(t * T + s);
            conf += *std::max_element(row.begin(), row.end());
          }
          out << s << ',' << format_double(dist / static_cast<double>(n_traj)) << ','
              << format_double(conf / static_cast<double>(n_traj)) << '\n';
        }
      });
      run.record(step_csv);
      report["trajectories"] = n_traj;
    }
    write_text_atomic(run.path(layout::report(set)), json_text(report));
    run.record(layout::report(set));
    log("eval: " + set + ": acc " + short_double(down.mean) + " +/- " + short_double(down.std) + ", MIA " +
        short_double(mia_mean) + ", FID " + (fid ? short_double(fid->distance) : std::string("n/a")) + ", mmL " + short_double(mml.mean));
  }
}

StageOutcome execute(const PipelineConfig& config, const std::string& name, const std::string& hash,
                     const std::vector<Stage>& upstream, const std::function<void(StageRun&)>& body) {
  StageRun run(config, name, hash, upstream);
  run.check_upstream();
  if (run.up_to_date()) {
    log(name + ": up to date, skipped");
    return run.skipped();
  }
  const auto start = std::chrono::steady_clock::now();
  body(run);
  log(name + ": done in " + short_double(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()) + " s");
  return run.finish();
}

}  // namespace

std::vector<StageOutcome> run_stage(Stage stage, const PipelineConfig& config, std::optional<Arm> arm) {
  validate(config);
  fs::create_directories(config.out);
  if (stage == Stage::eval) {
    std::vector<StageOutcome> out;
    const std::vector<Arm> arms = arm ? std::vector<Arm>{*arm} : std::vector<Arm>(std::begin(kAllArms), std::end(kAllArms));
    for (Arm a : arms) {
      out.push_back(execute(config, eval_stage_name(a), eval_hash(config, a), eval_upstream(a),
                            [&](StageRun& run) { stage_eval_arm(config, a, run); }));
    }
    return out;
  }
  std::function<void(StageRun&)> body;
  switch (stage) {
    case Stage::synth_data: body = [&](StageRun& r) { stage_synth_data(config, r); }; break;
    case Stage::train_gan: body = [&](StageRun& r) { stage_train_gan(config, r); }; break;
    case Stage::project: body = [&](StageRun& r) { stage_project(config, r); }; break;
    case Stage::train_classifiers: body = [&](StageRun& r) { stage_train_classifiers(config, r); }; break;
    case Stage::ksame: body = [&](StageRun& r) { stage_ksame(config, r); }; break;
    case Stage::plan: body = [&](StageRun& r) { stage_plan(config, r); }; break;
    case Stage::gen_dataset: body = [&](StageRun& r) { stage_gen_dataset(config, r); }; break;
    case Stage::eval: break;
  }
  return {execute(config, std::string(stage_name(stage)), stage_hash(config, stage), upstream_of(stage), body)};
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config) {
  std::vector<StageOutcome> out;
  for (Stage s : kAllStages) {
    auto r = run_stage(s, config);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace latnav
