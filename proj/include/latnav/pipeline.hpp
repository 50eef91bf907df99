#pragma once

// Staged, resumable pipeline: every stage reads its upstream artifacts,
// writes its own atomically, and records a manifest with the stage's config
// hash so reruns with an unchanged config are no-ops.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latnav/dataset.hpp"
#include "latnav/eval.hpp"
#include "latnav/models.hpp"
#include "latnav/plan.hpp"

namespace latnav {

enum class Stage { synth_data, train_gan, project, train_classifiers, ksame, plan, gen_dataset, eval };
enum class Arm { real, linear, plan, ksame, ksame_plan };

inline constexpr Stage kAllStages[] = {Stage::synth_data, Stage::train_gan, Stage::project, Stage::train_classifiers,
                                       Stage::ksame,      Stage::plan,      Stage::gen_dataset, Stage::eval};
inline constexpr Arm kAllArms[] = {Arm::real, Arm::linear, Arm::plan, Arm::ksame, Arm::ksame_plan};

std::string_view stage_name(Stage s) noexcept;
Stage parse_stage(const std::string& name);
std::string_view arm_name(Arm a) noexcept;
Arm parse_arm(const std::string& name);

struct PipelineConfig {
  // [data]
  std::size_t n_id = 2000;
  std::size_t n_classes = 2;
  // Weaker, noisier class signal than the bare identicon defaults so that a
  // classifier trained on real images overfits measurably.
  IdenticonSpec identicon{16, 16, 4, 0.5, -0.2, 0.25, 0.3, 3.0, 0.1, {}};
  // [gan]
  GanConfig gan;
  // [project]
  ProjectionConfig projection{5, 200, 0.05, 0, false};
  // [classifier] phi_class, also the feature extractor for FID and mmL
  ClassifierConfig label_classifier{{64}, 2000, 32, 1e-3, 100, 0.0, 0.1, 0};
  // [identity] phi_id, trained with projection augmentation
  ClassifierConfig identity_classifier{{64}, 8000, 32, 1e-3, 500, 0.0, 0.1, 0};
  std::size_t per_identity = 5;
  // [ksame]
  std::size_t endpoint_k = 2;                  // centroids paired for the linear and plan arms
  std::vector<std::size_t> utility_k{5, 10};   // centroid sets for the ksame and ksame-plan arms
  // [plan]
  std::size_t length = kDefaultLength;
  std::size_t steps = kDefaultSteps;
  double lr = kDefaultLr;
  LossWeights weights;
  std::size_t max_pairs = 40;         // endpoint set, 0 keeps every pair
  std::size_t utility_max_pairs = 0;  // each utility set, 0 keeps every pair
  // [eval]
  DownstreamConfig downstream;
  MiaConfig mia;
  // [run]
  std::uint64_t seed = 0;
  std::filesystem::path out = "plan_out";
  std::size_t workers = 1;
};

// INI-style file of `key = value` lines under [section] headers. Unknown
// sections or keys are rejected.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& text);

// Canonical `key = value` text of every setting that affects results (the
// [run] out and workers entries are excluded).
std::string config_text(const PipelineConfig& config);

// Applies PLAN_OUT and PLAN_WORKERS when present.
void apply_environment(PipelineConfig& config);

std::string fnv1a_hex(std::string_view bytes);

// Hash of a stage's own settings, the run seed, the stage version and the
// hashes of every stage it depends on.
std::string stage_hash(const PipelineConfig& config, Stage stage);
std::vector<Stage> upstream_of(Stage stage);

class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string kind, const std::string& what, std::string hint = {})
      : std::runtime_error(what), kind_(std::move(kind)), hint_(std::move(hint)) {}
  const std::string& kind() const noexcept { return kind_; }
  const std::string& hint() const noexcept { return hint_; }

 private:
  std::string kind_;
  std::string hint_;
};

struct ArtifactRecord {
  std::string path;  // relative to the output directory
  std::string hash;
  std::uintmax_t bytes = 0;
};

struct Manifest {
  std::string stage;
  int version = 1;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::map<std::string, std::string> upstream;
  std::vector<ArtifactRecord> artifacts;
};

std::string manifest_json(const Manifest& m);
Manifest parse_manifest(const std::string& json);

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // manifest already matched
  Manifest manifest;
  std::filesystem::path manifest_path;
};

// Runs one stage (for eval, the given arm or every arm). Throws
// PipelineError on missing upstream artifacts or hash mismatches.
std::vector<StageOutcome> run_stage(Stage stage, const PipelineConfig& config, std::optional<Arm> arm = std::nullopt);

// Every stage in order.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config);

// --- artifact layout, relative to config.out ---------------------------------------
namespace layout {
inline const std::filesystem::path kManifests = "manifests";
inline const std::filesystem::path kDataset = "data/dataset";
inline const std::filesystem::path kGenerator = "models/generator.ckpt";
inline const std::filesystem::path kGanLog = "models/gan_log.csv";
inline const std::filesystem::path kProjections = "private/projections.txt";
inline const std::filesystem::path kPhiClass = "models/phi_class.ckpt";
inline const std::filesystem::path kPhiId = "models/phi_id.ckpt";
inline const std::filesystem::path kClassifierReport = "models/classifiers.json";
inline const std::filesystem::path kExport = "export";

std::string centroid_set_name(std::size_t k);  // "k2", "k10"
std::filesystem::path private_centroids(std::size_t k);
std::filesystem::path export_centroids(std::size_t k);
std::filesystem::path trajectories(std::size_t k, bool optimized);
std::filesystem::path plan_trace(std::size_t k);
std::filesystem::path export_images(const std::string& arm_set);  // stem
std::filesystem::path report(const std::string& arm_set);
}  // namespace layout

// Reports for one evaluated arm and centroid set ("plan", "ksame-plan_k10").
std::vector<std::string> arm_sets(const PipelineConfig& config, Arm arm);

// Many trajectories in one text file: "latnav-trajectories 1", "count <n>",
// then n trajectory blocks.
void write_trajectory_set(std::ostream& out, const std::vector<Trajectory>& trajs, const TrajectoryMeta& meta);
std::vector<Trajectory> read_trajectory_set(std::istream& in);

}  // namespace latnav
