#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "latnav/anonymize.hpp"
#include "latnav/pipeline.hpp"

using namespace latnav;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(
[data]
n_id = 200
[gan]
steps = 200
[project]
restarts = 2
steps = 20
[classifier]
steps = 200
[identity]
steps = 300
per_identity = 2
[ksame]
utility_k = 5
[plan]
length = 8
steps = 5
max_pairs = 6
[eval]
runs = 2
epochs = 0
steps = 200
mia_steps = 100
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  }
  return out;
}

PipelineConfig tiny(const fs::path& out) {
  PipelineConfig c = parse_config(kTinyConfig);
  c.out = out;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("latnav_pipeline_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const PipelineError& e) {
    return e.kind();
  }
  return "none";
}

}  // namespace

TEST(Config, DefaultsMatchTheMethodSettings) {
  const PipelineConfig c;
  EXPECT_EQ(c.length, 50u);
  EXPECT_EQ(c.steps, 100u);
  EXPECT_EQ(c.lr, 0.1);
  EXPECT_EQ(c.weights.identity, 0.1);
  EXPECT_EQ(c.weights.label, 1.0);
  EXPECT_EQ(c.identicon.splits.train, 0.7);
  EXPECT_EQ(c.identicon.splits.val, 0.1);
  EXPECT_EQ(c.identicon.splits.test, 0.2);
  EXPECT_EQ(c.downstream.runs, 5u);
  EXPECT_EQ(c.downstream.epochs, 200u);
  EXPECT_EQ(c.projection.restarts, 5u);
  EXPECT_EQ(c.per_identity, 5u);
}

TEST(Config, ShippedDefaultFileEqualsBuiltInDefaults) {
  const PipelineConfig file = load_config(fs::path(LATNAV_SOURCE_DIR) / "configs/default.ini");
  EXPECT_EQ(config_text(file), config_text(PipelineConfig{}));
}

TEST(Config, CanonicalTextRoundTrips) {
  PipelineConfig c = tiny("x");
  c.seed = 42;
  const PipelineConfig back = parse_config(config_text(c));
  EXPECT_EQ(config_text(back), config_text(c));
  for (Stage s : kAllStages) EXPECT_EQ(stage_hash(back, s), stage_hash(c, s));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_EQ(kind_of([] { parse_config("[plan]\nlenght = 5\n"); }), "invalid_config");
  EXPECT_EQ(kind_of([] { parse_config("[nope]\nx = 1\n"); }), "invalid_config");
  EXPECT_EQ(kind_of([] { parse_config("[plan]\nlength = five\n"); }), "invalid_config");
  EXPECT_EQ(kind_of([] { parse_config("[plan]\nlr = -1\n"); }), "invalid_config");
  EXPECT_EQ(kind_of([] { parse_config("[data]\ntrain_fraction = 0.9\n"); }), "invalid_config");
  EXPECT_EQ(kind_of([] { parse_config("[ksame]\nendpoint_k = 1\n"); }), "invalid_config");
  EXPECT_EQ(kind_of([] { load_config("/nonexistent/config.ini"); }), "invalid_config");
}

TEST(Config, EnvironmentOverridesOutputAndWorkers) {
  PipelineConfig c = tiny("from_file");
  ::setenv("PLAN_OUT", "/tmp/from_env", 1);
  ::setenv("PLAN_WORKERS", "3", 1);
  apply_environment(c);
  ::unsetenv("PLAN_OUT");
  ::unsetenv("PLAN_WORKERS");
  EXPECT_EQ(c.out, fs::path("/tmp/from_env"));
  EXPECT_EQ(c.workers, 3u);
  ::setenv("PLAN_WORKERS", "0", 1);
  EXPECT_EQ(kind_of([&] { apply_environment(c); }), "invalid_config");
  ::unsetenv("PLAN_WORKERS");
}

TEST(Hashing, FnvMatchesReferenceValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Hashing, StageHashesFollowTheDependencyGraph) {
  const PipelineConfig base = tiny("x");
  PipelineConfig eval_changed = base;
  eval_changed.downstream.runs = 3;
  EXPECT_EQ(stage_hash(base, Stage::train_gan), stage_hash(eval_changed, Stage::train_gan));
  EXPECT_EQ(stage_hash(base, Stage::gen_dataset), stage_hash(eval_changed, Stage::gen_dataset));
  EXPECT_NE(stage_hash(base, Stage::eval), stage_hash(eval_changed, Stage::eval));

  PipelineConfig data_changed = base;
  data_changed.identicon.noise = 0.2;
  for (Stage s : kAllStages) EXPECT_NE(stage_hash(base, s), stage_hash(data_changed, s)) << stage_name(s);

  PipelineConfig workers_changed = base;
  workers_changed.workers = 4;
  workers_changed.out = "elsewhere";
  for (Stage s : kAllStages) EXPECT_EQ(stage_hash(base, s), stage_hash(workers_changed, s));

  PipelineConfig seed_changed = base;
  seed_changed.seed = 1;
  EXPECT_NE(stage_hash(base, Stage::synth_data), stage_hash(seed_changed, Stage::synth_data));
}

TEST(Manifest, JsonRoundTrip) {
  Manifest m{"plan", 1, 7, "00ff", {{"ksame", "abcd"}}, {{"plan/k2/plan.trajs", "1234", 99}}};
  const Manifest back = parse_manifest(manifest_json(m));
  EXPECT_EQ(manifest_json(back), manifest_json(m));
  EXPECT_EQ(kind_of([] { parse_manifest("{"); }), "corrupt_manifest");
}

TEST(Names, StagesAndArmsRoundTrip) {
  for (Stage s : kAllStages) EXPECT_EQ(parse_stage(std::string(stage_name(s))), s);
  for (Arm a : kAllArms) EXPECT_EQ(parse_arm(std::string(arm_name(a))), a);
  EXPECT_EQ(kind_of([] { parse_stage("train"); }), "invalid_argument");
  EXPECT_EQ(kind_of([] { parse_arm("fake"); }), "invalid_argument");
}

class TinyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fresh_dir("full"));
    run_pipeline(tiny(*dir_));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete dir_;
  }
  static fs::path* dir_;
};
fs::path* TinyPipeline::dir_ = nullptr;

TEST_F(TinyPipeline, RerunIsANoOpWithIdenticalManifests) {
  const auto before = directory_bytes(*dir_ / "manifests");
  for (const auto& o : run_pipeline(tiny(*dir_))) EXPECT_TRUE(o.skipped) << o.stage;
  EXPECT_EQ(directory_bytes(*dir_ / "manifests"), before);
}

TEST_F(TinyPipeline, SecondRunIsBitIdenticalWithMoreWorkers) {
  const fs::path other = fresh_dir("again");
  PipelineConfig c = tiny(other);
  c.workers = 3;
  run_pipeline(c);
  EXPECT_EQ(directory_bytes(other / "manifests"), directory_bytes(*dir_ / "manifests"));
  EXPECT_EQ(directory_bytes(other / "reports"), directory_bytes(*dir_ / "reports"));
  fs::remove_all(other);
}

TEST_F(TinyPipeline, ExportHoldsOnlySyntheticImagesAndCentroids) {
  std::size_t image_sets = 0;
  for (const auto& e : fs::recursive_directory_iterator(*dir_ / "export")) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name == "images.hdr") {
      ++image_sets;
      const LabeledDataset d = read_images(e.path().parent_path() / "images");
      for (const auto& img : d.images) EXPECT_EQ(img.origin, Origin::synthetic);
    } else if (name.rfind("centroids_", 0) == 0) {
      EXPECT_EQ(slurp(e.path()).find("members"), std::string::npos) << name;
    } else {
      EXPECT_TRUE(name == "images.bin" || name == "preview.pgm") << name;
    }
  }
  EXPECT_EQ(image_sets, 4u);  // linear, plan, ksame_k5, ksame-plan_k5
}

TEST_F(TinyPipeline, TrajectoryArmsHoldTImagesPerPair) {
  const PipelineConfig c = tiny(*dir_);
  for (const char* arm : {"linear", "plan"}) {
    const LabeledDataset d = read_images(*dir_ / layout::export_images(arm));
    EXPECT_EQ(d.images.size(), c.length * (2 * c.max_pairs) / 2) << arm;
  }
  std::ifstream in(*dir_ / layout::export_centroids(5));
  const AnonymizedSet set = read_anonymized(in);
  std::map<int, std::size_t> per_class;
  for (const auto& ct : set.centroids) ++per_class[ct.label];
  std::size_t paired = 0;
  for (const auto& [label, n] : per_class) paired += n - n % 2;
  EXPECT_EQ(read_images(*dir_ / layout::export_images("ksame-plan_k5")).images.size(), c.length * paired / 2);
  EXPECT_EQ(read_images(*dir_ / layout::export_images("ksame_k5")).images.size(), set.centroids.size());
}

TEST_F(TinyPipeline, ReportsCarrySeedAndConfigHash) {
  const PipelineConfig c = tiny(*dir_);
  for (Arm a : kAllArms) {
    for (const std::string& set : arm_sets(c, a)) {
      const std::string text = slurp(*dir_ / layout::report(set));
      EXPECT_NE(text.find("\"config_hash\""), std::string::npos) << set;
      EXPECT_NE(text.find("\"seed\": 0"), std::string::npos) << set;
    }
  }
}

TEST_F(TinyPipeline, ChangedUpstreamConfigIsRejectedWithAHint) {
  PipelineConfig c = tiny(*dir_);
  c.gan.steps = 201;
  try {
    run_stage(Stage::project, c);
    FAIL() << "expected a config hash mismatch";
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.kind(), "config_hash_mismatch");
    EXPECT_NE(e.hint().find("train-gan"), std::string::npos);
  }
}

TEST_F(TinyPipeline, TamperedArtifactIsDetected) {
  const fs::path copy = fresh_dir("tamper");
  fs::copy(*dir_, copy, fs::copy_options::recursive);
  { std::ofstream(copy / layout::kProjections, std::ios::app) << "# edited\n"; }
  EXPECT_EQ(kind_of([&] { run_stage(Stage::ksame, tiny(copy)); }), "artifact_modified");
  fs::remove_all(copy);
}

TEST(Pipeline, MissingUpstreamIsRejected) {
  const fs::path dir = fresh_dir("empty");
  try {
    run_stage(Stage::plan, tiny(dir));
    FAIL() << "expected a missing upstream error";
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.kind(), "missing_upstream");
    EXPECT_NE(e.hint().find("plan-cli train-gan"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Pipeline, RealArmEvaluatesWithoutTrajectoryStages) {
  const fs::path dir = fresh_dir("real_only");
  const PipelineConfig c = tiny(dir);
  for (Stage s : {Stage::synth_data, Stage::train_gan, Stage::project, Stage::train_classifiers}) run_stage(s, c);
  const auto out = run_stage(Stage::eval, c, Arm::real);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].stage, "eval-real");
  EXPECT_TRUE(fs::exists(dir / layout::report("real")));
  EXPECT_EQ(kind_of([&] { run_stage(Stage::eval, c, Arm::plan); }), "missing_upstream");
  fs::remove_all(dir);
}
