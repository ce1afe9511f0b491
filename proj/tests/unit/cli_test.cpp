#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"
#include "softcbm/checkpoint.hpp"
#include "softcbm/folds.hpp"
#include "test_support.hpp"

namespace softcbm::cli {
namespace {

using testing::TempDir;

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

// Overrides for a tiny cohort and model.
std::vector<std::string> tiny(std::vector<std::string> args) {
  for (const char* kv : {"cohort.grid=32", "cohort.tube_radius_min=1.5", "cohort.tube_radius_max=1.8",
                         "cohort.bulge_factor_min=2", "cohort.bulge_factor_max=3", "cohort.stenosis_max=0.2",
                         "model.width_scale=0.0625", "model.input_shape=16", "train.epochs=2",
                         "train.freeze_epochs=1", "train.folds=2", "train.n_concepts=5",
                         "train.oversample_target=6"}) {
    args.push_back("--override");
    args.push_back(kv);
  }
  return args;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const auto r = run(tiny({"generate", "--patients", "6", "--controls", "4", "--seed", "5", "--out",
                             (dir_->path() / "cohort").string()}));
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::filesystem::path cohort() { return dir_->path() / "cohort"; }
  static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

TEST_F(CliTest, GenerateManifestListsEveryFile) {
  const auto m = RunManifest::from_json(read_text_file(cohort() / "generate.manifest.json"));
  EXPECT_EQ(m.command, "generate");
  EXPECT_EQ(m.seed, 5u);
  EXPECT_EQ(m.config.require("cohort.grid"), "32 32 32");
  std::set<std::string> listed(m.artifacts.begin(), m.artifacts.end());
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(cohort())) {
    if (!e.is_regular_file() || e.path().filename() == "generate.manifest.json") continue;
    ++files;
    EXPECT_TRUE(listed.count(std::filesystem::relative(e.path(), cohort()).generic_string())) << e.path();
  }
  EXPECT_EQ(files, listed.size());
  EXPECT_EQ(files, 10u * 2u + 2u);
  EXPECT_EQ(RunManifest::from_json(m.to_json()).to_json(), m.to_json());
}

TEST_F(CliTest, SplitWritesFoldsAndSelections) {
  const auto out = dir_->path() / "split";
  const auto r = run(tiny({"split", "--cohort", cohort().string(), "--folds", "2", "--out", out.string()}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto plan = FoldPlan::from_json(read_text_file(out / "folds.json"));
  EXPECT_EQ(plan.folds.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(out / "fold1_selection.json"));
  EXPECT_TRUE(std::filesystem::exists(out / "fold2_selection.json"));
  EXPECT_TRUE(std::filesystem::exists(out / "split.manifest.json"));
}

TEST_F(CliTest, TrainThenEvaluateInterveneAndReport) {
  const auto runs = dir_->path() / "run";
  auto r = run(tiny({"train", "--cohort", cohort().string(), "--fold", "2", "--out", runs.string(), "--quiet"}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(std::filesystem::exists(runs / "checkpoints" / "fold2.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(runs / "summary.txt"));

  r = run({"evaluate", "--run", runs.string(), "--fold", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(std::filesystem::exists(runs / "evaluate_fold2.csv"));

  r = run({"tta", "--run", runs.string(), "--fold", "2", "--passes", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;

  const auto sel = ConceptSelection::from_json(read_text_file(runs / "fold2_selection.json"));
  const auto plan = FoldPlan::from_json(read_text_file(runs / "folds.json"));
  const auto records = read_cohort_manifest(cohort());
  const std::string subject = records[plan.folds[1].val.front()].subject_id;
  r = run({"intervene", "--run", runs.string(), "--fold", "2", "--subject", subject, "--set",
           sel.kept_names[0] + "=1"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("p(patient)"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(runs / ("intervene_" + subject + ".json")));

  EXPECT_EQ(run({"intervene", "--run", runs.string(), "--fold", "2", "--subject", subject, "--set", "bogus=1"}).code,
            kExitValidation);
  EXPECT_EQ(run({"intervene", "--run", runs.string(), "--fold", "2", "--subject", subject, "--set",
                 sel.kept_names[0] + "=3"}).code,
            kExitValidation);

  const std::string summary = read_text_file(runs / "summary.txt");
  r = run({"report", "--run", runs.string(), "--out", (dir_->path() / "rep").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(read_text_file(dir_->path() / "rep" / "summary.txt"), summary);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}).code, kExitValidation);
  EXPECT_EQ(run({"generate"}).code, kExitValidation);
  EXPECT_EQ(run({"frobnicate"}).code, kExitValidation);
  EXPECT_EQ(run({"generate", "--out", (dir_->path() / "x").string(), "--override", "nope=1"}).code, kExitValidation);
  EXPECT_EQ(run({"evaluate", "--run", (dir_->path() / "missing").string()}).code, kExitIo);
  EXPECT_EQ(run({"split", "--cohort", (dir_->path() / "missing").string()}).code, kExitIo);
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  EXPECT_NE(help.out.find("crossval"), std::string::npos);
}

}  // namespace
}  // namespace softcbm::cli
