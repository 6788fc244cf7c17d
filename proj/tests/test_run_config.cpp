#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dgn/errors.hpp"
#include "dgn/run_config.hpp"

using namespace dgn;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dgn_run_config_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(RunConfig, IniRoundTripKeepsEveryKey) {
  RunConfig c;
  c.seed = 99;
  c.val_fraction = 0.25;
  c.train.model.hidden = 48;
  c.train.model.fusion = Fusion::Cat;
  c.train.model.kind = ModelKind::Baseline;
  c.train.model.dropout = 0.3;
  c.train.weights.pos = 0.5;
  c.train.keep_best = false;
  c.labeler.k = 4;
  c.synth.noise = 0.125;
  const auto dir = temp_dir("round_trip");
  c.save_snapshot(dir);
  const RunConfig back = RunConfig::load(dir / kRunConfigFile);
  EXPECT_EQ(back.to_ini(), c.to_ini());
  EXPECT_EQ(back.train.model, c.train.model);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.train.weights.pos, 0.5);
  EXPECT_FALSE(back.train.keep_best);
}

TEST(RunConfig, FlagsOverrideFileValues) {
  const auto dir = temp_dir("override");
  std::ofstream(dir / "c.ini") << "[model]\nhidden = 32\nn_head = 4\n\n[train]\nepochs = 3\n";
  RunConfig c = RunConfig::load(dir / "c.ini");
  EXPECT_EQ(c.train.model.hidden, 32u);
  c.apply({"model.hidden=16", "train.learning_rate=0.01"});
  EXPECT_EQ(c.train.model.hidden, 16u);
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.train.learning_rate, 0.01);
}

TEST(RunConfig, ResolveSharesTheSeed) {
  RunConfig c;
  c.seed = 1234;
  c.resolve();
  EXPECT_EQ(c.synth.seed, 1234u);
  EXPECT_EQ(c.labeler.seed, 1234u);
  EXPECT_EQ(c.train.seed, 1234u);
}

TEST(RunConfig, BadInputIsRejected) {
  RunConfig c;
  EXPECT_THROW(c.set("model.hiden", "3"), DataError);
  EXPECT_THROW(c.set("model.hidden", "3x"), DataError);
  EXPECT_THROW(c.set("train.keep_best", "maybe"), DataError);
  EXPECT_THROW(c.set("model.fusion", "sum"), DataError);
  EXPECT_THROW(c.apply({"model.hidden"}), DataError);
  c.set("model.hidden", "30");  // not a multiple of n_head = 4
  EXPECT_THROW(c.resolve(), DataError);
  RunConfig d;
  d.set("model.dropout", "1");
  EXPECT_THROW(d.resolve(), DataError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.ini"), IoError);
  const auto dir = temp_dir("bad");
  std::ofstream(dir / "bad.ini") << "[model]\nwidth = 3\n";
  EXPECT_THROW(RunConfig::load(dir / "bad.ini"), DataError);
}

TEST(RunConfig, KeysCoverTheSections) {
  const auto keys = RunConfig::keys();
  for (const char* k : {"run.seed", "model.generators", "model.fusion", "train.epochs",
                        "labeler.k", "synth.recipes"}) {
    EXPECT_NE(std::find(keys.begin(), keys.end(), k), keys.end()) << k;
  }
}
