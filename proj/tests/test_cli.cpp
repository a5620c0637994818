// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "epit/cli.hpp"

using namespace epit;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "epit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("epit_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

const std::vector<std::string> kMicro = {"--set", "channels=8", "--set", "embed_dim=8", "--set", "num_blocks=1"};

}  // namespace

TEST(CliHelp, ListsEverySubcommandAndFlag) {
  const CliRun r = run({"--help"});
  ASSERT_EQ(r.code, 0);
  cli::RunConfig rc;
  const auto app = cli::build_app(rc);
  const auto subs = app->get_subcommands([](CLI::App*) { return true; });
  ASSERT_EQ(subs.size(), cli::subcommand_names().size());
  for (const CLI::App* sub : subs) {
    EXPECT_NE(r.out.find(sub->get_name()), std::string::npos) << sub->get_name();
    for (const CLI::Option* opt : sub->get_options()) {
      EXPECT_FALSE(opt->get_description().empty()) << sub->get_name() << " " << opt->get_name();
      for (const auto& name : opt->get_lnames())
        EXPECT_NE(r.out.find("--" + name), std::string::npos) << sub->get_name() << " --" << name;
    }
  }
  for (const char* flag : {"--config", "--seed", "--scale", "--shear", "--block", "--orient", "--shave", "--out",
                           "--threads"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
}

TEST(CliHelp, UndocumentedFlagsAreRejected) {
  EXPECT_EQ(run({"param-count", "--verbose"}).code, 1);
  EXPECT_EQ(run({"no-such-command"}).code, 1);
  EXPECT_EQ(run({}).code, 1);
}

TEST_F(CliTest, UnknownConfigKeyIsAUsageError) {
  const CliRun r = run({"param-count", "--set", "chanels=8"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("chanels"), std::string::npos);
  std::ofstream(path("bad.cfg")) << "lr0=abc\n";
  const CliRun f = run({"param-count", "--config", path("bad.cfg")});
  EXPECT_EQ(f.code, 1);
  EXPECT_NE(f.err.find("bad.cfg:1"), std::string::npos);
}

TEST_F(CliTest, MissingInputIsADataError) {
  const CliRun r = run({"eval", "--model", "bicubic", "--in", path("missing"), "--out", path("m.csv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing"), std::string::npos);
}

TEST_F(CliTest, ParamCountMatchesLibrary) {
  std::vector<std::string> args = {"param-count", "--out", path("pc.csv")};
  args.insert(args.end(), kMicro.begin(), kMicro.end());
  ASSERT_EQ(run(args).code, 0);
  EXPECT_NE(slurp(path("pc.csv")).find("total," + std::to_string(param_count(EpitConfig::micro())) + "\n"),
            std::string::npos);
}

TEST_F(CliTest, SuperResolveDoublesSpatialExtents) {
  ASSERT_EQ(run({"gen-synth", "--out", path("data"), "--count", "1", "--size", "12", "--views", "3"}).code, 0);
  std::vector<std::string> train = {"train", "--in", path("data"), "--out", path("m.eptw"), "--set", "hr_patch=12",
                                    "--set", "epochs=1"};
  train.insert(train.end(), kMicro.begin(), kMicro.end());
  ASSERT_EQ(run(train).code, 0);
  ASSERT_EQ(run({"sr", "--model", path("m.eptw"), "--in", path("data/scene_000.lf4d"), "--out", path("sr.lf4d"),
                 "--scale", "2"})
                .code,
            0);
  EXPECT_EQ(load_lf(path("sr.lf4d")).extents(), (LfExtents{3, 3, 24, 24, 1}));
  EXPECT_EQ(run({"sr", "--model", path("m.eptw"), "--in", path("data/scene_000.lf4d"), "--out", path("x.lf4d"),
                 "--scale", "4"})
                .code,
            1);
}

TEST_F(CliTest, DivergenceExitsWithThree) {
  ASSERT_EQ(run({"gen-synth", "--out", path("data"), "--count", "1", "--size", "8", "--views", "2"}).code, 0);
  std::vector<std::string> train = {"train", "--in", path("data"), "--out", path("m.eptw"), "--set", "hr_patch=8",
                                    "--set", "epochs=5", "--set", "lr0=1e36", "--set", "batch_size=1"};
  train.insert(train.end(), kMicro.begin(), kMicro.end());
  const CliRun r = run(train);
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(CliTest, EvalIsByteIdenticalAcrossRunsAndThreadCounts) {
  ASSERT_EQ(run({"gen-synth", "--out", path("data"), "--count", "3", "--size", "16", "--seed", "9"}).code, 0);
  ASSERT_EQ(run({"eval", "--model", "bicubic", "--in", path("data"), "--out", path("a.csv")}).code, 0);
  ASSERT_EQ(run({"eval", "--model", "bicubic", "--in", path("data"), "--out", path("b.csv"), "--threads", "3"}).code, 0);
  EXPECT_EQ(slurp(path("a.csv")), slurp(path("b.csv")));
  EXPECT_EQ(slurp(path("a.csv")).rfind("# config_hash=", 0), 0u);
}

TEST_F(CliTest, ShearRangeSyntax) {
  ASSERT_EQ(run({"gen-synth", "--out", path("data"), "--count", "1", "--size", "24"}).code, 0);
  EXPECT_EQ(run({"shear-sweep", "--model", "bicubic", "--in", path("data"), "--shear=-1..1", "--out", path("s.csv")}).code, 0);
  EXPECT_NE(slurp(path("s.csv")).find("shear,psnr,ssim\n-1,"), std::string::npos);
  EXPECT_EQ(run({"shear-sweep", "--model", "bicubic", "--in", path("data"), "--shear", "2..1", "--out", path("t.csv")}).code, 1);
}

TEST_F(CliTest, AttentionDumpWritesTensorAndHeatmap) {
  ASSERT_EQ(run({"gen-synth", "--out", path("data"), "--count", "1", "--size", "8", "--views", "3"}).code, 0);
  std::vector<std::string> train = {"train", "--in", path("data"), "--out", path("m.eptw"), "--set", "hr_patch=8",
                                    "--set", "epochs=1"};
  train.insert(train.end(), kMicro.begin(), kMicro.end());
  ASSERT_EQ(run(train).code, 0);
  ASSERT_EQ(run({"attn-dump", "--model", path("m.eptw"), "--in", path("data/scene_000.lf4d"), "--orient", "v",
                 "--out", path("att/a")})
                .code,
            0);
  EXPECT_EQ(load_lf(path("att/a.lf4d")).extents(), (LfExtents{3, 3, 8, 8, 1}));
  EXPECT_TRUE(fs::exists(path("att/a.png")));
  EXPECT_EQ(run({"attn-dump", "--model", path("m.eptw"), "--in", path("data/scene_000.lf4d"), "--block", "3",
                 "--out", path("att/b")})
                .code,
            1);
}

TEST(CliGradcheck, OpsModePasses) {
  const CliRun r = run({"gradcheck", "--mode", "ops"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}
