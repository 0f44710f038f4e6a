#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>

#include "iqe/codebook.hpp"
#include "test_util.hpp"

namespace {

struct RunResult {
  int status = -1;
  std::string output;  // stdout and stderr
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + IQE_CLI_PATH + "\" " + args + " 2>&1";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

}  // namespace

TEST(Cli, SynthDataset) {
  iqe::testing::TempDir dir;
  const auto r = run_cli("synth-dataset --refs 3 --levels 2 --image-size 16 --out " + dir.file("s"));
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(dir.file("s/manifest.csv")));
  EXPECT_TRUE(std::filesystem::exists(dir.file("s/config.txt")));
}

TEST(Cli, BuildNoiseCodebook) {
  iqe::testing::TempDir dir;
  const auto r = run_cli("build-codebook --kind normal --k 10000 --out " + dir.file("o") + " -o " + dir.file("n.cbk"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto cb = iqe::load_codebook(dir.file("n.cbk"));
  EXPECT_EQ(cb.dim(), 49u);
  EXPECT_EQ(cb.size(), 10000u);
  EXPECT_EQ(cb.kind, iqe::CodebookKind::normal);
}

TEST(Cli, MissingRequiredFlagIsConfigError) {
  iqe::testing::TempDir dir;
  const auto r = run_cli("evaluate --features f.csv --out " + dir.file("o"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("--manifest"), std::string::npos) << r.output;
}

TEST(Cli, UnknownFlagIsConfigError) {
  EXPECT_EQ(run_cli("build-codebook --no-such-flag 3").status, 2);
  EXPECT_EQ(run_cli("").status, 2);
}

TEST(Cli, LearnedKindNeedsManifest) {
  iqe::testing::TempDir dir;
  const auto r = run_cli("build-codebook --kind learned --k 4 --out " + dir.file("o"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("--manifest"), std::string::npos) << r.output;
}

TEST(Cli, RuntimeErrorExitsOne) {
  iqe::testing::TempDir dir;
  iqe::testing::write_bytes(dir.file("bad.cbk"), "not a codebook");
  iqe::testing::write_bytes(dir.file("m.csv"), "image_id,image_path,ref_id,distortion_type,level,mos\n");
  const auto r = run_cli("extract --codebook " + dir.file("bad.cbk") + " --manifest " + dir.file("m.csv") + " --out " +
                         dir.file("o"));
  EXPECT_EQ(r.status, 1) << r.output;
}

TEST(Cli, EndToEndAndConfigReplay) {
  iqe::testing::TempDir dir;
  const std::string d = dir.path().string();
  ASSERT_EQ(run_cli("synth-dataset --refs 6 --levels 3 --image-size 32 --seed 4 --out " + d + "/data").status, 0);
  ASSERT_EQ(run_cli("build-codebook --kind laplace --k 20 --seed 1 --out " + d + " -o " + d + "/cb.cbk").status, 0);
  auto r = run_cli("extract --codebook " + d + "/cb.cbk --manifest " + d + "/data/manifest.csv --patch-count 200 --out " +
                   d + " -o " + d + "/f.csv");
  ASSERT_EQ(r.status, 0) << r.output;
  r = run_cli("evaluate --manifest " + d + "/data/manifest.csv --features " + d + "/f.csv --repeats 3 --out " + d +
              "/eval");
  ASSERT_EQ(r.status, 0) << r.output;
  const auto results = iqe::testing::read_bytes(d + "/eval/results.csv");
  EXPECT_EQ(results.rfind("model,database,subset,split_index,pcc,srocc\n", 0), 0u);
  EXPECT_NE(results.find(",full,mean,"), std::string::npos);

  r = run_cli("--config " + d + "/eval/config.txt");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(iqe::testing::read_bytes(d + "/eval/results.csv"), results);

  r = run_cli("train --manifest " + d + "/data/manifest.csv --features " + d + "/f.csv --split-index 2 --out " + d +
              "/train");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(std::filesystem::exists(d + "/train/models/f_split2.csv"));
}
