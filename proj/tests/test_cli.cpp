#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>
#include <sys/wait.h>

#include "voxelbridge/volume.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string("\"") + VOXELBRIDGE_BIN + "\" " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) r.out += buf;
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("voxelbridge-cli-" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kSmallConfig =
    "canonical = 16,16,16\n"
    "r = 4\n"
    "synth.grid = 16,16,16\n"
    "synth.mask_fraction = 0.4\n"
    "synth.stimuli = 6\n"
    "synth.trials = 2\n"
    "encoder.n_layers = 1\n"
    "encoder.hidden = 32\n"
    "encoder.head_hidden = 32\n"
    "align.epochs = 2\n"
    "align.batch = 4\n"
    "eval.resolution = 32\n";

}  // namespace

TEST(Cli, UnknownSubcommandIsUsageError) {
  const auto r = run("frobnicate");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error: usage:"), std::string::npos);
}

TEST(Cli, SubcommandHelpListsFlagsAndDefaults) {
  for (const char* sub : {"synth", "preprocess", "train-align", "embed", "train-bridge", "chat", "reconstruct",
                          "localize", "nullify", "evaluate", "repro"}) {
    const auto r = run(std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--"), std::string::npos) << sub;
  }
  const auto synth = run("synth --help");
  EXPECT_NE(synth.out.find("config synth.stimuli, default 256"), std::string::npos);
  const auto top = run("--help");
  EXPECT_NE(top.out.find("--workdir"), std::string::npos);
  EXPECT_NE(top.out.find("config seed, default 7"), std::string::npos);
}

TEST(Cli, ConfigErrors) {
  const auto dir = fresh_dir("errors");
  auto r = run("--workdir " + dir.string() + " --set no.such.key=1 synth");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error: usage:"), std::string::npos);
  r = run("--workdir " + dir.string() + " nullify --heat missing.nvol --in missing.nvol");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error: io:"), std::string::npos);
}

TEST(Cli, FlagsAndEnvironmentOverrideConfig) {
  auto r = run("--print-config --set r=6 repro --seed 11");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("seed = 11"), std::string::npos);
  EXPECT_NE(r.out.find("r = 6"), std::string::npos);
  r = run("--print-config --threads 2 synth");
  EXPECT_NE(r.out.find("threads = 2"), std::string::npos);
}

TEST(Cli, SmallPipeline) {
  const auto dir = fresh_dir("pipeline");
  { std::ofstream(dir / "small.cfg") << kSmallConfig; }
  const std::string pre = "--workdir " + dir.string() + " --config small.cfg ";

  auto r = run(pre + "synth --out data");
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(fs::exists(dir / "data" / "manifest.jsonl"));
  ASSERT_TRUE(fs::exists(dir / "data" / "mask.nvol"));

  r = run(pre + "preprocess --manifest data/manifest.jsonl --mask data/mask.nvol --out signals --average");
  ASSERT_EQ(r.code, 0) << r.out;
  std::size_t npat = 0;
  for (const auto& e : fs::directory_iterator(dir / "signals")) npat += e.path().extension() == ".npat";
  EXPECT_EQ(npat, 6u);

  r = run(pre + "train-align --manifest data/manifest.jsonl --mask data/mask.nvol --out enc");
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(fs::exists(dir / "enc"));

  const auto vol = (*fs::directory_iterator(dir / "data" / "volumes")).path();
  r = run(pre + "localize --concept zebra --ckpt enc --volume " + vol.string() + " --mask data/mask.nvol --out heat.nvol");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "heat.meta.json"));
  EXPECT_TRUE(fs::exists(dir / "heat.montage.ppm"));
  const auto heat = voxelbridge::read_volume(dir / "heat.nvol");
  for (float x : heat.data) {
    EXPECT_GE(x, 0.0f);
    EXPECT_LE(x, 1.0f);
  }

  r = run(pre + "nullify --heat heat.nvol --in " + vol.string() + " --out nulled.nvol");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(voxelbridge::read_volume(dir / "nulled.nvol").dims, heat.dims);

  fs::create_directories(dir / "recon");
  fs::create_directories(dir / "truth");
  int k = 0;
  for (const auto& e : fs::directory_iterator(dir / "signals")) {
    if (k == 3) break;
    const auto name = e.path().stem().string() + ".ppm";
    ASSERT_EQ(run(pre + "reconstruct --encoder enc --signal " + e.path().string() + " --out recon/" + name).code, 0);
    ASSERT_EQ(run(pre + "reconstruct --encoder enc --noise-seed 99 --signal " + e.path().string() + " --out truth/" + name).code, 0);
    ++k;
  }
  r = run(pre + "evaluate --recon recon --truth truth --out report.json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rep = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_TRUE(rep.contains("aggregate"));

  // every invocation leaves its own run directory
  for (const char* run_name : {"synth-001", "preprocess-001", "train-align-001", "localize-001", "nullify-001",
                               "reconstruct-001", "reconstruct-006", "evaluate-001"}) {
    const auto j = nlohmann::json::parse(slurp(dir / "runs" / run_name / "run.json"));
    EXPECT_EQ(j["exit_code"], 0) << run_name;
    EXPECT_TRUE(fs::exists(dir / "runs" / run_name / "config.txt"));
  }
}

TEST(Cli, RepeatedRunIsByteIdentical) {
  std::string first;
  for (int i = 0; i < 2; ++i) {
    const auto dir = fresh_dir("repeat" + std::to_string(i));
    { std::ofstream(dir / "small.cfg") << kSmallConfig; }
    const std::string pre = "--workdir " + dir.string() + " --config small.cfg ";
    ASSERT_EQ(run(pre + "synth --out data").code, 0);
    ASSERT_EQ(run(pre + "train-align --manifest data/manifest.jsonl --mask data/mask.nvol --out enc").code, 0);
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir / "enc"))
      if (e.is_regular_file()) files[e.path().filename().string()] = slurp(e.path());
    std::string all;
    for (const auto& [name, bytes] : files) all += name + bytes;
    if (i == 0) first = all;
    else EXPECT_TRUE(all == first);
  }
}
