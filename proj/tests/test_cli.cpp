#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "lodseg/cli/dispatch.hpp"
#include "test_support.hpp"

using namespace lodseg;
using lodseg::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "lodseg");
  args.insert(args.begin() + 1, {"--log-level", "error"});
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Every regular file under `a` exists under `b` with identical bytes, manifests aside.
void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    const auto name = rel.filename().string();
    if (name.find("manifest.json") != std::string::npos || name == "run_config.ini") continue;
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(bytes(e.path()), bytes(b / rel)) << rel;
    ++n;
  }
  EXPECT_GT(n, 0u);
}

std::string tiny_config(const std::string& out, const std::string& data_block) {
  return "[run]\npipeline = raw\nseed = 11\nout_dir = " + out +
         "\n\n[network]\npreset = desk\ninput_shape = 16\nlevel0_entry_filters = 4\nlevel0_block_filters = 4\n"
         "level1_block_filters = 8\ngroupnorm_groups = 2\nblocks_per_stage = 1\nnum_classes = 7\n\n"
         "[stage.adult_prior]\ndata = adult\nepochs = 2\nlr_init = 0.003\n\n"
         "[stage.infant_upper]\ndata = infant\nepochs = 2\nlr_init = 0.003\n\n"
         "[data.adult]\nsource = synthetic\ncorpus = adult\nscheme = raw7\ncount = 2\nval_count = 1\n\n" +
         data_block;
}

const std::string kSyntheticInfant =
    "[data.infant]\nsource = synthetic\ncorpus = infant\nscheme = raw7\ncount = 2\nval_count = 1\n";

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  f << s;
}

}  // namespace

TEST(Cli, HelpVersionAndParams) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"conform", "--help"}).code, 0);
  const auto v = run({"--version"});
  EXPECT_EQ(v.code, 0);
  const auto p = run({"params"});
  EXPECT_EQ(p.code, 0);
  EXPECT_EQ(p.out, std::to_string(nn::parameter_count(nn::NetworkConfig{})) + "\n");
}

TEST(Cli, UsageErrorsExitOne) {
  auto r = run({"segment-everything"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("unknown subcommand"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  r = run({"conform", "--in", "a.nii", "--out", "b.nii", "--frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--frobnicate"), std::string::npos);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"conform", "--out", "b.nii"}).code, 1);  // missing required flag
}

TEST(Cli, ConformProducesCanonicalGrid) {
  TempDir tmp;
  Affine a = Affine::Identity();
  a.topLeftCorner<3, 3>() << -2, 0, 0, 0, 0, 2, 0, -2.5, 0;  // LIP-like, anisotropic
  a.topRightCorner<3, 1>() = Eigen::Vector3d(30, -20, 10);
  const auto v = lodseg::testing::random_volume(Shape3{10, 12, 8}, 3, a);
  nifti::save_volume(v, tmp / "a.nii.gz");
  const auto before = bytes(tmp / "a.nii.gz");
  const auto r = run({"conform", "--in", (tmp / "a.nii.gz").string(), "--out", (tmp / "b.nii.gz").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto b = nifti::load_volume(tmp / "b.nii.gz");
  EXPECT_EQ(b.shape, Shape3::cube(256));
  EXPECT_EQ(orientation_code(b.affine), "RAS");
  EXPECT_TRUE(voxel_sizes(b.affine).isApprox(Eigen::Vector3d::Ones(), 1e-6));
  EXPECT_EQ(bytes(tmp / "a.nii.gz"), before);  // input untouched
  EXPECT_TRUE(fs::exists(tmp / "b.nii.gz.manifest.json"));
}

TEST(Cli, TrainConfigWithUnknownKeyNamesIt) {
  TempDir tmp;
  write_text(tmp / "bad.cfg", tiny_config((tmp / "run").string(), kSyntheticInfant) + "learning_speed = 3\n");
  const auto r = run({"train", "--config", (tmp / "bad.cfg").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("learning_speed"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(tmp / "run"));  // validated before any work

  write_text(tmp / "ok.cfg", tiny_config((tmp / "run").string(), kSyntheticInfant));
  const auto o = run({"train", "--config", (tmp / "ok.cfg").string(), "--set", "stage.finetune:epochs=x"});
  EXPECT_EQ(o.code, 1);
  EXPECT_EQ(run({"train", "--config", (tmp / "missing.cfg").string()}).code, 1);
}

TEST(Cli, RuntimeErrorsExitTwo) {
  TempDir tmp;
  write_text(tmp / "junk.nii", std::string(400, 'x'));
  const auto r = run({"motion-sim", "--in", (tmp / "junk.nii").string(), "--out", (tmp / "m.nii").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, ManifestContents) {
  TempDir tmp;
  const auto v = lodseg::testing::random_volume(Shape3::cube(16), 4);
  nifti::save_volume(v, tmp / "v.nii.gz");
  const auto r = run({"--workers", "2", "motion-sim", "--in", (tmp / "v.nii.gz").string(), "--out",
                      (tmp / "m.nii.gz").string(), "--alpha", "1.5", "--seed", "9"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = read_json(tmp / "m.nii.gz.manifest.json");
  EXPECT_EQ(m.at("schema_version"), 1);
  EXPECT_EQ(m.at("command"), "motion-sim");
  EXPECT_EQ(m.at("workers"), 2);
  EXPECT_EQ(m.at("seeds").at("seed"), 9);
  EXPECT_EQ(m.at("args").at("alpha"), 1.5);
  for (const char* k : {"lodseg", "compiler", "eigen", "zlib", "fftw"}) EXPECT_TRUE(m.at("build").contains(k)) << k;
  EXPECT_TRUE(m.at("environment").contains("LODSEG_CACHE"));
  EXPECT_TRUE(fs::exists(tmp / "m.nii.gz.plan.json"));

  auto bad = m;
  bad["schema_version"] = 7;
  write_text(tmp / "bad.json", bad.dump());
  EXPECT_EQ(run({"replay", (tmp / "bad.json").string()}).code, 2);
  EXPECT_EQ(run({"replay", (tmp / "none.json").string()}).code, 1);
}

TEST(Cli, ReplayReproducesFileCommands) {
  TempDir tmp;
  ASSERT_EQ(run({"synth", "--corpus", "infant", "--count", "2", "--shape", "24", "--seed", "3", "--out",
                 (tmp / "data").string()})
                .code,
            0);
  const auto img = (tmp / "data" / "images").string() + "/infant_3_0.nii.gz";
  const auto lbl = (tmp / "data" / "labels").string() + "/infant_3_0.nii.gz";
  ASSERT_TRUE(fs::exists(img));

  struct Case {
    std::vector<std::string> args;
    std::string out, manifest;
  };
  const std::vector<Case> cases = {
      {{"conform", "--in", img, "--shape", "20", "--mm", "1.3", "--normalize"}, "c.nii.gz", "c.nii.gz.manifest.json"},
      {{"conform", "--in", lbl, "--labels", "--shape", "20"}, "cl.nii.gz", "cl.nii.gz.manifest.json"},
      {{"motion-sim", "--in", img, "--alpha", "2", "--seed", "4"}, "m.nii.gz", "m.nii.gz.manifest.json"},
      {{"mesh", "--in", lbl, "--target", "inner_gm"}, "s.ply", "s.ply.manifest.json"},
  };
  for (const auto& c : cases) {
    auto args = c.args;
    args.insert(args.end(), {"--out", (tmp / c.out).string()});
    const auto r = run(args);
    ASSERT_EQ(r.code, 0) << c.args[0] << ": " << r.err;
    const auto again = run({"replay", (tmp / c.manifest).string(), "--out", (tmp / ("re_" + c.out)).string()});
    ASSERT_EQ(again.code, 0) << again.err;
    EXPECT_EQ(bytes(tmp / c.out), bytes(tmp / ("re_" + c.out))) << c.args[0];
    EXPECT_EQ(read_json(tmp / ("re_" + c.manifest)).at("replayed_from"), (tmp / c.manifest).string());
  }
  // In-place replay (no --out) overwrites with identical bytes.
  const auto before = bytes(tmp / "m.nii.gz");
  ASSERT_EQ(run({"replay", (tmp / "m.nii.gz.manifest.json").string()}).code, 0);
  EXPECT_EQ(bytes(tmp / "m.nii.gz"), before);
}

TEST(Cli, ReplayReproducesDirectoryCommands) {
  TempDir tmp;
  const auto data = (tmp / "data").string();
  ASSERT_EQ(run({"synth", "--corpus", "skullstripped", "--scheme", "ss4", "--count", "3", "--shape", "16", "--out", data}).code, 0);
  ASSERT_EQ(run({"replay", data + "/manifest.json", "--out", (tmp / "data2").string()}).code, 0);
  expect_same_tree(data, tmp / "data2");

  const auto img = data + "/images/" + fs::directory_iterator(data + "/images")->path().filename().string();
  ASSERT_EQ(run({"augment-preview", "--in", img, "--count", "3", "--seed", "5", "--set", "rotation.probability=1",
                 "--out", (tmp / "aug").string()})
                .code,
            0);
  ASSERT_EQ(run({"replay", (tmp / "aug" / "manifest.json").string(), "--out", (tmp / "aug2").string()}).code, 0);
  expect_same_tree(tmp / "aug", tmp / "aug2");
  const auto m = read_json(tmp / "aug" / "manifest.json");
  for (const auto& plan : m.at("summary").at("plans"))
    if (!plan.empty()) EXPECT_NE(plan.dump().find("rotation"), std::string::npos);

  // A 4-class network checkpoint for infer / robustness / evaluate.
  auto c = nn::NetworkConfig::desk(4);
  c.input_shape = Shape3::cube(16);
  c.level0_entry_filters = 4;
  c.level0_block_filters = 4;
  c.level1_block_filters = 8;
  c.groupnorm_groups = 2;
  c.blocks_per_stage = 1;
  nn::save_checkpoint(nn::build<float>(c), tmp / "net.ckpt");

  ASSERT_EQ(run({"infer", "--checkpoint", (tmp / "net.ckpt").string(), "--in", data + "/images", "--out",
                 (tmp / "pred").string()})
                .code,
            0);
  ASSERT_EQ(run({"replay", (tmp / "pred" / "manifest.json").string(), "--out", (tmp / "pred2").string()}).code, 0);
  expect_same_tree(tmp / "pred", tmp / "pred2");

  ASSERT_EQ(run({"evaluate", "--pred", "net=" + (tmp / "pred").string(), "--pred", "truth=" + data + "/labels", "--gt",
                 data + "/labels", "--scheme", "ss4", "--out", (tmp / "ev").string()})
                .code,
            0);
  ASSERT_EQ(run({"replay", (tmp / "ev" / "manifest.json").string(), "--out", (tmp / "ev2").string()}).code, 0);
  expect_same_tree(tmp / "ev", tmp / "ev2");
  EXPECT_EQ(read_json(tmp / "ev" / "discordant.json").size(), 3u);
  EXPECT_TRUE(fs::exists(tmp / "ev" / "truth" / "plots" / "boxplot_truth_all_all.svg"));

  const std::vector<std::string> rob = {"robustness", "--checkpoint", (tmp / "net.ckpt").string(), "--data", data,
                                        "--alphas", "0,1", "--seeds", "1,2"};
  auto rob1 = rob;
  rob1.insert(rob1.end(), {"--out", (tmp / "rob").string()});
  ASSERT_EQ(run(rob1).code, 0);
  auto rob2 = rob;
  rob2.insert(rob2.begin(), {"--workers", "3"});
  rob2.insert(rob2.end(), {"--out", (tmp / "rob_w3").string()});
  ASSERT_EQ(run(rob2).code, 0);
  expect_same_tree(tmp / "rob", tmp / "rob_w3");
  ASSERT_EQ(run({"replay", (tmp / "rob" / "manifest.json").string(), "--out", (tmp / "rob2").string()}).code, 0);
  expect_same_tree(tmp / "rob", tmp / "rob2");
  EXPECT_EQ(read_json(tmp / "rob" / "robustness.json").at("rows").size(), 2u);
  EXPECT_EQ(run({"robustness", "--checkpoint", (tmp / "net.ckpt").string(), "--data", data, "--alphas", "0,-1", "--out",
                 (tmp / "rob3").string()})
                .code,
            1);
}

TEST(Cli, TrainReplayAndCache) {
  TempDir tmp;
  const auto data = (tmp / "infants").string();
  ASSERT_EQ(run({"synth", "--corpus", "infant", "--count", "3", "--shape", "20", "--out", data}).code, 0);
  write_text(tmp / "t.cfg", tiny_config((tmp / "ignored").string(),
                                         "[data.infant]\nsource = dir\npath = " + data + "\nscheme = raw7\nval_fraction = 0.34\n"));
  const auto cache = tmp / "cache";
  ::setenv("LODSEG_CACHE", cache.c_str(), 1);
  const auto r = run({"train", "--config", (tmp / "t.cfg").string(), "--out", (tmp / "run").string()});
  ::unsetenv("LODSEG_CACHE");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_FALSE(fs::exists(tmp / "ignored"));
  EXPECT_TRUE(fs::exists(tmp / "run" / "final.ckpt"));
  const auto m = read_json(tmp / "run" / "manifest.json");
  EXPECT_EQ(m.at("environment").at("LODSEG_CACHE"), cache.string());
  EXPECT_EQ(m.at("seeds").at("run.seed"), "11");
  std::size_t cached = 0;
  for (const auto& e : fs::directory_iterator(cache)) cached += e.is_regular_file();
  EXPECT_GE(cached, 6u);  // 3 images + 3 label maps

  const auto again = run({"--workers", "2", "replay", (tmp / "run" / "manifest.json").string(), "--out",
                          (tmp / "run2").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(bytes(tmp / "run" / "final.ckpt"), bytes(tmp / "run2" / "final.ckpt"));
  EXPECT_EQ(read_json(tmp / "run" / "train_summary.json"), read_json(tmp / "run2" / "train_summary.json"));

  // Resume skips both completed stages and keeps the result.
  const auto resumed = run({"train", "--config", (tmp / "t.cfg").string(), "--out", (tmp / "run").string(), "--resume"});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  const auto s = read_json(tmp / "run" / "train_summary.json");
  EXPECT_EQ(s.at("resumed").size(), 2u);
  EXPECT_EQ(s.at("final_val_loss"), read_json(tmp / "run2" / "train_summary.json").at("final_val_loss"));
}
