#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "lodseg/eval/plots.hpp"
#include "lodseg/eval/report.hpp"
#include "lodseg/eval/robustness.hpp"
#include "lodseg/eval/surface.hpp"
#include "lodseg/losses/dice.hpp"
#include "lodseg/train/synthetic.hpp"
#include "test_support.hpp"

using namespace lodseg;
using namespace lodseg::eval;
using lodseg::testing::TempDir;

namespace {

nn::NetworkConfig tiny(int classes = 4) {
  auto c = nn::NetworkConfig::desk(classes);
  c.input_shape = Shape3::cube(16);
  c.level0_entry_filters = 4;
  c.level0_block_filters = 4;
  c.level1_block_filters = 8;
  c.groupnorm_groups = 2;
  c.blocks_per_stage = 1;
  return c;
}

void write_set(const std::filesystem::path& dir, const std::vector<std::pair<std::string, LabelMap>>& maps) {
  std::filesystem::create_directories(dir);
  for (const auto& [id, l] : maps) nifti::save_labels(l, dir / (id + ".nii.gz"));
}

std::vector<std::pair<std::string, LabelMap>> label_set(int n, std::uint64_t seed) {
  std::vector<std::pair<std::string, LabelMap>> out;
  for (int i = 0; i < n; ++i)
    out.emplace_back("vol" + std::to_string(i),
                     lodseg::testing::random_labels(Shape3::cube(6), ClassScheme::raw7(), seed + static_cast<std::uint64_t>(i)));
  return out;
}

EvalRecord record(const std::string& id, const std::string& method, double mean) {
  EvalRecord r;
  r.volume_id = id;
  r.method = method;
  r.site = "s";
  r.age_bucket = "0-3";
  r.dice = {{"foreground", mean}};
  r.mean = mean;
  return r;
}

// Larger of the distances from p (voxel coordinates) to the nearest voxel
// centre inside and outside the class set.
double boundary_distance(const LabelMap& l, const std::vector<int>& classes, const Eigen::Vector3d& p) {
  auto in = [&](int i, int j, int k) {
    if (!l.shape.contains(i, j, k)) return false;
    return std::find(classes.begin(), classes.end(), l.at(i, j, k)) != classes.end();
  };
  double best_in = 1e9, best_out = 1e9;
  const int r = 3;
  for (int k = int(std::floor(p.z())) - r; k <= int(std::ceil(p.z())) + r; ++k)
    for (int j = int(std::floor(p.y())) - r; j <= int(std::ceil(p.y())) + r; ++j)
      for (int i = int(std::floor(p.x())) - r; i <= int(std::ceil(p.x())) + r; ++i) {
        const double d = (Eigen::Vector3d(i, j, k) - p).norm();
        double& best = in(i, j, k) ? best_in : best_out;
        best = std::min(best, d);
      }
  return std::max(best_in, best_out);
}

}  // namespace

// ---------------------------------------------------------------- inference

TEST(Inference, UniformProbabilitiesDecodeToBackground) {
  Tensor<float> probs(4, Shape3::cube(4), 0.25f);
  const auto l = argmax(probs, Affine::Identity(), ClassScheme::skullstripped4());
  for (auto x : l.data) EXPECT_EQ(x, 0);
}

TEST(Inference, OneHotRecoversClasses) {
  const auto gt = lodseg::testing::random_labels(Shape3::cube(4), ClassScheme::raw7(), 5);
  const auto l = argmax(one_hot<float>(gt), gt.affine, gt.scheme);
  EXPECT_EQ(l.data, gt.data);
}

TEST(Inference, ArgmaxMatchesPerVoxelScan) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor<float> probs(5, Shape3::cube(4));
    Rng rng(seed);
    std::uniform_int_distribution<int> u(0, 3);  // coarse values force ties
    for (auto& v : probs.values()) v = static_cast<float>(u(rng)) / 4.0f;
    const auto l = argmax(probs, Affine::Identity(), ClassScheme::for_count(5));
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
          int best = 0;
          for (int c = 1; c < 5; ++c)
            if (probs.at(c, i, j, k) > probs.at(best, i, j, k)) best = c;
          ASSERT_EQ(l.at(i, j, k), best);
        }
  }
}

TEST(Inference, NetworkDecodeAndShapeContract) {
  const auto net = nn::build<float>(tiny());
  const auto s = synth::make_phantom(synth::Corpus::skullstripped, Shape3::cube(16), ClassScheme::skullstripped4(), 1, "a");
  const auto l = infer_volume(net, s.image);
  EXPECT_EQ(l.shape, s.image.shape);
  const auto probs = nn::forward(net, s.image).probs;
  EXPECT_EQ(l.data, argmax(probs, s.image.affine, l.scheme).data);
  Volume wrong(Shape3::cube(8), Affine::Identity());
  EXPECT_THROW(infer_volume(net, wrong), ContractError);
}

// ------------------------------------------------------------------ reports

TEST(Report, AgeBuckets) {
  EXPECT_EQ(age_bucket(0.0), "0-3");
  EXPECT_EQ(age_bucket(2.99), "0-3");
  EXPECT_EQ(age_bucket(3.0), "3-6");
  EXPECT_EQ(age_bucket(7.5), "6-9");
  EXPECT_EQ(age_bucket(9.0), "9-12");
  EXPECT_EQ(age_bucket(24.0), "12-24");
  EXPECT_EQ(age_bucket(30.0), "other");
  EXPECT_EQ(age_bucket(std::nullopt), "unknown");
}

TEST(Report, MetadataCsv) {
  TempDir tmp;
  {
    std::ofstream f(tmp / "meta.csv");
    f << "site,volume_id,age_months\nA,vol0,1.5\nB,vol1,\n";
  }
  const auto m = load_metadata(tmp / "meta.csv");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.at("vol0").site, "A");
  EXPECT_DOUBLE_EQ(*m.at("vol0").age_months, 1.5);
  EXPECT_FALSE(m.at("vol1").age_months.has_value());
  {
    std::ofstream f(tmp / "bad.csv");
    f << "volume_id,age_months\nvol0,2\n";
  }
  EXPECT_THROW(load_metadata(tmp / "bad.csv"), FormatError);
}

TEST(Report, CopiedPredictionsScorePerfectly) {
  TempDir tmp;
  const auto set = label_set(10, 100);
  write_set(tmp / "gt", set);
  write_set(tmp / "pred", set);
  const auto r = evaluate_set(tmp / "pred", tmp / "gt", {}, ClassScheme::raw7());
  EXPECT_EQ(r.records.size(), 10u);
  EXPECT_TRUE(r.exclusions.empty());
  for (const auto& a : aggregate(r)) {
    EXPECT_DOUBLE_EQ(a.mean, 1.0) << a.class_name;
    EXPECT_DOUBLE_EQ(a.std, 0.0) << a.class_name;
  }
}

TEST(Report, MissingPredictionIsExcludedNotDropped) {
  TempDir tmp;
  auto set = label_set(10, 200);
  write_set(tmp / "gt", set);
  set.erase(set.begin() + 3);
  write_set(tmp / "pred", set);
  const auto r = evaluate_set(tmp / "pred", tmp / "gt", {}, ClassScheme::raw7());
  EXPECT_EQ(r.records.size(), 9u);
  ASSERT_EQ(r.exclusions.size(), 1u);
  EXPECT_EQ(r.exclusions[0].volume_id, "vol3");
  EXPECT_EQ(r.exclusions[0].reason, "missing prediction");
}

TEST(Report, AggregatesMatchIndependentGroupBy) {
  TempDir tmp;
  write_set(tmp / "gt", label_set(8, 300));
  write_set(tmp / "pred", label_set(8, 400));
  std::map<std::string, Metadata> meta;
  for (int i = 0; i < 8; ++i) meta["vol" + std::to_string(i)] = {i % 2 ? "north" : "south", 1.0 + 3.0 * i};
  const auto r = evaluate_set(tmp / "pred", tmp / "gt", meta, ClassScheme::raw7());
  ASSERT_EQ(r.records.size(), 8u);
  for (const auto& rec : r.records)
    for (const auto& [c, d] : rec.dice) ASSERT_TRUE(d >= 0.0 && d <= 1.0);

  // Independent recompute: sum, sum of squares, count per key.
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> bins;
  for (const auto& rec : r.records) {
    auto add = [&](const std::string& kind, const std::string& group) {
      for (const auto& [c, d] : rec.dice) bins[{kind, group, c}].push_back(d);
      bins[{kind, group, "mean"}].push_back(rec.mean);
    };
    add("all", "all");
    add("site", rec.site);
    add("age", rec.age_bucket);
  }
  const auto agg = aggregate(r);
  EXPECT_EQ(agg.size(), bins.size());
  for (const auto& a : agg) {
    const auto& v = bins.at({a.group_kind, a.group, a.class_name});
    double s = 0, s2 = 0;
    for (double x : v) s += x;
    const double mean = s / double(v.size());
    for (double x : v) s2 += (x - mean) * (x - mean);
    EXPECT_EQ(a.n, v.size());
    EXPECT_NEAR(a.mean, mean, 1e-12);
    EXPECT_NEAR(a.std, std::sqrt(s2 / double(v.size())), 1e-12);
  }
}

TEST(Report, InputOrderDoesNotMatter) {
  TempDir tmp;
  auto gt = label_set(6, 500), pred = label_set(6, 600);
  write_set(tmp / "gt_a", gt);
  write_set(tmp / "pred_a", pred);
  std::reverse(gt.begin(), gt.end());
  std::reverse(pred.begin(), pred.end());
  write_set(tmp / "gt_b", gt);
  write_set(tmp / "pred_b", pred);
  const auto a = evaluate_set(tmp / "pred_a", tmp / "gt_a", {}, ClassScheme::raw7());
  const auto b = evaluate_set(tmp / "pred_b", tmp / "gt_b", {}, ClassScheme::raw7());
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Report, JsonRoundTripAndFiles) {
  TempDir tmp;
  write_set(tmp / "gt", label_set(4, 700));
  write_set(tmp / "pred", label_set(4, 800));
  const auto r = evaluate_set(tmp / "pred", tmp / "gt", {}, ClassScheme::raw7(), "m1");
  EXPECT_EQ(to_json(report_from_json(to_json(r))).dump(), to_json(r).dump());
  auto j = to_json(r);
  j["schema_version"] = 99;
  EXPECT_THROW(report_from_json(j), MigrationError);

  write_report(r, tmp / "out");
  std::ifstream lines(tmp / "out" / "records.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto rec = nlohmann::json::parse(line);
    EXPECT_EQ(rec.at("method"), "m1");
    ++n;
  }
  EXPECT_EQ(n, 4);
  EXPECT_TRUE(std::filesystem::exists(tmp / "out" / "aggregates.csv"));
  EXPECT_TRUE(std::filesystem::exists(tmp / "out" / "report.json"));
  const auto plots = write_boxplots(r, tmp / "out" / "plots");
  EXPECT_EQ(plots.size(), 3u);  // all, one site, one age group
  for (const auto& p : plots) EXPECT_GT(std::filesystem::file_size(p), 100u);
}

// ------------------------------------------------------------- discordance

TEST(Discordance, IdenticalMethodsFallBackToIdOrder) {
  std::vector<EvalReport> reports(3);
  for (int m = 0; m < 3; ++m)
    for (int v = 9; v >= 0; --v) reports[m].records.push_back(record("v" + std::to_string(v), "m" + std::to_string(m), 0.8));
  std::vector<std::pair<std::string, double>> scores;
  const auto top = rank_discordant(reports, 4, &scores);
  EXPECT_EQ(top, (std::vector<std::string>{"v0", "v1", "v2", "v3"}));
  for (const auto& [id, v] : scores) EXPECT_EQ(v, 0.0);
}

TEST(Discordance, HandComputedVariances) {
  // Per-volume means over methods a, b, c and their population variances:
  //   v1 {0.9, 0.9, 0.9} -> 0
  //   v2 {0.5, 0.7, 0.9} -> 0.08 / 3
  //   v3 {0.2, 0.8, 0.8} -> 0.24 / 3
  //   v4 {1.0, 0.0, 0.5} -> 0.50 / 3
  //   v5 {0.6, 0.6, 0.9} -> 0.06 / 3
  const std::map<std::string, std::array<double, 3>> table = {
      {"v1", {0.9, 0.9, 0.9}}, {"v2", {0.5, 0.7, 0.9}}, {"v3", {0.2, 0.8, 0.8}},
      {"v4", {1.0, 0.0, 0.5}}, {"v5", {0.6, 0.6, 0.9}}};
  std::vector<EvalReport> reports(3);
  const char* names[] = {"a", "b", "c"};
  for (const auto& [id, vals] : table)
    for (int m = 0; m < 3; ++m) reports[m].records.push_back(record(id, names[m], vals[m]));
  std::vector<std::pair<std::string, double>> scores;
  const auto top = rank_discordant(reports, 5, &scores);
  EXPECT_EQ(top, (std::vector<std::string>{"v4", "v3", "v2", "v5", "v1"}));
  const std::map<std::string, double> expected = {
      {"v1", 0.0}, {"v2", 0.08 / 3}, {"v3", 0.24 / 3}, {"v4", 0.5 / 3}, {"v5", 0.06 / 3}};
  for (const auto& [id, v] : scores) EXPECT_NEAR(v, expected.at(id), 1e-12) << id;

  std::reverse(reports.begin(), reports.end());
  EXPECT_EQ(rank_discordant(reports, 5), top);
  std::swap(reports[0], reports[1]);
  EXPECT_EQ(rank_discordant(reports, 5), top);
}

TEST(Discordance, DefaultKAndBounds) {
  std::vector<EvalReport> reports(2);
  for (int v = 0; v < 40; ++v)
    for (int m = 0; m < 2; ++m)
      reports[m].records.push_back(record("v" + std::to_string(100 + v), "m" + std::to_string(m), m ? 0.5 : 0.01 * v));
  EXPECT_EQ(rank_discordant(reports).size(), 30u);
  EXPECT_EQ(rank_discordant(reports, 100).size(), 40u);
  EXPECT_THROW(rank_discordant(reports, -1), ConfigError);
  // A volume scored by a single method cannot be ranked.
  reports[0].records.push_back(record("solo", "m0", 0.1));
  const auto all = rank_discordant(reports, 100);
  EXPECT_EQ(std::count(all.begin(), all.end(), "solo"), 0);
}

// -------------------------------------------------------------- robustness

TEST(Robustness, AlphaZeroMatchesPlainEvaluation) {
  const auto net = nn::build<float>(tiny());
  const auto samples = synth::make_corpus(synth::Corpus::skullstripped, 3, Shape3::cube(16), ClassScheme::skullstripped4(), 7);
  const auto plain = plain_row(net, samples, false);
  const auto t = robustness_sweep(net, samples, {0.0}, {1, 2});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_NEAR(t.rows[0].mean, plain.mean, 1e-5);
  for (const auto& [c, v] : plain.per_class) EXPECT_NEAR(t.rows[0].per_class.at(c), v, 1e-5) << c;
  EXPECT_EQ(t.rows[0].n, 6u);
}

TEST(Robustness, RowsPerAlphaAndReproducible) {
  const auto net = nn::build<float>(tiny());
  const auto samples = synth::make_corpus(synth::Corpus::skullstripped, 2, Shape3::cube(16), ClassScheme::skullstripped4(), 8);
  const std::vector<double> alphas = {0.0, 0.5, 1.0, 2.0};
  const auto a = robustness_sweep(net, samples, alphas, {3});
  const auto b = robustness_sweep(net, samples, alphas, {3}, {}, false, 2);
  ASSERT_EQ(a.rows.size(), alphas.size());
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  for (std::size_t i = 0; i < alphas.size(); ++i) EXPECT_EQ(a.rows[i].alpha, alphas[i]);
  EXPECT_THROW(robustness_sweep(net, samples, {}, {3}), ConfigError);
  EXPECT_THROW(robustness_sweep(net, samples, {-1.0}, {3}), ConfigError);
  TempDir tmp;
  EXPECT_GT(std::filesystem::file_size(write_alpha_plot(a, tmp.path())), 100u);
  EXPECT_NE(to_csv(a).find("alpha,csf,gray_matter,white_matter,mean,n"), std::string::npos);
}

TEST(Robustness, SpearmanWithTies) {
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0, 1e-12);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0, 1e-12);
  // Ranks of y with a tie: {1, 2.5, 2.5, 4}; Pearson with {1, 2, 3, 4}.
  const double expected = 4.5 / std::sqrt(5.0 * 4.5);
  EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 5, 5, 9}), expected, 1e-12);
  EXPECT_EQ(spearman({1, 2, 3}, {2, 2, 2}), 0.0);
  EXPECT_EQ(average_ranks({3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
}

// ---------------------------------------------------------------- surfaces

TEST(Surface, SingleVoxelIsClosedGenusZero) {
  LabelMap l(Shape3::cube(3), Affine::Identity(), ClassScheme());
  l.at(1, 1, 1) = 1;
  const auto m = extract_surface(l, "foreground", 0);
  EXPECT_EQ(m.vertices.size(), 6u);
  EXPECT_EQ(m.faces.size(), 8u);
  EXPECT_TRUE(m.watertight());
  EXPECT_EQ(m.euler_characteristic(), 2);
  const auto s = extract_surface(l, "foreground");
  EXPECT_TRUE(s.watertight());
  EXPECT_EQ(s.euler_characteristic(), 2);
}

TEST(Surface, SphereAreaMatchesAnalytic) {
  const auto l = lodseg::testing::ball_labels(Shape3::cube(32), 15.5, 15.5, 15.5, 10);
  const auto m = extract_surface(l, "foreground");
  const double expected = 4 * M_PI * 100;
  EXPECT_NEAR(m.area() / expected, 1.0, 0.05) << m.area();
  EXPECT_TRUE(m.watertight());
  EXPECT_EQ(m.euler_characteristic(), 2);
}

TEST(Surface, WorldCoordinatesFollowTheAffine) {
  Affine a = Affine::Identity();
  a.topLeftCorner<3, 3>() = Eigen::Vector3d(2.0, 2.0, 2.0).asDiagonal();
  a.topRightCorner<3, 1>() = Eigen::Vector3d(-10, 5, 3);
  const auto l = lodseg::testing::ball_labels(Shape3::cube(32), 15.5, 15.5, 15.5, 10, a);
  const auto m = extract_surface(l, "foreground");
  EXPECT_NEAR(m.area() / (4 * M_PI * 400), 1.0, 0.05);
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& v : m.vertices) c += v;
  c /= double(m.vertices.size());
  EXPECT_LT((c - Eigen::Vector3d(21, 36, 34)).norm(), 0.1);
}

TEST(Surface, SolidPhantomsAreWatertightAndOriented) {
  // Two disjoint balls, a box and the tissue surfaces of a synthetic head.
  std::vector<std::pair<LabelMap, std::string>> cases;
  auto two = lodseg::testing::ball_labels(Shape3::cube(32), 8, 8, 8, 5);
  const auto other = lodseg::testing::ball_labels(Shape3::cube(32), 22, 22, 22, 6);
  for (std::size_t i = 0; i < two.data.size(); ++i) two.data[i] = std::max(two.data[i], other.data[i]);
  cases.emplace_back(two, "foreground");
  LabelMap box(Shape3{12, 10, 8}, Affine::Identity(), ClassScheme());
  for (int k = 2; k < 6; ++k)
    for (int j = 2; j < 8; ++j)
      for (int i = 2; i < 10; ++i) box.at(i, j, k) = 1;
  cases.emplace_back(box, "foreground");
  const auto head = synth::make_phantom(synth::Corpus::infant, Shape3::cube(32), ClassScheme::raw7(), 4, "h").labels;
  for (const char* t : {"inner_gm", "outer_gm", "white_matter", "csf"}) cases.emplace_back(head, t);

  for (const auto& [l, target] : cases) {
    const auto m = extract_surface(l, target);
    ASSERT_FALSE(m.empty()) << target;
    EXPECT_TRUE(m.watertight()) << target;
    // Consistent winding: every directed edge appears once.
    std::set<std::pair<int, int>> directed;
    for (const auto& f : m.faces)
      for (int k = 0; k < 3; ++k) EXPECT_TRUE(directed.insert({f[k], f[(k + 1) % 3]}).second) << target;
    for (const auto& f : m.faces) {
      for (int v : f) ASSERT_TRUE(v >= 0 && v < int(m.vertices.size()));
      EXPECT_GT((m.vertices[f[1]] - m.vertices[f[0]]).cross(m.vertices[f[2]] - m.vertices[f[0]]).norm(), 0.0);
    }
  }
  const auto balls = extract_surface(two, "foreground");
  EXPECT_EQ(balls.euler_characteristic(), 4);
}

TEST(Surface, OutwardNormalsEncloseAPositiveVolume) {
  const auto l = lodseg::testing::ball_labels(Shape3::cube(24), 11.5, 11.5, 11.5, 7);
  const auto m = extract_surface(l, "foreground");
  double vol = 0;
  for (const auto& f : m.faces) vol += m.vertices[f[0]].dot(m.vertices[f[1]].cross(m.vertices[f[2]])) / 6.0;
  EXPECT_GT(vol, 0.0);
  EXPECT_NEAR(vol / (4.0 / 3.0 * M_PI * 343), 1.0, 0.1);
}

TEST(Surface, VerticesStayNearTheClassBoundary) {
  Affine a = Affine::Identity();
  a.topLeftCorner<3, 3>() << 0, -1.5, 0, 1.5, 0, 0, 0, 0, 1.5;
  a.topRightCorner<3, 1>() = Eigen::Vector3d(4, -2, 7);
  const auto head = synth::make_phantom(synth::Corpus::infant, Shape3::cube(32), ClassScheme::raw7(), 9, "h").labels;
  LabelMap l = head;
  l.affine = a;
  for (const char* target : {"inner_gm", "outer_gm"}) {
    const auto m = extract_surface(l, target);
    const auto classes = surface_classes(l.scheme, target);
    const Affine inv = a.inverse();
    double worst = 0;
    for (const auto& v : m.vertices)
      worst = std::max(worst, boundary_distance(l, classes, (inv * v.homogeneous()).head<3>()));
    EXPECT_LE(worst, 1.0) << target;
  }
}

TEST(Surface, EmptyTargetAndBadTargets) {
  LabelMap l(Shape3::cube(8), Affine::Identity(), ClassScheme::raw7());
  l.at(2, 2, 2) = 2;
  EXPECT_TRUE(extract_surface(l, "csf").empty());
  EXPECT_FALSE(extract_surface(l, "white_matter").empty());
  EXPECT_THROW(extract_surface(l, "background"), ConfigError);
  EXPECT_THROW(extract_surface(l, "cortex"), ConfigError);
  EXPECT_THROW(extract_surface(l, "csf", -1), ConfigError);
  EXPECT_EQ(surface_classes(ClassScheme::raw7(), "inner_gm"), (std::vector<int>{2, 6}));
  EXPECT_EQ(surface_classes(ClassScheme::raw7(), "outer_gm"), (std::vector<int>{2, 6, 1}));
}

TEST(Surface, PlyLayout) {
  TempDir tmp;
  LabelMap l(Shape3::cube(3), Affine::Identity(), ClassScheme());
  l.at(1, 1, 1) = 1;
  const auto m = extract_surface(l, "foreground", 0);
  write_ply(m, tmp / "m.ply");
  std::ifstream in(tmp / "m.ply");
  std::vector<std::string> lines;
  for (std::string s; std::getline(in, s);) lines.push_back(s);
  ASSERT_GE(lines.size(), 10u);
  EXPECT_EQ(lines[0], "ply");
  EXPECT_EQ(lines[1], "format ascii 1.0");
  EXPECT_NE(std::find(lines.begin(), lines.end(), "element vertex 6"), lines.end());
  EXPECT_NE(std::find(lines.begin(), lines.end(), "element face 8"), lines.end());
  const auto end = std::find(lines.begin(), lines.end(), "end_header");
  ASSERT_NE(end, lines.end());
  EXPECT_EQ(lines.end() - end - 1, 14);
  EXPECT_EQ(lines.back().substr(0, 2), "3 ");
}
