// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "lodseg/augment/spec.hpp"
#include "lodseg/augment/transforms.hpp"
#include "lodseg/cli/dispatch.hpp"
#include "lodseg/eval/robustness.hpp"
#include "lodseg/eval/surface.hpp"
#include "lodseg/losses/dice.hpp"
#include "lodseg/motion/motion_sim.hpp"
#include "lodseg/nn/layers.hpp"
#include "lodseg/train/run_config.hpp"
#include "lodseg/train/trainer.hpp"
#include "lodseg/volume/conform.hpp"
#include "test_support.hpp"

using namespace lodseg;
namespace fs = std::filesystem;
using lodseg::testing::TempDir;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// ------------------------------------------------------------- 1
Outcome parameter_count() {
  const std::size_t n = nn::parameter_count(nn::NetworkConfig{});
  const std::size_t built = nn::build<float>(nn::NetworkConfig{}).parameter_count();
  std::ifstream doc(fs::path(LODSEG_SOURCE_DIR) / "docs" / "architecture.md");
  const std::string text{std::istreambuf_iterator<char>(doc), {}};
  std::string grouped = std::to_string(n);
  for (int i = static_cast<int>(grouped.size()) - 3; i > 0; i -= 3) grouped.insert(static_cast<std::size_t>(i), ",");
  const bool documented = text.find(grouped) != std::string::npos && text.find("337,719") != std::string::npos;
  return {n == built && n >= 100000 && n < 1000000 && documented,
          "count " + std::to_string(n) + ", target 337719, documented " + (documented ? "yes" : "no")};
}

// ------------------------------------------------------------- 2
double brute_dice(const LabelMap& p, const LabelMap& g, int cls) {
  long inter = 0, np = 0, ng = 0;
  for (int z = 0; z < p.shape.z; ++z)
    for (int y = 0; y < p.shape.y; ++y)
      for (int x = 0; x < p.shape.x; ++x) {
        const bool a = p.at(x, y, z) == cls, b = g.at(x, y, z) == cls;
        np += a;
        ng += b;
        inter += a && b;
      }
  return np + ng == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

Outcome dice_oracle() {
  int mismatches = 0, pairs = 0;
  for (int c : {4, 7}) {
    const auto scheme = ClassScheme::for_count(c);
    for (std::uint64_t seed = 0; seed < 500; ++seed, ++pairs) {
      const auto p = lodseg::testing::random_labels(Shape3::cube(4), scheme, 10000 + seed * 2);
      const auto g = lodseg::testing::random_labels(Shape3::cube(4), scheme, 10001 + seed * 2);
      const auto r = dice_coefficient(p, g, scheme, true);
      for (int k = 0; k < c; ++k) mismatches += r.per_class.at(scheme.name(k)) != brute_dice(p, g, k);
    }
  }
  return {mismatches == 0, std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " mismatches"};
}

// ------------------------------------------------------------- 3
Outcome dice_gradient() {
  const double h = 1e-4;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor<double> logits(3, Shape3::cube(4));
    Rng rng(500 + seed);
    std::normal_distribution<double> n(0.0, 1.5);
    for (auto& v : logits.values()) v = n(rng);
    const auto p = nn::softmax_forward(logits);
    const auto g = one_hot<double>(lodseg::testing::random_labels(Shape3::cube(4), ClassScheme::for_count(3), 900 + seed));
    Tensor<double> grad;
    dice_loss(p, g, true, &grad);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto plus = p, minus = p;
      plus.values()[i] += h;
      minus.values()[i] -= h;
      const double numeric = (dice_loss(plus, g) - dice_loss(minus, g)) / (2 * h);
      const double analytic = grad.values()[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-12}));
    }
  }
  return {worst < 1e-4, "max relative error " + fmt(worst, 3) + " over 20 instances"};
}

// ------------------------------------------------------------- 4
Outcome freeze_invariant() {
  TempDir dir("lodseg_acc");
  const auto net_cfg = nn::NetworkConfig::desk(7);
  const auto prior = nn::build<float>(net_cfg);
  nn::save_checkpoint(prior, dir / "prior.ckpt");
  train::DataSource d;
  d.corpus = "infant";
  d.scheme = "raw7";
  d.count = 2;
  d.val_count = 1;
  d.seed = 41;
  const auto data = train::load_data(d, net_cfg.input_shape);
  train::TrainConfig cfg;
  cfg.stage = train::Stage::infant_upper;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 10;
  cfg.lr_init = 3e-3;
  cfg.checkpoint_in = (dir / "prior.ckpt").string();
  const auto r = train::run_stage(cfg, net_cfg, data.train, data.val);
  std::size_t l0_changed = 0, l1_changed = 0, l0 = 0;
  for (std::size_t i = 0; i < prior.parameters.size(); ++i) {
    const bool same = r.state.parameters[i].value == prior.parameters[i].value;
    if (prior.parameters[i].level == nn::Level::level0) {
      ++l0;
      l0_changed += !same;
    } else {
      l1_changed += !same;
    }
  }
  return {r.log.front().steps == 10 && l0_changed == 0 && l1_changed > 0,
          "10 steps at 32^3, level-0 tensors changed " + std::to_string(l0_changed) + "/" + std::to_string(l0) +
              ", level-1 tensors changed " + std::to_string(l1_changed)};
}

// ------------------------------------------------------------- 5
Outcome lr_schedule() {
  const int patience = 5;
  train::PlateauScheduler s(5e-4, 0.25, patience, 1e-4);
  s.step(1.0);
  int reduced_at = -1;
  for (int e = 1; e <= 2 * patience && reduced_at < 0; ++e)
    if (s.step(1.0)) reduced_at = e;
  return {reduced_at == patience && s.lr() == 1.25e-4,
          "reduced after " + std::to_string(reduced_at) + " flat epochs to lr " + fmt(s.lr())};
}

// ------------------------------------------------------------- 6
struct Overfit {
  nn::Network net;
  std::vector<Sample> samples;
  double dice = 0.0;
  int steps = 0;
};

Overfit overfit_model() {
  const auto net_cfg = nn::NetworkConfig::desk(4);
  train::DataSource d;
  d.corpus = "skullstripped";
  d.scheme = "ss4";
  d.count = 1;
  d.val_count = 0;
  d.seed = 2024;
  auto data = train::load_data(d, net_cfg.input_shape);
  train::TrainConfig cfg;
  cfg.stage = train::Stage::adult_prior;
  cfg.epochs = 20;
  cfg.steps_per_epoch = 10;
  cfg.lr_init = 3e-3;
  cfg.plateau_patience = 20;
  cfg.seed = 6;
  cfg.augmentation = augment::AugmentationSpec::disabled();
  const auto r = train::run_stage(cfg, net_cfg, data.train, data.train);
  Overfit o{r.state, data.train, 0.0, 0};
  for (const auto& rec : r.log) o.steps += rec.steps;
  const auto& s = data.train.front();
  o.dice = dice_coefficient(eval::infer_volume(o.net, s.image, s.labels.scheme), s.labels, s.labels.scheme, false).mean;
  return o;
}

Outcome overfit(const Overfit& o) {
  return {o.dice > 0.95 && o.steps <= 200,
          "foreground mean Dice " + fmt(o.dice, 4) + " after " + std::to_string(o.steps) + " steps (32^3, C=4)"};
}

// ------------------------------------------------------------- 7
Outcome augment_statistics() {
  using namespace augment;
  const auto spec = AugmentationSpec::table_default();
  Rng rng(77);
  const int n = 10000;
  std::map<std::string, int> hits;
  int nonempty = 0, with_inhom = 0;
  for (int i = 0; i < n; ++i) {
    const auto plan = sample_plan(spec, rng);
    nonempty += !plan.empty();
    for (const auto& t : plan) {
      ++hits[t.name];
      with_inhom += t.name == "inhomogeneity";
    }
  }
  bool ok = with_inhom == nonempty;
  double geo_worst = 0, noise_worst = 0;
  for (const auto& r : spec.geometric) geo_worst = std::max(geo_worst, std::abs(hits[r.name] / double(n) - 0.3));
  for (const auto& r : spec.noise) noise_worst = std::max(noise_worst, std::abs(hits[r.name] / double(n) - 0.1));
  ok = ok && geo_worst <= 0.02 && noise_worst <= 0.01;
  return {ok, "geometric max dev " + fmt(geo_worst, 3) + ", noise max dev " + fmt(noise_worst, 3) +
                  ", inhomogeneity in " + std::to_string(with_inhom) + "/" + std::to_string(nonempty) + " non-empty plans"};
}

// ------------------------------------------------------------- 8
Outcome geometric_pairing() {
  using namespace augment;
  const Shape3 s = Shape3::cube(96);
  const auto spec = AugmentationSpec::table_default();
  Rng rng(8080);
  double worst = 1.0;
  bool grew = false;
  for (int trial = 0; trial < 50; ++trial) {
    const double r = uniform(rng, 24, 36);
    const auto l = lodseg::testing::ball_labels(s, uniform(rng, 42, 54), uniform(rng, 42, 54), uniform(rng, 42, 54), r);
    Volume img(s, Affine::Identity());
    for (std::size_t i = 0; i < l.data.size(); ++i) img.data[i] = static_cast<float>(l.data[i]);
    Plan plan;
    for (const auto& row : spec.geometric)
      if (uniform(rng, 0, 1) < 0.5 || plan.empty())
        plan.push_back({row.name, Group::geometric, augment::detail::resolve(row, rng), rng()});
    const auto out = apply_plan(img, &l, plan);
    LabelMap masked(s, Affine::Identity(), l.scheme);
    for (std::size_t i = 0; i < l.data.size(); ++i) masked.data[i] = out.image.data[i] >= 0.5f ? 1 : 0;
    worst = std::min(worst, dice_coefficient(masked, *out.labels, l.scheme, false).mean);
    const auto before = l.value_set();
    for (auto x : out.labels->value_set()) grew |= !before.count(x);
  }
  return {worst > 0.98 && !grew, "50 phantoms at 96^3, min Dice " + fmt(worst, 5) + ", label sets grew: " + (grew ? "yes" : "no")};
}

// ------------------------------------------------------------- 9
Outcome motion_simulator() {
  const auto v =
      synth::make_phantom(synth::Corpus::adult, Shape3::cube(32), ClassScheme::raw7(), 99, "motion").image;
  double identity = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    motion::MotionSpec spec;
    spec.alpha = 0.0;
    spec.seed = seed;
    const auto out = motion::simulate_motion(v, spec);
    for (std::size_t i = 0; i < v.data.size(); ++i)
      identity = std::max(identity, static_cast<double>(std::abs(out.data[i] - v.data[i])));
  }
  std::vector<double> mse;
  for (double alpha : {0.5, 1.0, 2.0}) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      motion::MotionSpec spec;
      spec.alpha = alpha;
      spec.seed = seed;
      const auto out = motion::simulate_motion(v, spec);
      double s = 0;
      for (std::size_t i = 0; i < v.data.size(); ++i) s += double(out.data[i] - v.data[i]) * double(out.data[i] - v.data[i]);
      total += s / static_cast<double>(v.data.size());
    }
    mse.push_back(total / 20);
  }
  return {identity < 1e-5 && mse[0] < mse[1] && mse[1] < mse[2],
          "alpha=0 max diff " + fmt(identity, 3) + ", MSE " + fmt(mse[0], 4) + " < " + fmt(mse[1], 4) + " < " + fmt(mse[2], 4)};
}

// ------------------------------------------------------------- 10
Outcome conformance() {
  Affine oblique = Affine::Identity();
  const Eigen::Matrix3d rot = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  oblique.topLeftCorner<3, 3>() = rot * Eigen::Vector3d(1.2, 0.9, 1.5).asDiagonal();
  oblique.topRightCorner<3, 1>() = Eigen::Vector3d(-20, -25, -18);
  const ConformOptions lin{1.0, Shape3::cube(40), Interp::linear}, near{1.0, Shape3::cube(40), Interp::nearest};
  const auto v = lodseg::testing::random_volume({33, 37, 27}, 5, oblique);
  const auto once = conform(v, lin), twice = conform(once, lin);
  double lin_diff = 0;
  for (std::size_t i = 0; i < once.data.size(); ++i)
    lin_diff = std::max(lin_diff, static_cast<double>(std::abs(once.data[i] - twice.data[i])));
  const auto l = lodseg::testing::random_labels({33, 37, 27}, ClassScheme::raw7(), 6, oblique);
  const auto l1 = conform(l, near);
  const bool near_exact = conform(l1, near).data == l1.data;

  // Asymmetric phantoms: one marker voxel at a known world point, under
  // every axis permutation and flip of the source grid.
  int orientations = 0, correct = 0;
  const Eigen::Vector3d marker_world(9.0, -6.0, 4.0);
  std::array<int, 3> perm = {0, 1, 2};
  do {
    for (int flips = 0; flips < 8; ++flips) {
      Affine a = Affine::Zero();
      a(3, 3) = 1.0;
      for (int ax = 0; ax < 3; ++ax) a(perm[static_cast<std::size_t>(ax)], ax) = (flips >> ax & 1) ? -1.0 : 1.0;
      const Eigen::Vector3d center_idx(15, 15, 15);
      a.topRightCorner<3, 1>() = -a.topLeftCorner<3, 3>() * center_idx;
      Volume src(Shape3::cube(31), a, 0.0f);
      const Eigen::Vector3d idx = a.topLeftCorner<3, 3>().inverse() * (marker_world - a.topRightCorner<3, 1>());
      src.at(static_cast<int>(std::lround(idx.x())), static_cast<int>(std::lround(idx.y())),
             static_cast<int>(std::lround(idx.z()))) = 1.0f;
      const auto out = conform(src, ConformOptions{1.0, Shape3::cube(31), Interp::nearest});
      const Eigen::Vector4d o = out.affine.inverse() * marker_world.homogeneous();
      const int i = static_cast<int>(std::lround(o.x())), j = static_cast<int>(std::lround(o.y())),
                k = static_cast<int>(std::lround(o.z()));
      float total = 0;
      for (float x : out.data) total += x;
      ++orientations;
      correct += orientation_code(out.affine) == "RAS" && out.at(i, j, k) == 1.0f && total == 1.0f;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {lin_diff <= 1e-6 && near_exact && correct == orientations,
          "linear idempotence " + fmt(lin_diff, 3) + ", nearest exact " + (near_exact ? "yes" : "no") + ", orientations " +
              std::to_string(correct) + "/" + std::to_string(orientations)};
}

// ------------------------------------------------------------- 11
Outcome robustness(const Overfit& o) {
  const std::vector<double> alphas = {0.0, 0.5, 1.0, 2.0, 4.0};
  const auto table = eval::robustness_sweep(o.net, o.samples, alphas, {1, 2, 3, 4});
  const auto plain = eval::plain_row(o.net, o.samples, false);
  const double diff = std::abs(table.rows.front().mean - plain.mean);
  const double rho = eval::alpha_trend(table);
  std::string means;
  for (const auto& r : table.rows) means += (means.empty() ? "" : " ") + fmt(r.mean, 4);
  return {diff <= 1e-5 && rho <= 0.0,
          "|alpha0 - plain| " + fmt(diff, 3) + ", spearman " + fmt(rho, 4) + ", mean Dice by alpha [" + means + "]"};
}

// ------------------------------------------------------------- 12
Outcome surfaces() {
  const auto sphere = lodseg::testing::ball_labels(Shape3::cube(32), 15.5, 15.5, 15.5, 10.0);
  const auto m = eval::extract_surface(sphere, "foreground");
  const double analytic = 4.0 * M_PI * 100.0;
  const double rel = std::abs(m.area() - analytic) / analytic;
  bool watertight = m.watertight();
  int solids = 1;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto l = synth::make_phantom(synth::Corpus::skullstripped, Shape3::cube(32), ClassScheme::skullstripped4(), seed, "s").labels;
    for (const char* target : {"white_matter", "inner_gm", "outer_gm"}) {
      watertight = watertight && eval::extract_surface(l, target).watertight();
      ++solids;
    }
  }
  return {rel <= 0.05 && watertight,
          "sphere area ratio " + fmt(m.area() / analytic, 4) + ", watertight " + std::to_string(solids) + " solids: " +
              (watertight ? "yes" : "no")};
}

// ------------------------------------------------------------- 13
int cli(std::vector<std::string> args) {
  args.insert(args.begin(), {"lodseg", "--log-level", "error"});
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

Outcome pipeline_replay() {
  TempDir dir("lodseg_acc");
  {
    std::ofstream cfg(dir / "pipeline.ini");
    cfg << "[run]\npipeline = raw\nseed = 13\nout_dir = " << (dir / "run").string() << "\n\n"
        << "[network]\npreset = desk\ninput_shape = 32\n\n"
        << "[stage.adult_prior]\ndata = adult\nepochs = 2\nlr_init = 0.003\n\n"
        << "[stage.infant_upper]\ndata = infant\nepochs = 2\nlr_init = 0.003\n\n"
        << "[data.adult]\nsource = synthetic\ncorpus = adult\nscheme = raw7\ncount = 2\nval_count = 1\n\n"
        << "[data.infant]\nsource = synthetic\ncorpus = infant\nscheme = raw7\ncount = 2\nval_count = 1\n";
  }
  if (cli({"train", "--config", (dir / "pipeline.ini").string()}) != 0) return {false, "initial run failed"};
  const auto first = read_json(dir / "run" / "train_summary.json");

  fs::remove(dir / "run" / "stage_infant_upper.ckpt");
  if (cli({"train", "--config", (dir / "pipeline.ini").string(), "--resume"}) != 0) return {false, "resume failed"};
  const auto resumed = read_json(dir / "run" / "train_summary.json");
  const bool resume_ok = resumed.at("resumed") == nlohmann::json::array({"adult_prior"}) &&
                         resumed.at("final_val_loss").get<double>() == first.at("final_val_loss").get<double>();

  if (cli({"replay", (dir / "run" / "manifest.json").string(), "--out", (dir / "replay").string()}) != 0)
    return {false, "replay failed"};
  const auto replayed = read_json(dir / "replay" / "train_summary.json");
  const double a = first.at("final_val_loss"), b = replayed.at("final_val_loss");
  std::uint64_t ba, bb;
  std::memcpy(&ba, &a, sizeof a);
  std::memcpy(&bb, &b, sizeof b);
  return {resume_ok && ba == bb,
          "final val loss " + fmt(a, 17) + ", resume from stage 1 " + (resume_ok ? "ok" : "mismatch") + ", replay " +
              (ba == bb ? "bit-identical" : "differs (" + fmt(b, 17) + ")")};
}

}  // namespace

int main() {
  log::set_level(log::Level::error);
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::cout << "criterion " << id << " " << name << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << "; "
              << fmt(secs, 3) << " s)" << std::endl;
  };
  std::optional<Overfit> model;
  report(1, "parameter-count", parameter_count);
  report(2, "dice-oracle", dice_oracle);
  report(3, "dice-gradient", dice_gradient);
  report(4, "freeze-invariant", freeze_invariant);
  report(5, "lr-schedule", lr_schedule);
  report(6, "overfit", [&] {
    model = overfit_model();
    return overfit(*model);
  });
  report(7, "augment-statistics", augment_statistics);
  report(8, "geometric-pairing", geometric_pairing);
  report(9, "motion-simulator", motion_simulator);
  report(10, "conformance", conformance);
  report(11, "robustness-sweep", [&] {
    if (!model) return Outcome{false, "no model from criterion 6"};
    return robustness(*model);
  });
  report(12, "surface-extraction", surfaces);
  report(13, "pipeline-replay", pipeline_replay);
  std::cout << (failures == 0 ? "all criteria PASS" : std::to_string(failures) + " criteria FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
