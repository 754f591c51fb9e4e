#ifndef LODSEG_TRAIN_SYNTHETIC_HPP
#define LODSEG_TRAIN_SYNTHETIC_HPP

// Procedural head phantoms standing in for the adult, infant and
// skull-stripped corpora in desk-scale runs.
//
// Geometry lives on [-1,1]^3 (scaled by a per-subject head size): nested
// ellipsoids give brain / csf / gray / white matter, with a folded gray
// matter boundary; cerebellum, brainstem, ventricles and basal ganglia are
// small blobs. Tissues absent from the target scheme fall back to the
// nearest available class (ventricles -> csf, cerebellum -> gray_matter,
// brainstem -> white_matter, basal_ganglia -> gray_matter).

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/core/rng.hpp"
#include "lodseg/volume/class_scheme.hpp"
#include "lodseg/volume/volume.hpp"

namespace lodseg {

struct Sample {
  std::string id;
  Volume image;
  LabelMap labels;
};

namespace synth {

enum class Corpus { adult, infant, skullstripped };

inline Corpus parse_corpus(const std::string& s) {
  if (s == "adult") return Corpus::adult;
  if (s == "infant") return Corpus::infant;
  if (s == "skullstripped") return Corpus::skullstripped;
  throw ConfigError("unknown synthetic corpus \"" + s + "\" (expected adult, infant, skullstripped)");
}

inline const char* to_string(Corpus c) {
  switch (c) {
    case Corpus::adult: return "adult";
    case Corpus::infant: return "infant";
    default: return "skullstripped";
  }
}

namespace detail {

inline int class_for(const ClassScheme& s, const std::string& tissue) {
  static const std::map<std::string, std::string> fallback = {{"ventricles", "csf"},
                                                              {"cerebellum", "gray_matter"},
                                                              {"brainstem", "white_matter"},
                                                              {"basal_ganglia", "gray_matter"}};
  int c = s.index_of(tissue);
  if (c < 0) {
    auto it = fallback.find(tissue);
    if (it != fallback.end()) c = s.index_of(it->second);
  }
  if (c < 0) {
    // Generic schemes: spread tissues over the available channels.
    static const std::vector<std::string> order = {"csf", "gray_matter", "white_matter"};
    for (std::size_t i = 0; i < order.size(); ++i)
      if (order[i] == tissue || (fallback.count(tissue) && fallback.at(tissue) == order[i]))
        c = 1 + static_cast<int>(i) % (s.num_classes() - 1);
  }
  if (c < 0) c = 0;
  return c;
}

}  // namespace detail

// One subject. Intensities are in [0,1]; the affine is 1 mm isotropic.
inline Sample make_phantom(Corpus corpus, Shape3 shape, const ClassScheme& scheme, std::uint64_t seed,
                           const std::string& id = {}) {
  Rng rng = make_rng(seed, {0x7068616eULL, static_cast<std::uint64_t>(corpus)});
  const double size = (corpus == Corpus::infant ? 0.82 : 0.95) * uniform(rng, 0.92, 1.0);
  const Eigen::Vector3d radii(size * uniform(rng, 0.85, 0.95), size * uniform(rng, 0.95, 1.0),
                              size * uniform(rng, 0.85, 0.95));
  const Eigen::Vector3d center(uniform(rng, -0.04, 0.04), uniform(rng, -0.04, 0.04), uniform(rng, -0.04, 0.04));
  const double fold_amp = uniform(rng, 0.03, 0.06), fold_freq = uniform(rng, 5.0, 8.0);
  const double fold_phase = uniform(rng, 0.0, 6.28);
  const double wm_scale = uniform(rng, 0.58, 0.64);
  const double noise_sd = 0.02;

  // Tissue intensities: adult T1 contrast, infant close to isointense.
  std::map<std::string, double> tone = {{"background", 0.0},  {"scalp", 0.85},     {"csf", 0.12},
                                        {"ventricles", 0.1},  {"gray_matter", 0.48}, {"white_matter", 0.78},
                                        {"cerebellum", 0.58}, {"brainstem", 0.68},   {"basal_ganglia", 0.62}};
  if (corpus == Corpus::infant || corpus == Corpus::skullstripped) {
    tone["gray_matter"] = 0.52;
    tone["white_matter"] = 0.66;
    tone["basal_ganglia"] = 0.58;
  }

  Sample s;
  s.id = id.empty() ? std::string(to_string(corpus)) + "_" + std::to_string(seed) : id;
  const Affine affine = scaling_affine(1.0);
  s.image = Volume(shape, affine, 0.0f);
  s.labels = LabelMap(shape, affine, scheme);

  auto coord = [](int i, int n) { return 2.0 * (i + 0.5) / n - 1.0; };
  const double bias_a = uniform(rng, -0.1, 0.1), bias_b = uniform(rng, -0.1, 0.1);
  std::normal_distribution<double> noise(0.0, noise_sd);
  for (int k = 0; k < shape.z; ++k)
    for (int j = 0; j < shape.y; ++j)
      for (int i = 0; i < shape.x; ++i) {
        const Eigen::Vector3d p(coord(i, shape.x), coord(j, shape.y), coord(k, shape.z));
        const Eigen::Vector3d q = (p - center).cwiseQuotient(radii);
        const double r = q.norm();
        const double theta = std::atan2(q.y(), q.x()), phi = std::acos(std::clamp(q.z() / (r + 1e-12), -1.0, 1.0));
        const double fold = fold_amp * std::sin(fold_freq * theta + fold_phase) * std::sin(fold_freq * phi);
        std::string tissue = "background";
        const bool head = r < 1.0;
        if (head && corpus != Corpus::skullstripped && r >= 0.86) tissue = "scalp";
        if (r < 0.86) tissue = "csf";
        if (r < 0.78 + fold) tissue = "gray_matter";
        if (r < wm_scale + fold) tissue = "white_matter";
        // Blobs, all in the normalized head frame.
        auto in_blob = [&](double cx, double cy, double cz, double rx, double ry, double rz) {
          const double dx = (q.x() - cx) / rx, dy = (q.y() - cy) / ry, dz = (q.z() - cz) / rz;
          return dx * dx + dy * dy + dz * dz < 1.0;
        };
        if (in_blob(0.0, -0.45, -0.5, 0.45, 0.25, 0.22)) tissue = "cerebellum";
        if (in_blob(0.0, -0.1, -0.55, 0.12, 0.12, 0.3)) tissue = "brainstem";
        if (in_blob(-0.22, 0.05, 0.05, 0.12, 0.16, 0.12) || in_blob(0.22, 0.05, 0.05, 0.12, 0.16, 0.12))
          tissue = "basal_ganglia";
        if (in_blob(0.0, 0.05, 0.15, 0.08, 0.22, 0.1)) tissue = "ventricles";
        if (r >= 0.86) tissue = (head && corpus != Corpus::skullstripped) ? "scalp" : "background";

        const int cls = (tissue == "scalp") ? 0 : detail::class_for(scheme, tissue);
        s.labels.at(i, j, k) = static_cast<Label>(cls);
        double v = tone.at(tissue);
        if (tissue != "background") {
          v *= 1.0 + bias_a * p.x() + bias_b * p.z();
          v += noise(rng);
        }
        s.image.at(i, j, k) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return s;
}

inline std::vector<Sample> make_corpus(Corpus corpus, int count, Shape3 shape, const ClassScheme& scheme,
                                       std::uint64_t seed) {
  if (count <= 0) throw ConfigError("synthetic corpus needs a positive volume count");
  std::vector<Sample> out;
  for (int n = 0; n < count; ++n) {
    const std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(n)});
    out.push_back(make_phantom(corpus, shape, scheme, s,
                               std::string(to_string(corpus)) + "_" + std::to_string(seed) + "_" + std::to_string(n)));
  }
  return out;
}

}  // namespace synth
}  // namespace lodseg

#endif  // LODSEG_TRAIN_SYNTHETIC_HPP
