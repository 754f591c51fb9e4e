#ifndef LODSEG_MOTION_MOTION_SIM_HPP
#define LODSEG_MOTION_MOTION_SIM_HPP

// k-space motion artefacts.
//
// num_events rigid transforms are drawn with translation ~ N(0, (t_scale*alpha)^2)
// voxels and rotation ~ N(0, (r_scale*alpha)^2) degrees per axis. The
// phase-encode axis is split, in centered frequency order, into
// num_events + 1 contiguous bands at sorted uniform cut points. Band 0 comes
// from the untransformed volume and band i from the i-th moved copy. The
// composite spectrum is inverted and its magnitude clipped to [0,1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "lodseg/core/error.hpp"
#include "lodseg/core/fft.hpp"
#include "lodseg/core/rng.hpp"
#include "lodseg/volume/resample.hpp"
#include "lodseg/volume/volume.hpp"

namespace lodseg::motion {

struct MotionSpec {
  double alpha = 1.0;
  int num_events = 4;
  std::uint64_t seed = 0;
  double translation_scale = 2.0;  // voxels per unit alpha (std)
  double rotation_scale = 2.0;     // degrees per unit alpha (std)
  int phase_axis = -1;             // -1: drawn from the seed

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("motion: alpha must be >= 0");
    if (num_events < 1) throw ConfigError("motion: num_events must be >= 1");
    if (phase_axis < -1 || phase_axis > 2) throw ConfigError("motion: phase_axis must be -1, 0, 1 or 2");
    if (!(translation_scale >= 0.0) || !(rotation_scale >= 0.0)) throw ConfigError("motion: scales must be >= 0");
  }
};

struct MotionEvent {
  Eigen::Vector3d translation;
  Eigen::Vector3d degrees;
  int band_start = 0;  // centered position where this event's band begins
};

struct MotionPlan {
  int phase_axis = 0;
  std::vector<MotionEvent> events;
};

inline MotionPlan plan_motion(const MotionSpec& spec, Shape3 s) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {0x6d6f74696f6eULL});
  MotionPlan plan;
  plan.phase_axis = spec.phase_axis >= 0 ? spec.phase_axis : uniform_int(rng, 0, 2);
  const int n = s[plan.phase_axis];
  std::vector<int> cuts;
  for (int e = 0; e < spec.num_events; ++e) cuts.push_back(uniform_int(rng, 1, std::max(1, n - 1)));
  std::sort(cuts.begin(), cuts.end());
  for (int e = 0; e < spec.num_events; ++e) {
    MotionEvent ev;
    for (int a = 0; a < 3; ++a) ev.translation[a] = normal(rng, 0.0, 1.0) * spec.translation_scale * spec.alpha;
    for (int a = 0; a < 3; ++a) ev.degrees[a] = normal(rng, 0.0, 1.0) * spec.rotation_scale * spec.alpha;
    ev.band_start = cuts[static_cast<std::size_t>(e)];
    plan.events.push_back(ev);
  }
  return plan;
}

inline nlohmann::json plan_to_json(const MotionPlan& p) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : p.events)
    events.push_back({{"translation", {e.translation.x(), e.translation.y(), e.translation.z()}},
                      {"degrees", {e.degrees.x(), e.degrees.y(), e.degrees.z()}},
                      {"band_start", e.band_start}});
  return {{"phase_axis", p.phase_axis}, {"events", events}};
}

inline Volume simulate_motion(const Volume& v, const MotionSpec& spec, MotionPlan* plan_out = nullptr) {
  spec.validate();
  if (!all_finite(v.data)) throw SanitationError("simulate_motion: non-finite input", 0);
  const Shape3 s = v.shape;
  const MotionPlan plan = plan_motion(spec, s);
  if (plan_out) *plan_out = plan;
  const int axis = plan.phase_axis;
  const int n = s[axis];

  // band_of[f] = index of the copy that supplies frequency plane f.
  std::vector<int> band_of(static_cast<std::size_t>(n), 0);
  for (int f = 0; f < n; ++f) {
    const int pos = fft::centered_position(f, n);
    int b = 0;
    for (std::size_t e = 0; e < plan.events.size(); ++e)
      if (pos >= plan.events[e].band_start) b = static_cast<int>(e) + 1;
    band_of[static_cast<std::size_t>(f)] = b;
  }

  auto composite = fft::forward(v.data, s);
  for (std::size_t e = 0; e < plan.events.size(); ++e) {
    const int band = static_cast<int>(e) + 1;
    if (std::find(band_of.begin(), band_of.end(), band) == band_of.end()) continue;
    const auto& ev = plan.events[e];
    const auto m = rigid_about_center(s, ev.translation, ev.degrees);
    const auto moved = resample_affine(v.data, s, m, s, Interp::linear, 0.0f);
    const auto spectrum = fft::forward(moved, s);
    for (int k = 0; k < s.z; ++k)
      for (int j = 0; j < s.y; ++j)
        for (int i = 0; i < s.x; ++i) {
          const int idx[3] = {i, j, k};
          if (band_of[static_cast<std::size_t>(idx[axis])] != band) continue;
          const auto at = s.index(i, j, k);
          composite[at] = spectrum[at];
        }
  }
  const auto img = fft::inverse(std::move(composite), s);
  Volume out(s, v.affine, 0.0f);
  for (std::size_t i = 0; i < img.size(); ++i) out.data[i] = static_cast<float>(std::clamp(std::abs(img[i]), 0.0, 1.0));
  return out;
}

}  // namespace lodseg::motion

#endif  // LODSEG_MOTION_MOTION_SIM_HPP
