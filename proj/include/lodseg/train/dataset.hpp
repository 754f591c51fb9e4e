#ifndef LODSEG_TRAIN_DATASET_HPP
#define LODSEG_TRAIN_DATASET_HPP

// Training data sources.
//
//   synthetic  procedural phantoms (train + validation drawn from one seed)
//   dir        DIR/images/<id>.nii[.gz] paired with DIR/labels/<id>.nii[.gz];
//              volumes are conformed to the network grid and normalized.
//
// When LODSEG_CACHE names a directory, conformed volumes are cached there,
// keyed by source path, size, modification time and target grid.

#include <zlib.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lodseg/core/error.hpp"
#include "lodseg/core/log.hpp"
#include "lodseg/train/synthetic.hpp"
#include "lodseg/volume/conform.hpp"
#include "lodseg/volume/nifti.hpp"

namespace lodseg::train {

struct DataSource {
  std::string kind = "synthetic";  // synthetic | dir
  std::string corpus = "adult";
  int count = 4;
  int val_count = 1;
  std::uint64_t seed = 0;
  std::string path;
  std::string scheme = "ss4";
  double val_fraction = 0.2;

  void validate() const {
    if (kind != "synthetic" && kind != "dir") throw ConfigError("data: source must be synthetic or dir");
    ClassScheme::preset(scheme);
    if (kind == "synthetic") {
      synth::parse_corpus(corpus);
      if (count < 1) throw ConfigError("data: count must be >= 1 (got " + std::to_string(count) + ")");
      if (val_count < 0) throw ConfigError("data: val_count must be >= 0");
    } else {
      if (path.empty()) throw ConfigError("data: dir source needs a path");
      if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("data: val_fraction must be in [0,1)");
    }
  }
};

struct DataSplit {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

inline std::optional<std::filesystem::path> cache_dir() {
  const char* env = std::getenv("LODSEG_CACHE");
  if (!env || !*env) return std::nullopt;
  std::filesystem::path p(env);
  std::filesystem::create_directories(p);
  return p;
}

namespace detail {

inline std::string cache_key(const std::filesystem::path& src, const std::string& tag, Shape3 shape, double mm) {
  std::string key = std::filesystem::absolute(src).string() + "|" + tag + "|" + to_string(shape) + "|" +
                    std::to_string(mm) + "|" + std::to_string(std::filesystem::file_size(src)) + "|" +
                    std::to_string(std::filesystem::last_write_time(src).time_since_epoch().count());
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(key.data()), static_cast<uInt>(key.size()));
  return tag + "_" + std::to_string(crc) + "_" + std::to_string(key.size());
}

inline std::optional<std::filesystem::path> find_image(const std::filesystem::path& dir, const std::string& id) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    auto p = dir / (id + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return std::nullopt;
}

inline std::string strip_nifti_ext(const std::string& name) {
  for (const std::string ext : {".nii.gz", ".nii"})
    if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0)
      return name.substr(0, name.size() - ext.size());
  return {};
}

}  // namespace detail

// Conform to the network grid (linear) and normalize to [0,1].
inline Volume prepare_image(const Volume& v, Shape3 shape, double mm) {
  ConformOptions opt;
  opt.target_mm = mm;
  opt.target_shape = shape;
  return normalize_intensity(conform(v, opt));
}

inline LabelMap prepare_labels(const LabelMap& l, Shape3 shape, double mm) {
  ConformOptions opt;
  opt.target_mm = mm;
  opt.target_shape = shape;
  opt.interp = Interp::nearest;
  return conform(l, opt);
}

inline Volume load_prepared_image(const std::filesystem::path& p, Shape3 shape, double mm) {
  const auto cache = cache_dir();
  if (cache) {
    const auto c = *cache / (detail::cache_key(p, "img", shape, mm) + ".nii.gz");
    if (std::filesystem::exists(c)) return nifti::load_volume(c);
    auto v = prepare_image(nifti::load_volume(p), shape, mm);
    nifti::save_volume(v, c);
    return v;
  }
  return prepare_image(nifti::load_volume(p), shape, mm);
}

inline LabelMap load_prepared_labels(const std::filesystem::path& p, const ClassScheme& scheme, Shape3 shape,
                                     double mm) {
  const auto cache = cache_dir();
  if (cache) {
    const auto c = *cache / (detail::cache_key(p, "lbl_" + scheme.preset_name(), shape, mm) + ".nii.gz");
    if (std::filesystem::exists(c)) return nifti::load_labels(c, scheme);
    auto l = prepare_labels(nifti::load_labels(p, scheme), shape, mm);
    nifti::save_labels(l, c);
    return l;
  }
  return prepare_labels(nifti::load_labels(p, scheme), shape, mm);
}

// Sorted volume ids that have both an image and a label file.
inline std::vector<std::string> paired_ids(const std::filesystem::path& dir) {
  std::vector<std::string> ids;
  const auto images = dir / "images";
  if (!std::filesystem::is_directory(images)) throw IoError("data directory has no images/: " + dir.string());
  for (const auto& e : std::filesystem::directory_iterator(images)) {
    const std::string id = detail::strip_nifti_ext(e.path().filename().string());
    if (id.empty()) continue;
    if (detail::find_image(dir / "labels", id)) {
      ids.push_back(id);
    } else {
      log::warn("data: " + id + " has no label file; skipped");
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline DataSplit load_data(const DataSource& src, Shape3 shape, double mm = 1.0) {
  src.validate();
  const ClassScheme scheme = ClassScheme::preset(src.scheme);
  DataSplit out;
  if (src.kind == "synthetic") {
    const auto corpus = synth::parse_corpus(src.corpus);
    auto all = synth::make_corpus(corpus, src.count + src.val_count, shape, scheme, src.seed);
    out.train.assign(all.begin(), all.begin() + src.count);
    out.val.assign(all.begin() + src.count, all.end());
    return out;
  }
  const std::filesystem::path dir(src.path);
  const auto ids = paired_ids(dir);
  if (ids.empty()) throw ConfigError("data: no paired volumes under " + dir.string());
  // Seeded split over the sorted id list.
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng = make_rng(src.seed, {0x73706c6974ULL});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::ceil(src.val_fraction * static_cast<double>(ids.size())));
  std::vector<bool> is_val(ids.size(), false);
  for (std::size_t i = 0; i < n_val && i < order.size(); ++i) is_val[order[i]] = true;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Sample s;
    s.id = ids[i];
    s.image = load_prepared_image(*detail::find_image(dir / "images", ids[i]), shape, mm);
    s.labels = load_prepared_labels(*detail::find_image(dir / "labels", ids[i]), scheme, shape, mm);
    (is_val[i] ? out.val : out.train).push_back(std::move(s));
  }
  return out;
}

}  // namespace lodseg::train

#endif  // LODSEG_TRAIN_DATASET_HPP
