#ifndef LODSEG_TRAIN_CONFIG_HPP
#define LODSEG_TRAIN_CONFIG_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "lodseg/augment/spec.hpp"
#include "lodseg/core/error.hpp"
#include "lodseg/nn/lod_net.hpp"

namespace lodseg::train {

enum class Stage { adult_prior, infant_upper, skullstripped_upper, finetune };

inline std::string to_string(Stage s) {
  switch (s) {
    case Stage::adult_prior: return "adult_prior";
    case Stage::infant_upper: return "infant_upper";
    case Stage::skullstripped_upper: return "skullstripped_upper";
    default: return "finetune";
  }
}

inline Stage parse_stage(const std::string& s) {
  if (s == "adult_prior") return Stage::adult_prior;
  if (s == "infant_upper") return Stage::infant_upper;
  if (s == "skullstripped_upper") return Stage::skullstripped_upper;
  if (s == "finetune") return Stage::finetune;
  throw ConfigError("unknown training stage \"" + s +
                    "\" (expected adult_prior, infant_upper, skullstripped_upper, finetune)");
}

// Stages that start from an existing network.
inline bool is_transfer(Stage s) { return s != Stage::adult_prior; }

struct TrainConfig {
  Stage stage = Stage::adult_prior;
  int epochs = 100;
  double lr_init = 5e-4;
  double lr_factor = 0.25;
  int plateau_patience = 5;
  double plateau_threshold = 1e-4;
  int batch_size = 1;
  int steps_per_epoch = 0;  // 0: one pass over the training set
  std::optional<nn::LevelSet> frozen_levels;  // unset: stage default
  augment::AugmentationSpec augmentation = augment::AugmentationSpec::table_default();
  std::string checkpoint_in;
  std::string checkpoint_out;  // best-validation checkpoint
  std::string log_path;        // JSON lines
  std::uint64_t seed = 0;
  bool include_background = true;
  int workers = 1;

  // {0} for the upper-level and finetune stages, nothing for the prior.
  nn::LevelSet effective_frozen() const {
    if (frozen_levels) return *frozen_levels;
    if (stage == Stage::adult_prior) return {};
    return {nn::Level::level0};
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(lr_init > 0.0)) throw ConfigError("train: lr_init must be > 0");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) throw ConfigError("train: lr_factor must be in (0,1)");
    if (plateau_patience < 1) throw ConfigError("train: plateau_patience must be >= 1");
    if (!(plateau_threshold >= 0.0)) throw ConfigError("train: plateau_threshold must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (steps_per_epoch < 0) throw ConfigError("train: steps_per_epoch must be >= 0");
    if (workers < 1) throw ConfigError("train: workers must be >= 1");
    if ((stage == Stage::infant_upper || stage == Stage::skullstripped_upper) &&
        !effective_frozen().count(nn::Level::level0)) {
      throw ConfigError("train: stage " + to_string(stage) + " requires level 0 to be frozen");
    }
    augmentation.validate();
  }
};

struct TrainLogRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::map<std::string, double> val_dice_per_class;
  double val_dice_mean = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
  int steps = 0;
  bool best = false;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"val_loss", val_loss},
            {"val_dice_per_class", val_dice_per_class},
            {"val_dice_mean", val_dice_mean},
            {"lr", lr},
            {"wall_time_s", wall_time_s},
            {"steps", steps},
            {"best", best}};
  }
};

// Reduce-on-plateau: an epoch improves when val < best - threshold; after
// `patience` consecutive non-improving epochs lr is multiplied by `factor`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double threshold)
      : lr_(lr), factor_(factor), patience_(patience), threshold_(threshold) {}

  // Returns true when this observation triggered a reduction.
  bool step(double val_loss) {
    if (val_loss < best_ - threshold_) {
      best_ = val_loss;
      bad_ = 0;
      return false;
    }
    if (++bad_ >= patience_) {
      lr_ *= factor_;
      bad_ = 0;
      ++reductions_;
      return true;
    }
    return false;
  }

  double lr() const { return lr_; }
  int reductions() const { return reductions_; }
  int bad_epochs() const { return bad_; }

 private:
  double lr_, factor_;
  int patience_;
  double threshold_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
  int reductions_ = 0;
};

}  // namespace lodseg::train

#endif  // LODSEG_TRAIN_CONFIG_HPP
