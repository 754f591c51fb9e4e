#ifndef LODSEG_TRAIN_TRAINER_HPP
#define LODSEG_TRAIN_TRAINER_HPP

// Stage runner and the staged pipelines.
//
// Stage preparation applied to the incoming network:
//   adult_prior          fresh build unless a checkpoint is given
//   infant_upper         level 1 and head re-drawn, level 0 kept
//   skullstripped_upper  head swapped when the class count differs, level 1 re-drawn
//   finetune             unchanged
//
// Determinism: sample order, augmentation plans and dropout masks derive from
// (seed, epoch, position) only, so results do not depend on the worker count.

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lodseg/augment/transforms.hpp"
#include "lodseg/core/log.hpp"
#include "lodseg/losses/dice.hpp"
#include "lodseg/nn/adam.hpp"
#include "lodseg/nn/checkpoint.hpp"
#include "lodseg/nn/lod_net.hpp"
#include "lodseg/train/config.hpp"
#include "lodseg/train/dataset.hpp"
#include "lodseg/volume/conform.hpp"

namespace lodseg::train {

struct StageResult {
  nn::Network state;  // best-validation state
  std::vector<TrainLogRecord> log;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  double final_lr = 0.0;
  int plateaus = 0;
};

namespace detail {

struct Prepared {
  Tensor<float> input;
  Tensor<float> target;
};

inline Prepared prepare_sample(const Sample& s, const augment::AugmentationSpec& spec, std::uint64_t seed, int epoch,
                               std::size_t position) {
  Rng rng = make_rng(seed, {0x617567ULL, static_cast<std::uint64_t>(epoch), position});
  const auto plan = augment::sample_plan(spec, rng);
  if (plan.empty()) return {nn::to_input_tensor(s.image), one_hot<float>(s.labels)};
  auto a = augment::apply_plan(s.image, &s.labels, plan);
  return {nn::to_input_tensor(a.image), one_hot<float>(*a.labels)};
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first error.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Sample order for one epoch: concatenated seeded permutations.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::size_t length, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> out;
  for (std::uint64_t wrap = 0; out.size() < length; ++wrap) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    Rng rng = make_rng(seed, {0x6f72646572ULL, static_cast<std::uint64_t>(epoch), wrap});
    std::shuffle(p.begin(), p.end(), rng);
    for (std::size_t i = 0; i < n && out.size() < length; ++i) out.push_back(p[i]);
  }
  return out;
}

inline void check_samples(const std::vector<Sample>& set, const nn::NetworkConfig& c, const char* what) {
  for (const auto& s : set) {
    if (s.image.shape != c.input_shape || s.labels.shape != c.input_shape)
      throw ContractError(std::string(what) + " sample " + s.id + " has shape " + to_string(s.image.shape) +
                          ", network expects " + to_string(c.input_shape));
    if (s.labels.scheme.num_classes() != c.num_classes)
      throw ContractError(std::string(what) + " sample " + s.id + " has " +
                          std::to_string(s.labels.scheme.num_classes()) + " classes, network head has " +
                          std::to_string(c.num_classes));
  }
}

}  // namespace detail

struct Validation {
  double loss = 0.0;
  std::map<std::string, double> dice_per_class;
  double dice_mean = 0.0;
};

// Inference-mode loss and foreground Dice averaged over a set.
inline Validation validate_set(const nn::Network& net, const std::vector<Sample>& set, bool include_background,
                               int workers = 1) {
  Validation v;
  if (set.empty()) return v;
  std::vector<double> losses(set.size());
  std::vector<DiceResult> dices(set.size());
  detail::parallel_for(set.size(), workers, [&](std::size_t i) {
    const auto out = nn::forward(net, set[i].image);
    losses[i] = dice_loss(out.probs, one_hot<float>(set[i].labels), include_background);
    const auto pred = argmax(out.probs, set[i].image.affine, set[i].labels.scheme);
    dices[i] = dice_coefficient(pred, set[i].labels, set[i].labels.scheme);
  });
  for (std::size_t i = 0; i < set.size(); ++i) {
    v.loss += losses[i];
    v.dice_mean += dices[i].mean;
    for (const auto& [k, d] : dices[i].per_class) v.dice_per_class[k] += d;
  }
  const double n = static_cast<double>(set.size());
  v.loss /= n;
  v.dice_mean /= n;
  for (auto& [k, d] : v.dice_per_class) d /= n;
  return v;
}

// Applies the per-stage network preparation described above.
inline nn::Network prepare_stage_state(Stage stage, nn::Network state, int num_classes, std::uint64_t seed) {
  const std::uint64_t salt = derive_seed(seed, {0x7374616765ULL, static_cast<std::uint64_t>(stage)});
  switch (stage) {
    case Stage::infant_upper:
      if (state.config.num_classes != num_classes) {
        throw ContractError("stage infant_upper: network head has " + std::to_string(state.config.num_classes) +
                            " classes but the data has " + std::to_string(num_classes));
      }
      nn::reinitialize_level(state, nn::Level::level1, salt);
      nn::reinitialize_level(state, nn::Level::head, salt);
      break;
    case Stage::skullstripped_upper:
      if (state.config.num_classes != num_classes) state = nn::swap_head(state, num_classes);
      nn::reinitialize_level(state, nn::Level::level1, salt);
      break;
    default:
      if (state.config.num_classes != num_classes) {
        throw ContractError("stage " + to_string(stage) + ": network head has " +
                            std::to_string(state.config.num_classes) + " classes but the data has " +
                            std::to_string(num_classes) + " (swap_head first)");
      }
  }
  return state;
}

inline StageResult run_stage(const TrainConfig& cfg, const nn::NetworkConfig& net_cfg,
                             const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                             const nn::Network* init = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("stage " + to_string(cfg.stage) + ": training set is empty");
  if (val_set.empty()) throw ConfigError("stage " + to_string(cfg.stage) + ": validation set is empty");
  const int classes = train_set.front().labels.scheme.num_classes();

  nn::Network net;
  if (init) {
    net = *init;
  } else if (!cfg.checkpoint_in.empty()) {
    net = nn::load_checkpoint(cfg.checkpoint_in);
  } else if (is_transfer(cfg.stage)) {
    throw ConfigError("stage " + to_string(cfg.stage) + " needs checkpoint_in (a trained lower level)");
  } else {
    net = nn::build<float>(net_cfg);
  }
  net = prepare_stage_state(cfg.stage, std::move(net), classes, cfg.seed);
  net = nn::set_frozen(net, cfg.effective_frozen());
  detail::check_samples(train_set, net.config, "training");
  detail::check_samples(val_set, net.config, "validation");

  std::ofstream log_file;
  if (!cfg.log_path.empty()) {
    const std::filesystem::path lp(cfg.log_path);
    if (lp.has_parent_path()) std::filesystem::create_directories(lp.parent_path());
    log_file.open(lp, std::ios::trunc);
    if (!log_file) throw IoError("cannot write training log " + cfg.log_path);
  }
  auto emit = [&](const nlohmann::json& j) {
    if (log_file) log_file << j.dump() << "\n" << std::flush;
  };

  const auto t0 = std::chrono::steady_clock::now();
  nn::Adam<float> opt;
  PlateauScheduler sched(cfg.lr_init, cfg.lr_factor, cfg.plateau_patience, cfg.plateau_threshold);
  StageResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  const std::size_t n = train_set.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = cfg.steps_per_epoch > 0 ? static_cast<std::size_t>(cfg.steps_per_epoch) : (n + batch - 1) / batch;
  const std::size_t chunk = std::max<std::size_t>(batch, static_cast<std::size_t>(cfg.workers));
  const bool any_trainable = net.trainable_parameter_count() > 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = sched.lr();
    const auto order = detail::epoch_order(n, steps * batch, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t pos = 0;
    std::size_t step = 0;
    auto grads = nn::zero_gradients(net);
    std::size_t in_batch = 0;
    double batch_loss = 0.0;
    while (pos < order.size()) {
      const std::size_t count = std::min(chunk, order.size() - pos);
      std::vector<detail::Prepared> prepared(count);
      detail::parallel_for(count, cfg.workers, [&](std::size_t i) {
        prepared[i] = detail::prepare_sample(train_set[order[pos + i]], cfg.augmentation, cfg.seed, epoch, pos + i);
      });
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t dropout_seed = derive_seed(cfg.seed, {0x64726f70ULL, static_cast<std::uint64_t>(epoch), pos + i});
        nn::ForwardTrace<float> trace;
        auto probs = nn::forward_tensor<float>(net, prepared[i].input, {true, dropout_seed}, &trace);
        Tensor<float> grad;
        double loss;
        try {
          loss = dice_loss(probs, prepared[i].target, cfg.include_background, &grad);
        } catch (const NumericError& e) {
          emit({{"epoch", epoch}, {"step", step}, {"sample", train_set[order[pos + i]].id}, {"error", e.what()}});
          throw NumericError("stage " + to_string(cfg.stage) + ", epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (!std::isfinite(loss)) {
          emit({{"epoch", epoch}, {"step", step}, {"sample", train_set[order[pos + i]].id}, {"error", "non-finite loss"}});
          throw NumericError("stage " + to_string(cfg.stage) + ", epoch " + std::to_string(epoch) + ": non-finite loss");
        }
        if (batch > 1)
          for (auto& g : grad.values()) g /= static_cast<float>(batch);
        if (any_trainable) nn::backward(net, trace, grad, grads);
        batch_loss += loss;
        if (++in_batch == batch) {
          if (any_trainable) opt.step(net, grads, lr);
          loss_sum += batch_loss / static_cast<double>(batch);
          grads = nn::zero_gradients(net);
          in_batch = 0;
          batch_loss = 0.0;
          ++step;
        }
      }
      pos += count;
    }

    const auto val = validate_set(net, val_set, cfg.include_background, cfg.workers);
    TrainLogRecord rec;
    rec.epoch = epoch;
    rec.train_loss = step ? loss_sum / static_cast<double>(step) : 0.0;
    rec.val_loss = val.loss;
    rec.val_dice_per_class = val.dice_per_class;
    rec.val_dice_mean = val.dice_mean;
    rec.lr = lr;
    rec.steps = static_cast<int>(step);
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (val.loss < result.best_val_loss) {
      result.best_val_loss = val.loss;
      result.best_epoch = epoch;
      result.state = net;
      rec.best = true;
      if (!cfg.checkpoint_out.empty()) nn::save_checkpoint(net, cfg.checkpoint_out);
    }
    sched.step(val.loss);
    result.log.push_back(rec);
    emit(rec.to_json());
    log::info("stage " + to_string(cfg.stage) + " epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs) +
              " train_loss " + std::to_string(rec.train_loss) + " val_loss " + std::to_string(rec.val_loss) + " lr " +
              std::to_string(lr));
  }
  result.final_lr = sched.lr();
  result.plateaus = sched.reductions();
  return result;
}

// ---------------------------------------------------------------------------
// Pipelines

struct StagePlan {
  TrainConfig train;
  DataSource data;
};

struct PipelineConfig {
  nn::NetworkConfig network = nn::NetworkConfig::desk();
  std::optional<StagePlan> adult_prior;
  std::optional<StagePlan> infant_upper;
  std::optional<StagePlan> skullstripped_upper;
  std::optional<StagePlan> finetune;
  std::string prior_checkpoint;  // pretrained lower level, replaces adult_prior
  std::string out_dir;
  bool resume = false;
  double target_mm = 1.0;
};

struct PipelineResult {
  nn::Network state;
  std::vector<std::pair<std::string, StageResult>> stages;  // stages that ran
  std::vector<std::string> skipped;                         // resumed from checkpoint
  double final_val_loss = 0.0;
};

namespace detail {

// Re-throws the in-flight exception with the stage name prefixed, keeping its type.
[[noreturn]] inline void rethrow_tagged(const std::string& stage) {
  const std::string p = "stage " + stage + ": ";
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(p + e.what());
  } catch (const ContractError& e) {
    throw ContractError(p + e.what());
  } catch (const NumericError& e) {
    throw NumericError(p + e.what());
  } catch (const IoError& e) {
    throw IoError(p + e.what());
  } catch (const FormatError& e) {
    throw FormatError(p + e.what());
  } catch (const MigrationError& e) {
    throw MigrationError(p + e.what());
  } catch (const GeometryError& e) {
    throw GeometryError(p + e.what());
  } catch (const SanitationError& e) {
    throw SanitationError(p + e.what(), e.bad_voxels());
  } catch (const std::exception& e) {
    throw Error(p + e.what());
  }
}

struct PipelineState {
  std::filesystem::path file;
  nlohmann::json doc = nlohmann::json::object();

  explicit PipelineState(std::filesystem::path f) : file(std::move(f)) {
    if (std::filesystem::exists(file)) {
      std::ifstream in(file);
      doc = nlohmann::json::parse(in);
    }
  }
  bool done(const std::string& stage) const { return doc.contains(stage) && doc[stage].value("complete", false); }
  void mark(const std::string& stage, const std::filesystem::path& ckpt, double val_loss, int best_epoch) {
    doc[stage] = {{"complete", true}, {"checkpoint", ckpt.filename().string()}, {"best_val_loss", val_loss},
                  {"best_epoch", best_epoch}};
    const auto tmp = file.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << doc.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, file);
  }
};

// Runs one stage, or restores it when resuming and its checkpoint exists.
inline nn::Network run_or_resume(const std::string& name, const StagePlan& plan, const PipelineConfig& cfg,
                                 const nn::Network* init, PipelineState& state, PipelineResult& result) {
  const std::filesystem::path dir(cfg.out_dir);
  const auto ckpt = dir / ("stage_" + name + ".ckpt");
  try {
    if (cfg.resume && state.done(name) && std::filesystem::exists(ckpt)) {
      log::info("pipeline: stage " + name + " complete; resuming from " + ckpt.string());
      result.skipped.push_back(name);
      result.final_val_loss = state.doc[name].value("best_val_loss", 0.0);
      return nn::load_checkpoint(ckpt);
    }
    const auto data = load_data(plan.data, cfg.network.input_shape, cfg.target_mm);
    TrainConfig tc = plan.train;
    if (tc.log_path.empty()) tc.log_path = (dir / ("stage_" + name + ".jsonl")).string();
    tc.checkpoint_out = (dir / ("stage_" + name + ".best.ckpt")).string();
    auto r = run_stage(tc, cfg.network, data.train, data.val, init);
    nn::save_checkpoint(r.state, ckpt);
    state.mark(name, ckpt, r.best_val_loss, r.best_epoch);
    result.final_val_loss = r.best_val_loss;
    nn::Network out = r.state;
    result.stages.emplace_back(name, std::move(r));
    return out;
  } catch (...) {
    rethrow_tagged(name);
  }
}

}  // namespace detail

// adult_prior (or a supplied prior checkpoint) -> infant_upper.
inline PipelineResult run_pipeline_raw(const PipelineConfig& cfg) {
  if (!cfg.adult_prior && cfg.prior_checkpoint.empty())
    throw ConfigError("raw pipeline: stage 1 (adult_prior) or prior_checkpoint is required");
  if (!cfg.infant_upper) throw ConfigError("raw pipeline: stage 2 (infant_upper) is missing");
  if (cfg.out_dir.empty()) throw ConfigError("raw pipeline: out_dir is required");
  cfg.network.validate();
  if (cfg.adult_prior) {
    cfg.adult_prior->train.validate();
    cfg.adult_prior->data.validate();
  }
  cfg.infant_upper->train.validate();
  cfg.infant_upper->data.validate();

  std::filesystem::create_directories(cfg.out_dir);
  detail::PipelineState state(std::filesystem::path(cfg.out_dir) / "pipeline_state.json");
  PipelineResult result;
  nn::Network prior;
  if (cfg.adult_prior) {
    StagePlan p = *cfg.adult_prior;
    p.train.stage = Stage::adult_prior;
    prior = detail::run_or_resume("adult_prior", p, cfg, nullptr, state, result);
  } else {
    prior = nn::load_checkpoint(cfg.prior_checkpoint);
  }
  StagePlan p = *cfg.infant_upper;
  p.train.stage = Stage::infant_upper;
  result.state = detail::run_or_resume("infant_upper", p, cfg, &prior, state, result);
  return result;
}

// A: adult lower level + 4-class head; B: upper level; C: fine-tuning.
inline PipelineResult run_pipeline_skullstripped(const PipelineConfig& cfg) {
  if (!cfg.adult_prior && cfg.prior_checkpoint.empty())
    throw ConfigError("skull-stripped pipeline: adult_prior stage or prior_checkpoint is required");
  if (!cfg.skullstripped_upper) throw ConfigError("skull-stripped pipeline: stage skullstripped_upper is missing");
  if (!cfg.finetune) throw ConfigError("skull-stripped pipeline: stage finetune is missing");
  if (cfg.out_dir.empty()) throw ConfigError("skull-stripped pipeline: out_dir is required");
  cfg.network.validate();
  for (const auto* s : {&cfg.adult_prior, &cfg.skullstripped_upper, &cfg.finetune}) {
    if (!*s) continue;
    (*s)->train.validate();
    (*s)->data.validate();
  }

  std::filesystem::create_directories(cfg.out_dir);
  detail::PipelineState state(std::filesystem::path(cfg.out_dir) / "pipeline_state.json");
  PipelineResult result;
  nn::Network prior;
  if (cfg.adult_prior) {
    StagePlan p = *cfg.adult_prior;
    p.train.stage = Stage::adult_prior;
    prior = detail::run_or_resume("adult_prior", p, cfg, nullptr, state, result);
  } else {
    prior = nn::load_checkpoint(cfg.prior_checkpoint);
  }
  // Stage A: keep the lower level, replace the head.
  const int classes = ClassScheme::preset(cfg.skullstripped_upper->data.scheme).num_classes();
  nn::Network a;
  try {
    a = nn::swap_head(prior, classes);
  } catch (...) {
    detail::rethrow_tagged("A");
  }
  StagePlan b = *cfg.skullstripped_upper;
  b.train.stage = Stage::skullstripped_upper;
  const nn::Network after_b = detail::run_or_resume("skullstripped_upper", b, cfg, &a, state, result);
  StagePlan c = *cfg.finetune;
  c.train.stage = Stage::finetune;
  result.state = detail::run_or_resume("finetune", c, cfg, &after_b, state, result);
  return result;
}

}  // namespace lodseg::train

#endif  // LODSEG_TRAIN_TRAINER_HPP
