#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "glandseg/checkpoint.hpp"
#include "glandseg/config.hpp"
#include "glandseg/dataset.hpp"
#include "glandseg/losses.hpp"
#include "glandseg/network.hpp"
#include "glandseg/optimizer.hpp"

namespace glandseg {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One preprocessed training image before augmentation.
struct TrainingImage {
  Planes planes;
  BinaryMask target;
};

inline std::vector<TrainingImage> load_training_images(const DatasetIndex& index, const ExperimentConfig& cfg) {
  std::vector<TrainingImage> out;
  for (const auto& rec : index.split(Split::train))
    out.push_back({prepare_planes(io::read_rgb(rec.image), cfg), prepare_target(io::read_labels(rec.annotation), cfg)});
  return out;
}

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, std::vector<TrainingImage> images)
      : cfg_(cfg),
        images_(std::move(images)),
        spec_(cfg.augment_spec()),
        net_(cfg.network_config()),
        adam_(net_.parameters(), {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps}),
        rng_(detail::splitmix64(cfg.seed ^ 0x5eedba7c4ULL)) {
    cfg_.validate();
    if (images_.empty()) throw TrainingError("training set is empty");
    for (const auto& img : images_)
      if (img.planes.size() != input_channels(cfg_.input_mode))
        throw TrainingError("training image has the wrong number of input planes");
  }

  // Batches per pass over the augmented set.
  std::size_t batches_per_epoch() {
    if (epoch_batches_.empty()) plan_epoch();
    return epoch_batch_count_;
  }

  std::size_t total_steps() {
    return cfg_.max_steps ? cfg_.max_steps : cfg_.epochs * batches_per_epoch();
  }

  LossValues step() {
    if (cursor_ >= epoch_batches_.size()) plan_epoch();
    const auto& batch = epoch_batches_[cursor_++];

    std::vector<Planes> planes;
    std::vector<BinaryMask> masks;
    for (const auto& [img, aug] : batch) {
      const auto& src = images_[img];
      Planes p;
      BinaryMask m;
      for (const auto& plane : src.planes) {
        auto [pp, mm] = augment_one(plane, src.target, spec_, aug);
        p.push_back(std::move(pp));
        m = std::move(mm);
      }
      planes.push_back(std::move(p));
      masks.push_back(std::move(m));
    }
    std::vector<const Planes*> pp;
    std::vector<const BinaryMask*> mp;
    for (std::size_t i = 0; i < planes.size(); ++i) {
      pp.push_back(&planes[i]);
      mp.push_back(&masks[i]);
    }
    const Tensor x = stack_planes(pp);
    const Tensor truth = stack_masks(mp);
    const Tensor truth_coarse = downsample_target(truth, net_.config().coarse_tap);

    active_tape().clear();
    adam_.zero_grad();
    const auto out = net_.forward(x, Mode::train);
    auto loss = total_loss(cfg_.loss, truth, out.final, truth_coarse, out.coarse, cfg_.loss_options);
    ++step_;
    const auto& v = loss.values;
    for (double val : {v.bce, v.dice, v.accuracy, v.l_i, v.l_o, v.l_final})
      if (!std::isfinite(val)) {
        active_tape().clear();
        throw TrainingError("non-finite loss at step " + std::to_string(step_));
      }
    backward(loss.l_final);
    active_tape().clear();
    adam_.step();
    return loss.values;
  }

  std::uint64_t steps_done() const { return step_; }
  MiniLinkNet& network() { return net_; }
  const Adam& optimizer() const { return adam_; }
  const ExperimentConfig& config() const { return cfg_; }

  Checkpoint checkpoint() const {
    std::ostringstream rng;
    rng << rng_;
    return capture_checkpoint(cfg_, net_, &adam_, step_, rng.str());
  }

 private:
  using Item = std::pair<std::size_t, std::size_t>;  // (image, augmentation index)

  // Shuffles all (image, augmentation) pairs, groups them by spatial size and
  // cuts each group into batches; batch order is shuffled as well.
  void plan_epoch() {
    std::vector<Item> items;
    const std::size_t factor = spec_.expansion_factor();
    for (std::size_t i = 0; i < images_.size(); ++i)
      for (std::size_t a = 0; a < factor; ++a) items.emplace_back(i, a);
    std::shuffle(items.begin(), items.end(), rng_);

    std::map<std::pair<std::size_t, std::size_t>, std::vector<Item>> buckets;
    for (const auto& it : items) buckets[sample_shape(it)].push_back(it);
    epoch_batches_.clear();
    for (auto& [shape, bucket] : buckets)
      for (std::size_t b = 0; b < bucket.size(); b += cfg_.batch_size)
        epoch_batches_.emplace_back(bucket.begin() + static_cast<long>(b),
                                    bucket.begin() + static_cast<long>(std::min(bucket.size(), b + cfg_.batch_size)));
    std::shuffle(epoch_batches_.begin(), epoch_batches_.end(), rng_);
    epoch_batch_count_ = epoch_batches_.size();
    cursor_ = 0;
  }

  std::pair<std::size_t, std::size_t> sample_shape(const Item& it) const {
    const auto& t = images_[it.first].target;
    const auto& tf = spec_.transforms[it.second / spec_.crops.count()];
    const bool swap = ((tf.quarter_turns % 4) + 4) % 2 == 1;
    std::size_t rows = swap ? t.cols() : t.rows(), cols = swap ? t.rows() : t.cols();
    const auto rect = crop_rects(spec_.crops, rows, cols)[it.second % spec_.crops.count()];
    return {rect.height, rect.width};
  }

  ExperimentConfig cfg_;
  std::vector<TrainingImage> images_;
  AugmentSpec spec_;
  MiniLinkNet net_;
  Adam adam_;
  std::mt19937_64 rng_;
  std::vector<std::vector<Item>> epoch_batches_;
  std::size_t epoch_batch_count_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t step_ = 0;
};

inline constexpr const char* kTrainLogHeader = "step,bce,dice,accuracy,l_i,l_o,l_final";

inline std::string format_log_row(std::uint64_t step, const LossValues& v) {
  std::ostringstream os;
  os.precision(9);
  os << step << ',' << v.bce << ',' << v.dice << ',' << v.accuracy << ',' << v.l_i << ',' << v.l_o << ','
     << v.l_final;
  return os.str();
}

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::uint64_t steps = 0;
  std::vector<LossValues> history;
};

// Trains on the train split of cfg.data_dir; writes out_dir/train_log.csv,
// out_dir/checkpoint_step<N>.bin every checkpoint_every steps and
// out_dir/checkpoint.bin at the end.
inline TrainResult train(const ExperimentConfig& cfg,
                         const std::function<void(std::uint64_t, std::uint64_t, const LossValues&)>& progress = {}) {
  cfg.validate();
  const auto index = load_dataset(cfg.data_dir);
  if (index.count(Split::train) == 0) throw TrainingError(cfg.data_dir + ": dataset has no training images");
  Trainer trainer(cfg, load_training_images(index, cfg));

  const std::filesystem::path out = cfg.out_dir;
  std::filesystem::create_directories(out);
  TrainResult res;
  res.log = out / "train_log.csv";
  std::ofstream log(res.log);
  if (!log) throw TrainingError(res.log.string() + ": cannot open training log");
  log << kTrainLogHeader << '\n';

  const std::uint64_t total = trainer.total_steps();
  while (trainer.steps_done() < total) {
    const LossValues v = trainer.step();
    const auto s = trainer.steps_done();
    log << format_log_row(s, v) << '\n';
    res.history.push_back(v);
    if (progress) progress(s, total, v);
    if (cfg.checkpoint_every && s % cfg.checkpoint_every == 0 && s < total)
      save_checkpoint(out / ("checkpoint_step" + std::to_string(s) + ".bin"), trainer.checkpoint());
  }
  log.flush();
  res.checkpoint = out / "checkpoint.bin";
  save_checkpoint(res.checkpoint, trainer.checkpoint());
  res.steps = trainer.steps_done();
  return res;
}

}  // namespace glandseg
