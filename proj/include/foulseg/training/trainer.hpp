#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "foulseg/image.hpp"
#include "foulseg/segnet/network.hpp"
#include "foulseg/taxonomy.hpp"
#include "foulseg/training/augment.hpp"
#include "foulseg/training/optimizer.hpp"
#include "foulseg/training/schedule.hpp"

namespace foulseg {

struct TrainConfig {
  int batch_size = 16;
  double phase1_lr = 1e-3;
  double phase2_lr = 1e-4;
  ScheduleConfig schedule;
  int max_epochs_per_phase = 300;
  /// Phase 1 trains the decoder only when true.
  bool freeze_encoder_in_phase1 = true;
  /// Deepest encoder stages released in phase 2; 0 skips phase 2.
  int phase2_unfreeze_stages = 2;
  AdamConfig adam;
  std::uint64_t seed = 0;
  AugmentConfig augmentation;

  void validate() const;
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// A tile at network input resolution. `extra` is the oversampling count n_i.
struct TrainingSample {
  std::string tile_id;
  RgbImage image;
  SegmentationMask mask;
  int extra = 0;
};

struct EpochRecord {
  int phase = 0;
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_miou = 0.0;
  bool decay_event = false;
  bool stop_event = false;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  double best_val_loss = 0.0;
  int best_phase = 0;
  int best_epoch = 0;
};

/// Two-phase schedule. On return the network holds the weights of the best validation epoch.
TrainResult train_two_phase(nn::SegNet<float>& net, const std::vector<TrainingSample>& train,
                            const std::vector<TrainingSample>& val, const TrainConfig& config,
                            const std::function<void(const EpochRecord&)>& on_epoch = {});

struct Evaluation {
  double loss = 0.0;
  double mean_iou = 0.0;
  std::vector<SegmentationMask> predictions;
};

/// Inference-mode loss and argmax predictions over a sample set.
Evaluation evaluate(nn::SegNet<float>& net, const std::vector<TrainingSample>& samples, int batch_size);

void write_training_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log);
std::vector<EpochRecord> read_training_log(const std::filesystem::path& path);

}  // namespace foulseg
