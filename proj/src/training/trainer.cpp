#include "foulseg/training/trainer.hpp"

#include <cmath>

#include "foulseg/config_util.hpp"
#include "foulseg/csv.hpp"
#include "foulseg/error.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/segnet/loss.hpp"
#include "foulseg/training/metrics.hpp"

namespace foulseg {

namespace {

using Snapshot = std::vector<std::vector<float>>;

Snapshot snapshot(nn::SegNet<float>& net) {
  Snapshot s;
  for (auto* p : net.parameters()) s.push_back(p->value);
  return s;
}

void restore(nn::SegNet<float>& net, const Snapshot& s) {
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = s[i];
}

nn::Tensor<float> to_batch(const std::vector<const RgbImage*>& images) {
  const int size = images.front()->width();
  nn::Tensor<float> batch(static_cast<int>(images.size()), 3, size, size);
  for (std::size_t i = 0; i < images.size(); ++i) nn::write_image(batch, static_cast<int>(i), *images[i]);
  return batch;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigError, "training: " + m); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(phase1_lr > 0) || !(phase2_lr > 0) || !(schedule.lr_floor > 0)) fail("learning rates must be > 0");
  if (!(schedule.decay_factor > 1)) fail("lr_decay_factor must be > 1");
  if (schedule.patience < 1) fail("patience_epochs must be >= 1");
  if (max_epochs_per_phase < 1) fail("max_epochs_per_phase must be >= 1");
  if (phase2_unfreeze_stages < 0 || phase2_unfreeze_stages > nn::kStages) fail("phase2_unfreeze_stages must be 0..5");
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  constexpr std::string_view s = "training";
  require_known_keys(j,
                     {"batch_size", "phase1_lr", "phase2_lr", "lr_decay_factor", "lr_floor", "improve_threshold",
                      "patience_epochs", "max_epochs_per_phase", "freeze_encoder_in_phase1", "phase2_unfreeze_stages",
                      "adam_beta1", "adam_beta2", "adam_epsilon", "seed", "augmentation"},
                     s);
  TrainConfig c;
  read_key(j, "batch_size", c.batch_size, s);
  read_key(j, "phase1_lr", c.phase1_lr, s);
  read_key(j, "phase2_lr", c.phase2_lr, s);
  read_key(j, "lr_decay_factor", c.schedule.decay_factor, s);
  read_key(j, "lr_floor", c.schedule.lr_floor, s);
  read_key(j, "improve_threshold", c.schedule.improve_threshold, s);
  read_key(j, "patience_epochs", c.schedule.patience, s);
  read_key(j, "max_epochs_per_phase", c.max_epochs_per_phase, s);
  read_key(j, "freeze_encoder_in_phase1", c.freeze_encoder_in_phase1, s);
  read_key(j, "phase2_unfreeze_stages", c.phase2_unfreeze_stages, s);
  read_key(j, "adam_beta1", c.adam.beta1, s);
  read_key(j, "adam_beta2", c.adam.beta2, s);
  read_key(j, "adam_epsilon", c.adam.epsilon, s);
  read_key(j, "seed", c.seed, s);
  if (j.contains("augmentation")) c.augmentation = AugmentConfig::from_json(j.at("augmentation"));
  c.validate();
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"phase1_lr", phase1_lr},
          {"phase2_lr", phase2_lr},
          {"lr_decay_factor", schedule.decay_factor},
          {"lr_floor", schedule.lr_floor},
          {"improve_threshold", schedule.improve_threshold},
          {"patience_epochs", schedule.patience},
          {"max_epochs_per_phase", max_epochs_per_phase},
          {"freeze_encoder_in_phase1", freeze_encoder_in_phase1},
          {"phase2_unfreeze_stages", phase2_unfreeze_stages},
          {"adam_beta1", adam.beta1},
          {"adam_beta2", adam.beta2},
          {"adam_epsilon", adam.epsilon},
          {"seed", seed},
          {"augmentation", augmentation.to_json()}};
}

Evaluation evaluate(nn::SegNet<float>& net, const std::vector<TrainingSample>& samples, int batch_size) {
  Evaluation ev;
  double loss_sum = 0.0;
  std::vector<SegmentationMask> truths;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const RgbImage*> images;
    std::vector<SegmentationMask> masks;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(&samples[i].image);
      masks.push_back(samples[i].mask);
    }
    const auto logits = net.forward(to_batch(images), false);
    loss_sum += nn::batch_loss_and_gradient<float>(logits, masks, nullptr).total * static_cast<double>(end - start);
    for (int s = 0; s < logits.n; ++s) ev.predictions.push_back(argmax_mask(nn::softmax_field(logits, s)));
    for (auto& m : masks) truths.push_back(std::move(m));
  }
  ev.loss = loss_sum / static_cast<double>(samples.size());
  ev.mean_iou = evaluate_metrics(ev.predictions, truths).mean.iou;
  return ev;
}

TrainResult train_two_phase(nn::SegNet<float>& net, const std::vector<TrainingSample>& train,
                            const std::vector<TrainingSample>& val, const TrainConfig& config,
                            const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw Error(ErrorCode::EmptySplit, "training split is empty");
  if (val.empty()) throw Error(ErrorCode::EmptySplit, "validation split is empty");

  std::vector<std::size_t> enumeration;
  for (std::size_t i = 0; i < train.size(); ++i)
    for (int r = 0; r <= train[i].extra; ++r) enumeration.push_back(i);

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  Snapshot best = snapshot(net);
  const auto params = net.parameters();

  const int phases = config.phase2_unfreeze_stages > 0 ? 2 : 1;
  for (int phase = 1; phase <= phases; ++phase) {
    if (phase == 1) {
      net.set_encoder_trainable_from(config.freeze_encoder_in_phase1 ? nn::kStages : 0);
    } else {
      restore(net, best);
      net.set_encoder_trainable_from(nn::kStages - config.phase2_unfreeze_stages);
    }
    Adam<float> adam(config.adam);
    clear_moments(params);
    PlateauSchedule schedule(phase == 1 ? config.phase1_lr : config.phase2_lr, config.schedule);

    for (int epoch = 1; epoch <= config.max_epochs_per_phase; ++epoch) {
      Rng order_rng(derive_seed(config.seed, {static_cast<std::uint64_t>(phase), static_cast<std::uint64_t>(epoch)}));
      auto order = enumeration;
      order_rng.shuffle(order);

      const double lr = schedule.lr();
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
        std::vector<RgbImage> images;
        std::vector<SegmentationMask> masks;
        for (std::size_t k = start; k < end; ++k) {
          RgbImage img = train[order[k]].image;
          SegmentationMask mask = train[order[k]].mask;
          Rng aug_rng(derive_seed(config.seed, {static_cast<std::uint64_t>(phase), static_cast<std::uint64_t>(epoch),
                                                static_cast<std::uint64_t>(k), 0xa9ULL}));
          apply_augmentations(img, mask, config.augmentation, aug_rng);
          if (labeled_count(class_histogram(mask)) == 0) mask = train[order[k]].mask;
          images.push_back(std::move(img));
          masks.push_back(std::move(mask));
        }
        std::vector<const RgbImage*> ptrs;
        for (const auto& im : images) ptrs.push_back(&im);

        net.zero_grad();
        const auto logits = net.forward(to_batch(ptrs), true);
        nn::Tensor<float> dlogits;
        const auto report = nn::batch_loss_and_gradient<float>(logits, masks, &dlogits);
        if (!std::isfinite(report.total)) {
          throw Error(ErrorCode::DivergedLoss, "non-finite training loss in phase " + std::to_string(phase) +
                                                   ", epoch " + std::to_string(epoch));
        }
        net.backward(dlogits);
        adam.step(params, lr);
        loss_sum += report.total * static_cast<double>(end - start);
      }

      const auto ev = evaluate(net, val, config.batch_size);
      if (!std::isfinite(ev.loss)) throw Error(ErrorCode::DivergedLoss, "non-finite validation loss");
      const auto step = schedule.observe(ev.loss);

      EpochRecord rec;
      rec.phase = phase;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.train_loss = loss_sum / static_cast<double>(order.size());
      rec.val_loss = ev.loss;
      rec.val_miou = ev.mean_iou;
      rec.decay_event = step.decayed;
      rec.stop_event = step.stop;
      result.log.push_back(rec);
      if (on_epoch) on_epoch(rec);

      if (ev.loss < result.best_val_loss) {
        result.best_val_loss = ev.loss;
        result.best_phase = phase;
        result.best_epoch = epoch;
        best = snapshot(net);
      }
      if (step.stop) break;
    }
  }
  restore(net, best);
  net.set_encoder_trainable_from(0);
  return result;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochRecord>& log) {
  csv::Table t;
  t.header = {"phase", "epoch", "lr", "train_loss", "val_loss", "val_mIoU", "decay_event", "stop_event"};
  for (const auto& r : log) {
    t.rows.push_back({std::to_string(r.phase), std::to_string(r.epoch), csv::format_number(r.lr),
                      csv::format_number(r.train_loss), csv::format_number(r.val_loss), csv::format_number(r.val_miou),
                      r.decay_event ? "1" : "0", r.stop_event ? "1" : "0"});
  }
  csv::write(path, t);
}

std::vector<EpochRecord> read_training_log(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  std::vector<EpochRecord> out;
  for (const auto& row : t.rows) {
    EpochRecord r;
    r.phase = std::stoi(t.get(row, "phase"));
    r.epoch = std::stoi(t.get(row, "epoch"));
    r.lr = std::stod(t.get(row, "lr"));
    r.train_loss = std::stod(t.get(row, "train_loss"));
    r.val_loss = std::stod(t.get(row, "val_loss"));
    r.val_miou = std::stod(t.get(row, "val_mIoU"));
    r.decay_event = t.get(row, "decay_event") == "1";
    r.stop_event = t.get(row, "stop_event") == "1";
    out.push_back(r);
  }
  return out;
}

}  // namespace foulseg
