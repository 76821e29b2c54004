#pragma once

namespace foulseg {

struct ScheduleConfig {
  double decay_factor = 5.0;
  double lr_floor = 1e-6;
  double improve_threshold = 1e-4;
  int patience = 30;
};

/// Plateau learning-rate decay plus early stopping, driven by one validation loss per epoch.
///
/// Decay: the reference best moves only when the loss beats it by more than improve_threshold;
/// after `patience` epochs without such a move, lr = max(lr / decay_factor, lr_floor) and the
/// counter restarts. Early stop: `patience` epochs without any strict improvement of the best loss.
class PlateauSchedule {
 public:
  struct Step {
    double lr_used = 0.0;
    bool improved = false;  // strict new best (checkpoint candidate)
    bool decayed = false;
    bool stop = false;
  };

  PlateauSchedule(double initial_lr, const ScheduleConfig& config);

  Step observe(double val_loss);

  double lr() const noexcept { return lr_; }
  double best() const noexcept { return best_; }
  int epochs_since_improvement() const noexcept { return stop_wait_; }

 private:
  ScheduleConfig config_;
  double lr_;
  double best_;
  double decay_reference_;
  int decay_wait_ = 0;
  int stop_wait_ = 0;
};

}  // namespace foulseg
