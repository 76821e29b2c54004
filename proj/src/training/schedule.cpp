#include "foulseg/training/schedule.hpp"

#include <algorithm>
#include <limits>

#include "foulseg/error.hpp"

namespace foulseg {

PlateauSchedule::PlateauSchedule(double initial_lr, const ScheduleConfig& config)
    : config_(config),
      lr_(initial_lr),
      best_(std::numeric_limits<double>::infinity()),
      decay_reference_(std::numeric_limits<double>::infinity()) {
  if (!(initial_lr > 0) || !(config.decay_factor > 1) || !(config.lr_floor > 0) || config.patience < 1) {
    throw Error(ErrorCode::InvalidConfig, "schedule: rates must be positive, decay factor > 1, patience >= 1");
  }
}

PlateauSchedule::Step PlateauSchedule::observe(double val_loss) {
  Step s;
  s.lr_used = lr_;

  if (val_loss < best_) {
    best_ = val_loss;
    stop_wait_ = 0;
    s.improved = true;
  } else {
    ++stop_wait_;
  }

  if (val_loss < decay_reference_ - config_.improve_threshold) {
    decay_reference_ = val_loss;
    decay_wait_ = 0;
  } else if (++decay_wait_ >= config_.patience) {
    const double next = std::max(lr_ / config_.decay_factor, config_.lr_floor);
    s.decayed = next < lr_;
    lr_ = next;
    decay_wait_ = 0;
  }

  s.stop = stop_wait_ >= config_.patience;
  return s;
}

}  // namespace foulseg
