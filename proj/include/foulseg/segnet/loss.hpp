#pragma once

#include <array>
#include <span>
#include <vector>

#include "foulseg/probability.hpp"
#include "foulseg/segnet/tensor.hpp"
#include "foulseg/taxonomy.hpp"

namespace foulseg::nn {

inline constexpr double kDiceEpsilon = 1e-6;
inline constexpr double kProbabilityFloor = 1e-12;

struct LossReport {
  double total = 0.0;  // 0.5 * (dice + ce)
  double dice = 0.0;
  double ce = 0.0;
  std::array<bool, kNumClasses> present_classes{};  // classes in the ground truth, C
};

/// 1 - (2/|C|) sum_{c in C} sum_i y_ic p_ic / (sum_i (y_ic + p_ic) + eps), labeled pixels only.
double dice_loss(const ProbabilityField& probs, const SegmentationMask& mask);
/// Mean over labeled pixels of -ln(max(p_true, 1e-12)).
double cross_entropy_loss(const ProbabilityField& probs, const SegmentationMask& mask);
LossReport combined_loss(const ProbabilityField& probs, const SegmentationMask& mask);
/// Per-sample losses averaged over the batch.
LossReport combined_loss(std::span<const ProbabilityField> probs, std::span<const SegmentationMask> masks);

/// Loss of one sample from a channel-major probability plane set (probs[c * pixels + i]).
/// When `dprobs` is non-null it receives d(total)/d(probs) scaled by `scale`.
template <typename T>
LossReport sample_loss(const T* probs, std::size_t pixels, std::span<const std::uint8_t> labels, T* dprobs,
                       double scale);

/// Softmax + combined loss for a logits batch; writes d(mean total)/d(logits) into `dlogits`.
template <typename T>
LossReport batch_loss_and_gradient(const Tensor<T>& logits, std::span<const SegmentationMask> masks,
                                   Tensor<T>* dlogits);

}  // namespace foulseg::nn
