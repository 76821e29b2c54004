#include "foulseg/segnet/loss.hpp"

#include <algorithm>
#include <cmath>

#include "foulseg/error.hpp"

namespace foulseg::nn {

template <typename T>
LossReport sample_loss(const T* probs, std::size_t pixels, std::span<const std::uint8_t> labels, T* dprobs,
                       double scale) {
  if (labels.size() != pixels) throw Error(ErrorCode::ShapeMismatch, "probabilities and mask differ in size");
  LossReport report;
  std::array<double, kNumClasses> intersection{};
  std::array<double, kNumClasses> union_sum{};
  std::size_t labeled = 0;
  double ce = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    const auto t = labels[i];
    if (t >= kNumClasses) continue;
    ++labeled;
    report.present_classes[t] = true;
    for (std::size_t c = 0; c < kNumClasses; ++c) union_sum[c] += probs[c * pixels + i];
    union_sum[t] += 1.0;
    intersection[t] += probs[static_cast<std::size_t>(t) * pixels + i];
    ce -= std::log(std::max<double>(probs[static_cast<std::size_t>(t) * pixels + i], kProbabilityFloor));
  }
  if (labeled == 0) throw Error(ErrorCode::NoLabeledPixels, "sample has no labeled pixels");

  int present = 0;
  for (bool p : report.present_classes) present += p ? 1 : 0;
  double ratio_sum = 0.0;
  std::array<double, kNumClasses> denom{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!report.present_classes[c]) continue;
    denom[c] = union_sum[c] + kDiceEpsilon;
    ratio_sum += intersection[c] / denom[c];
  }
  report.dice = 1.0 - 2.0 / present * ratio_sum;
  report.ce = ce / static_cast<double>(labeled);
  report.total = 0.5 * (report.dice + report.ce);

  if (dprobs) {
    std::fill(dprobs, dprobs + pixels * kNumClasses, T(0));
    const double dice_scale = 0.5 * scale * (-2.0 / present);
    const double ce_scale = 0.5 * scale / static_cast<double>(labeled);
    for (std::size_t i = 0; i < pixels; ++i) {
      const auto t = labels[i];
      if (t >= kNumClasses) continue;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        if (!report.present_classes[c]) continue;
        const double y = c == t ? 1.0 : 0.0;
        const double d = (y * denom[c] - intersection[c]) / (denom[c] * denom[c]);
        dprobs[c * pixels + i] += static_cast<T>(dice_scale * d);
      }
      const double p = probs[static_cast<std::size_t>(t) * pixels + i];
      if (p > kProbabilityFloor) dprobs[static_cast<std::size_t>(t) * pixels + i] += static_cast<T>(-ce_scale / p);
    }
  }
  return report;
}

namespace {

std::vector<double> to_channel_major(const ProbabilityField& probs, const SegmentationMask& mask) {
  if (probs.width != mask.width() || probs.height != mask.height()) {
    throw Error(ErrorCode::ShapeMismatch, "probability field and mask differ in size");
  }
  const std::size_t pixels = mask.size();
  std::vector<double> out(pixels * kNumClasses);
  for (std::size_t i = 0; i < pixels; ++i)
    for (std::size_t c = 0; c < kNumClasses; ++c) out[c * pixels + i] = probs.probs[i * kNumClasses + c];
  return out;
}

}  // namespace

LossReport combined_loss(const ProbabilityField& probs, const SegmentationMask& mask) {
  const auto planes = to_channel_major(probs, mask);
  return sample_loss<double>(planes.data(), mask.size(), mask.labels(), nullptr, 1.0);
}

double dice_loss(const ProbabilityField& probs, const SegmentationMask& mask) { return combined_loss(probs, mask).dice; }

double cross_entropy_loss(const ProbabilityField& probs, const SegmentationMask& mask) {
  return combined_loss(probs, mask).ce;
}

LossReport combined_loss(std::span<const ProbabilityField> probs, std::span<const SegmentationMask> masks) {
  if (probs.size() != masks.size() || probs.empty()) {
    throw Error(ErrorCode::LengthMismatch, "need equally many, non-zero probability fields and masks");
  }
  LossReport mean;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto r = combined_loss(probs[i], masks[i]);
    mean.total += r.total;
    mean.dice += r.dice;
    mean.ce += r.ce;
    for (std::size_t c = 0; c < kNumClasses; ++c) mean.present_classes[c] = mean.present_classes[c] || r.present_classes[c];
  }
  const auto n = static_cast<double>(probs.size());
  mean.total /= n;
  mean.dice /= n;
  mean.ce /= n;
  return mean;
}

template <typename T>
LossReport batch_loss_and_gradient(const Tensor<T>& logits, std::span<const SegmentationMask> masks,
                                   Tensor<T>* dlogits) {
  if (logits.c != kNumClasses || static_cast<std::size_t>(logits.n) != masks.size()) {
    throw Error(ErrorCode::ShapeMismatch, "logits batch does not match the masks");
  }
  const std::size_t pixels = logits.plane();
  if (dlogits) *dlogits = Tensor<T>(logits.n, logits.c, logits.h, logits.w);
  std::vector<T> probs(pixels * kNumClasses);
  std::vector<T> dprobs(dlogits ? pixels * kNumClasses : 0);
  const double scale = 1.0 / logits.n;

  LossReport mean;
  for (int s = 0; s < logits.n; ++s) {
    const auto& mask = masks[static_cast<std::size_t>(s)];
    if (mask.size() != pixels) throw Error(ErrorCode::ShapeMismatch, "mask does not match logits size");
    const T* z = logits.sample(s);
    for (std::size_t i = 0; i < pixels; ++i) {
      T mx = z[i];
      for (std::size_t c = 1; c < kNumClasses; ++c) mx = std::max(mx, z[c * pixels + i]);
      T sum = 0;
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const T e = std::exp(z[c * pixels + i] - mx);
        probs[c * pixels + i] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < kNumClasses; ++c) probs[c * pixels + i] /= sum;
    }
    const auto r = sample_loss<T>(probs.data(), pixels, mask.labels(), dlogits ? dprobs.data() : nullptr, scale);
    mean.total += r.total * scale;
    mean.dice += r.dice * scale;
    mean.ce += r.ce * scale;
    for (std::size_t c = 0; c < kNumClasses; ++c) mean.present_classes[c] = mean.present_classes[c] || r.present_classes[c];
    if (!dlogits) continue;
    T* dz = dlogits->sample(s);
    for (std::size_t i = 0; i < pixels; ++i) {
      T dot = 0;
      for (std::size_t c = 0; c < kNumClasses; ++c) dot += dprobs[c * pixels + i] * probs[c * pixels + i];
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        dz[c * pixels + i] = probs[c * pixels + i] * (dprobs[c * pixels + i] - dot);
      }
    }
  }
  return mean;
}

template LossReport sample_loss<float>(const float*, std::size_t, std::span<const std::uint8_t>, float*, double);
template LossReport sample_loss<double>(const double*, std::size_t, std::span<const std::uint8_t>, double*, double);
template LossReport batch_loss_and_gradient<float>(const Tensor<float>&, std::span<const SegmentationMask>,
                                                   Tensor<float>*);
template LossReport batch_loss_and_gradient<double>(const Tensor<double>&, std::span<const SegmentationMask>,
                                                    Tensor<double>*);

}  // namespace foulseg::nn
