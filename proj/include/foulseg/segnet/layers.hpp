#pragma once

#include <string>
#include <vector>

#include "foulseg/rng.hpp"
#include "foulseg/segnet/tensor.hpp"

namespace foulseg::nn {

// Each layer caches what its backward pass needs during forward(). backward()
// accumulates parameter gradients and returns the gradient w.r.t. the input
// (an empty tensor when need_input_grad is false).

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, bool bias);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad);

  void init_he(Rng& rng);
  void collect(std::vector<Parameter<T>*>& out);

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }

 private:
  void im2col(const T* x, int h, int w, T* cols) const;
  void col2im(const T* cols, int h, int w, T* x) const;
  bool pointwise() const noexcept { return kernel_ == 1 && stride_ == 1; }

  int in_ = 0;
  int out_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
  bool has_bias_ = false;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
  int out_h_ = 0;
  int out_w_ = 0;
  std::vector<T> cols_;
  std::vector<T> dcols_;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad);
  void collect(std::vector<Parameter<T>*>& out);

  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

 private:
  int channels_ = 0;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Parameter<T> running_mean_;
  Parameter<T> running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool batch_stats_ = true;
};

template <typename T>
class ReLU6 {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Tensor<T> output_;
};

/// Bilinear x2 enlargement, half-pixel centres, edge clamped.
template <typename T>
class Upsample2x {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  struct Tap {
    int i0, i1;
    T w1;
  };
  static std::vector<Tap> taps(int in, int out);
  int in_h_ = 0;
  int in_w_ = 0;
};

/// Squeeze-excitation: global average pool, bottleneck MLP (ReLU), sigmoid gate per channel.
template <typename T>
class ChannelAttention {
 public:
  ChannelAttention() = default;
  ChannelAttention(const std::string& name, int channels, int reduction);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy);

  void init_he(Rng& rng);
  void collect(std::vector<Parameter<T>*>& out);

 private:
  int channels_ = 0;
  int hidden_ = 0;
  Parameter<T> w1_, b1_, w2_, b2_;
  Tensor<T> input_;
  std::vector<T> pooled_, pre1_, hidden_act_, gate_;
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
/// Splits a gradient produced by concat_channels back into its two parts.
template <typename T>
void split_channels(const Tensor<T>& d, int first_channels, Tensor<T>& da, Tensor<T>& db);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

/// Convolution -> batch normalization -> ReLU6.
template <typename T>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(const std::string& name, int in_channels, int out_channels, int stride);

  Tensor<T> forward(const Tensor<T>& x, bool training);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad);

  void init_he(Rng& rng) { conv_.init_he(rng); }
  void collect(std::vector<Parameter<T>*>& out);

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  ReLU6<T> act_;
};

}  // namespace foulseg::nn
