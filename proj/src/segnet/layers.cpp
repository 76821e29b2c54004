#include "foulseg/segnet/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "foulseg/error.hpp"

namespace foulseg::nn {

namespace {

template <typename T>
using MatrixR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatrixR<T>>;
template <typename T>
using ConstMap = Eigen::Map<const MatrixR<T>>;

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(kernel / 2),
      has_bias_(bias),
      weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
      bias_(bias ? Parameter<T>(name + ".bias", {out_channels}) : Parameter<T>()) {}

template <typename T>
void Conv2d<T>::init_he(Rng& rng) {
  const double fan_in = static_cast<double>(in_) * kernel_ * kernel_;
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : weight_.value) v = static_cast<T>(rng.normal() * std);
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
void Conv2d<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

template <typename T>
void Conv2d<T>::im2col(const T* x, int h, int w, T* cols) const {
  const std::size_t p = static_cast<std::size_t>(out_h_) * out_w_;
  for (int ci = 0; ci < in_; ++ci)
    for (int ky = 0; ky < kernel_; ++ky)
      for (int kx = 0; kx < kernel_; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(ci) * kernel_ + ky) * kernel_ + kx) * p;
        const T* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < out_h_; ++oy) {
          const int iy = oy * stride_ + ky - pad_;
          T* dst = row + static_cast<std::size_t>(oy) * out_w_;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w_, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w_; ++ox) {
            const int ix = ox * stride_ + kx - pad_;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void Conv2d<T>::col2im(const T* cols, int h, int w, T* x) const {
  const std::size_t p = static_cast<std::size_t>(out_h_) * out_w_;
  std::fill(x, x + static_cast<std::size_t>(in_) * h * w, T(0));
  for (int ci = 0; ci < in_; ++ci)
    for (int ky = 0; ky < kernel_; ++ky)
      for (int kx = 0; kx < kernel_; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(ci) * kernel_ + ky) * kernel_ + kx) * p;
        T* plane = x + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < out_h_; ++oy) {
          const int iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * out_w_;
          T* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w_; ++ox) {
            const int ix = ox * stride_ + kx - pad_;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  require(x.c == in_, "conv input channel mismatch");
  input_ = x;
  out_h_ = (x.h + 2 * pad_ - kernel_) / stride_ + 1;
  out_w_ = (x.w + 2 * pad_ - kernel_) / stride_ + 1;
  const int k = in_ * kernel_ * kernel_;
  const int p = out_h_ * out_w_;
  Tensor<T> y(x.n, out_, out_h_, out_w_);
  ConstMap<T> wmat(weight_.value.data(), out_, k);
  if (!pointwise()) cols_.resize(static_cast<std::size_t>(k) * p);
  for (int i = 0; i < x.n; ++i) {
    const T* cols = x.sample(i);
    if (!pointwise()) {
      im2col(x.sample(i), x.h, x.w, cols_.data());
      cols = cols_.data();
    }
    Map<T> ymat(y.sample(i), out_, p);
    ymat.noalias() = wmat * ConstMap<T>(cols, k, p);
    if (has_bias_) {
      for (int o = 0; o < out_; ++o) ymat.row(o).array() += bias_.value[static_cast<std::size_t>(o)];
    }
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  require(dy.c == out_ && dy.h == out_h_ && dy.w == out_w_ && dy.n == input_.n, "conv gradient shape mismatch");
  const int k = in_ * kernel_ * kernel_;
  const int p = out_h_ * out_w_;
  const bool weight_grad = weight_.trainable;
  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(input_.n, in_, input_.h, input_.w);
  if (!weight_grad && !need_input_grad) return dx;

  Map<T> dw(weight_.grad.data(), out_, k);
  ConstMap<T> wmat(weight_.value.data(), out_, k);
  if (!pointwise()) {
    cols_.resize(static_cast<std::size_t>(k) * p);
    dcols_.resize(static_cast<std::size_t>(k) * p);
  }
  for (int i = 0; i < input_.n; ++i) {
    ConstMap<T> dymat(dy.sample(i), out_, p);
    if (weight_grad) {
      const T* cols = input_.sample(i);
      if (!pointwise()) {
        im2col(input_.sample(i), input_.h, input_.w, cols_.data());
        cols = cols_.data();
      }
      dw.noalias() += dymat * ConstMap<T>(cols, k, p).transpose();
      if (has_bias_) {
        for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += dymat.row(o).sum();
      }
    }
    if (need_input_grad) {
      if (pointwise()) {
        Map<T>(dx.sample(i), k, p).noalias() = wmat.transpose() * dymat;
      } else {
        Map<T>(dcols_.data(), k, p).noalias() = wmat.transpose() * dymat;
        col2im(dcols_.data(), input_.h, input_.w, dx.sample(i));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels)
    : channels_(channels),
      gamma_(name + ".gamma", {channels}, T(1)),
      beta_(name + ".beta", {channels}, T(0)),
      running_mean_(name + ".running_mean", {channels}, T(0), true),
      running_var_(name + ".running_var", {channels}, T(1), true) {}

template <typename T>
void BatchNorm2d<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) {
  require(x.c == channels_, "batch norm channel mismatch");
  const std::size_t plane = x.plane();
  const double count = static_cast<double>(plane) * x.n;
  batch_stats_ = training;
  xhat_ = Tensor<T>(x.n, x.c, x.h, x.w);
  inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
  Tensor<T> y(x.n, x.c, x.h, x.w);
  for (int ch = 0; ch < channels_; ++ch) {
    const auto cidx = static_cast<std::size_t>(ch);
    double mean = 0.0;
    double var = 0.0;
    if (training) {
      for (int i = 0; i < x.n; ++i) {
        const T* src = x.channel(i, ch);
        for (std::size_t j = 0; j < plane; ++j) mean += src[j];
      }
      mean /= count;
      for (int i = 0; i < x.n; ++i) {
        const T* src = x.channel(i, ch);
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = src[j] - mean;
          var += d * d;
        }
      }
      var /= count;
      const double unbiased = count > 1 ? var * count / (count - 1) : var;
      running_mean_.value[cidx] = static_cast<T>((1 - kMomentum) * running_mean_.value[cidx] + kMomentum * mean);
      running_var_.value[cidx] = static_cast<T>((1 - kMomentum) * running_var_.value[cidx] + kMomentum * unbiased);
    } else {
      mean = running_mean_.value[cidx];
      var = running_var_.value[cidx];
    }
    const double inv_std = 1.0 / std::sqrt(var + kEpsilon);
    inv_std_[cidx] = static_cast<T>(inv_std);
    const T g = gamma_.value[cidx];
    const T b = beta_.value[cidx];
    const auto m = static_cast<T>(mean);
    const auto s = static_cast<T>(inv_std);
    for (int i = 0; i < x.n; ++i) {
      const T* src = x.channel(i, ch);
      T* xh = xhat_.channel(i, ch);
      T* dst = y.channel(i, ch);
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = (src[j] - m) * s;
        dst[j] = g * xh[j] + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  require(dy.same_shape(xhat_), "batch norm gradient shape mismatch");
  const std::size_t plane = dy.plane();
  const double count = static_cast<double>(plane) * dy.n;
  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(dy.n, dy.c, dy.h, dy.w);
  for (int ch = 0; ch < channels_; ++ch) {
    const auto cidx = static_cast<std::size_t>(ch);
    double dgamma = 0.0;
    double dbeta = 0.0;
    for (int i = 0; i < dy.n; ++i) {
      const T* g = dy.channel(i, ch);
      const T* xh = xhat_.channel(i, ch);
      for (std::size_t j = 0; j < plane; ++j) {
        dgamma += static_cast<double>(g[j]) * xh[j];
        dbeta += g[j];
      }
    }
    if (gamma_.trainable) {
      gamma_.grad[cidx] += static_cast<T>(dgamma);
      beta_.grad[cidx] += static_cast<T>(dbeta);
    }
    if (!need_input_grad) continue;
    const double scale = static_cast<double>(gamma_.value[cidx]) * inv_std_[cidx];
    for (int i = 0; i < dy.n; ++i) {
      const T* g = dy.channel(i, ch);
      const T* xh = xhat_.channel(i, ch);
      T* d = dx.channel(i, ch);
      if (batch_stats_) {
        for (std::size_t j = 0; j < plane; ++j) {
          d[j] = static_cast<T>(scale * (g[j] - dbeta / count - xh[j] * dgamma / count));
        }
      } else {
        for (std::size_t j = 0; j < plane; ++j) d[j] = static_cast<T>(scale * g[j]);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ReLU6

template <typename T>
Tensor<T> ReLU6<T>::forward(const Tensor<T>& x) {
  output_ = x;
  for (auto& v : output_.data) v = std::clamp(v, T(0), T(6));
  return output_;
}

template <typename T>
Tensor<T> ReLU6<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    const T y = output_.data[i];
    if (!(y > T(0) && y < T(6))) dx.data[i] = T(0);
  }
  return dx;
}

// ---------------------------------------------------------------- Upsample2x

template <typename T>
std::vector<typename Upsample2x<T>::Tap> Upsample2x<T>::taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    const double src = std::clamp((o + 0.5) * in / out - 0.5, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    t[static_cast<std::size_t>(o)] = {i0, i1, static_cast<T>(src - i0)};
  }
  return t;
}

template <typename T>
Tensor<T> Upsample2x<T>::forward(const Tensor<T>& x) {
  in_h_ = x.h;
  in_w_ = x.w;
  Tensor<T> y(x.n, x.c, x.h * 2, x.w * 2);
  const auto ty = taps(x.h, y.h);
  const auto tx = taps(x.w, y.w);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* src = x.channel(i, ch);
      T* dst = y.channel(i, ch);
      for (int oy = 0; oy < y.h; ++oy) {
        const auto& a = ty[static_cast<std::size_t>(oy)];
        const T* r0 = src + static_cast<std::size_t>(a.i0) * x.w;
        const T* r1 = src + static_cast<std::size_t>(a.i1) * x.w;
        for (int ox = 0; ox < y.w; ++ox) {
          const auto& b = tx[static_cast<std::size_t>(ox)];
          const T top = r0[b.i0] + b.w1 * (r0[b.i1] - r0[b.i0]);
          const T bottom = r1[b.i0] + b.w1 * (r1[b.i1] - r1[b.i0]);
          dst[static_cast<std::size_t>(oy) * y.w + ox] = top + a.w1 * (bottom - top);
        }
      }
    }
  return y;
}

template <typename T>
Tensor<T> Upsample2x<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(dy.n, dy.c, in_h_, in_w_);
  const auto ty = taps(in_h_, dy.h);
  const auto tx = taps(in_w_, dy.w);
  for (int i = 0; i < dy.n; ++i)
    for (int ch = 0; ch < dy.c; ++ch) {
      const T* g = dy.channel(i, ch);
      T* d = dx.channel(i, ch);
      for (int oy = 0; oy < dy.h; ++oy) {
        const auto& a = ty[static_cast<std::size_t>(oy)];
        T* r0 = d + static_cast<std::size_t>(a.i0) * in_w_;
        T* r1 = d + static_cast<std::size_t>(a.i1) * in_w_;
        for (int ox = 0; ox < dy.w; ++ox) {
          const auto& b = tx[static_cast<std::size_t>(ox)];
          const T v = g[static_cast<std::size_t>(oy) * dy.w + ox];
          const T top = v * (T(1) - a.w1);
          const T bottom = v * a.w1;
          r0[b.i0] += top * (T(1) - b.w1);
          r0[b.i1] += top * b.w1;
          r1[b.i0] += bottom * (T(1) - b.w1);
          r1[b.i1] += bottom * b.w1;
        }
      }
    }
  return dx;
}

// ---------------------------------------------------------------- ChannelAttention

template <typename T>
ChannelAttention<T>::ChannelAttention(const std::string& name, int channels, int reduction)
    : channels_(channels),
      hidden_(std::max(1, channels / reduction)),
      w1_(name + ".fc1.weight", {std::max(1, channels / reduction), channels}),
      b1_(name + ".fc1.bias", {std::max(1, channels / reduction)}),
      w2_(name + ".fc2.weight", {channels, std::max(1, channels / reduction)}),
      b2_(name + ".fc2.bias", {channels}) {}

template <typename T>
void ChannelAttention<T>::init_he(Rng& rng) {
  const double s1 = std::sqrt(2.0 / channels_);
  const double s2 = std::sqrt(1.0 / hidden_);
  for (auto& v : w1_.value) v = static_cast<T>(rng.normal() * s1);
  for (auto& v : w2_.value) v = static_cast<T>(rng.normal() * s2);
  std::fill(b1_.value.begin(), b1_.value.end(), T(0));
  std::fill(b2_.value.begin(), b2_.value.end(), T(0));
}

template <typename T>
void ChannelAttention<T>::collect(std::vector<Parameter<T>*>& out) {
  for (auto* p : {&w1_, &b1_, &w2_, &b2_}) out.push_back(p);
}

template <typename T>
Tensor<T> ChannelAttention<T>::forward(const Tensor<T>& x) {
  require(x.c == channels_, "channel attention channel mismatch");
  input_ = x;
  const auto n = static_cast<std::size_t>(x.n);
  const auto c = static_cast<std::size_t>(channels_);
  const auto r = static_cast<std::size_t>(hidden_);
  const std::size_t plane = x.plane();
  pooled_.assign(n * c, T(0));
  pre1_.assign(n * r, T(0));
  hidden_act_.assign(n * r, T(0));
  gate_.assign(n * c, T(0));
  Tensor<T> y(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = x.channel(static_cast<int>(i), static_cast<int>(ch));
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) s += src[j];
      pooled_[i * c + ch] = static_cast<T>(s / static_cast<double>(plane));
    }
    for (std::size_t h = 0; h < r; ++h) {
      T acc = b1_.value[h];
      for (std::size_t ch = 0; ch < c; ++ch) acc += w1_.value[h * c + ch] * pooled_[i * c + ch];
      pre1_[i * r + h] = acc;
      hidden_act_[i * r + h] = acc > T(0) ? acc : T(0);
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      T acc = b2_.value[ch];
      for (std::size_t h = 0; h < r; ++h) acc += w2_.value[ch * r + h] * hidden_act_[i * r + h];
      const T g = T(1) / (T(1) + std::exp(-acc));
      gate_[i * c + ch] = g;
      const T* src = x.channel(static_cast<int>(i), static_cast<int>(ch));
      T* dst = y.channel(static_cast<int>(i), static_cast<int>(ch));
      for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] * g;
    }
  }
  return y;
}

template <typename T>
Tensor<T> ChannelAttention<T>::backward(const Tensor<T>& dy) {
  require(dy.same_shape(input_), "channel attention gradient shape mismatch");
  const auto n = static_cast<std::size_t>(dy.n);
  const auto c = static_cast<std::size_t>(channels_);
  const auto r = static_cast<std::size_t>(hidden_);
  const std::size_t plane = dy.plane();
  const bool train = w1_.trainable;
  Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
  std::vector<T> dpre2(c), dhidden(r), dpooled(c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* g = dy.channel(static_cast<int>(i), static_cast<int>(ch));
      const T* src = input_.channel(static_cast<int>(i), static_cast<int>(ch));
      T* d = dx.channel(static_cast<int>(i), static_cast<int>(ch));
      const T gate = gate_[i * c + ch];
      double dgate = 0.0;
      for (std::size_t j = 0; j < plane; ++j) {
        dgate += static_cast<double>(g[j]) * src[j];
        d[j] = g[j] * gate;
      }
      dpre2[ch] = static_cast<T>(dgate) * gate * (T(1) - gate);
    }
    std::fill(dhidden.begin(), dhidden.end(), T(0));
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (train) b2_.grad[ch] += dpre2[ch];
      for (std::size_t h = 0; h < r; ++h) {
        if (train) w2_.grad[ch * r + h] += dpre2[ch] * hidden_act_[i * r + h];
        dhidden[h] += w2_.value[ch * r + h] * dpre2[ch];
      }
    }
    std::fill(dpooled.begin(), dpooled.end(), T(0));
    for (std::size_t h = 0; h < r; ++h) {
      const T dpre1 = pre1_[i * r + h] > T(0) ? dhidden[h] : T(0);
      if (train) b1_.grad[h] += dpre1;
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (train) w1_.grad[h * c + ch] += dpre1 * pooled_[i * c + ch];
        dpooled[ch] += w1_.value[h * c + ch] * dpre1;
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T share = dpooled[ch] / static_cast<T>(plane);
      T* d = dx.channel(static_cast<int>(i), static_cast<int>(ch));
      for (std::size_t j = 0; j < plane; ++j) d[j] += share;
    }
  }
  return dx;
}

// ---------------------------------------------------------------- helpers

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.n == b.n && a.h == b.h && a.w == b.w, "concat spatial mismatch");
  Tensor<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy(a.sample(i), a.sample(i) + a.sample_size(), y.sample(i));
    std::copy(b.sample(i), b.sample(i) + b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& d, int first_channels, Tensor<T>& da, Tensor<T>& db) {
  da = Tensor<T>(d.n, first_channels, d.h, d.w);
  db = Tensor<T>(d.n, d.c - first_channels, d.h, d.w);
  for (int i = 0; i < d.n; ++i) {
    std::copy(d.sample(i), d.sample(i) + da.sample_size(), da.sample(i));
    std::copy(d.sample(i) + da.sample_size(), d.sample(i) + d.sample_size(), db.sample(i));
  }
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b), "add shape mismatch");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// ---------------------------------------------------------------- ConvBnAct

template <typename T>
ConvBnAct<T>::ConvBnAct(const std::string& name, int in_channels, int out_channels, int stride)
    : conv_(name + ".conv", in_channels, out_channels, 3, stride, false), bn_(name + ".bn", out_channels) {}

template <typename T>
Tensor<T> ConvBnAct<T>::forward(const Tensor<T>& x, bool training) {
  return act_.forward(bn_.forward(conv_.forward(x), training));
}

template <typename T>
Tensor<T> ConvBnAct<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  return conv_.backward(bn_.backward(act_.backward(dy), true), need_input_grad);
}

template <typename T>
void ConvBnAct<T>::collect(std::vector<Parameter<T>*>& out) {
  conv_.collect(out);
  bn_.collect(out);
}

#define FOULSEG_INSTANTIATE(T)                                                          \
  template class Conv2d<T>;                                                             \
  template class BatchNorm2d<T>;                                                        \
  template class ReLU6<T>;                                                              \
  template class Upsample2x<T>;                                                         \
  template class ChannelAttention<T>;                                                   \
  template class ConvBnAct<T>;                                                          \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);            \
  template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);       \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);

FOULSEG_INSTANTIATE(float)
FOULSEG_INSTANTIATE(double)

#undef FOULSEG_INSTANTIATE

}  // namespace foulseg::nn
