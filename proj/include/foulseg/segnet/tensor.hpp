#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace foulseg::nn {

/// Dense NCHW tensor.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const noexcept { return plane() * c; }
  std::size_t size() const noexcept { return data.size(); }

  T* sample(int i) noexcept { return data.data() + sample_size() * i; }
  const T* sample(int i) const noexcept { return data.data() + sample_size() * i; }
  T* channel(int i, int ch) noexcept { return sample(i) + plane() * ch; }
  const T* channel(int i, int ch) const noexcept { return sample(i) + plane() * ch; }

  bool same_shape(const Tensor& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

/// A learnable tensor or a persistent buffer (running statistics), with Adam state.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> m;
  std::vector<T> v;
  bool trainable = true;
  bool buffer = false;

  Parameter() = default;
  Parameter(std::string name_, std::vector<int> shape_, T fill = T(0), bool is_buffer = false)
      : name(std::move(name_)), shape(std::move(shape_)), buffer(is_buffer) {
    std::size_t count = 1;
    for (int s : shape) count *= static_cast<std::size_t>(s);
    value.assign(count, fill);
    if (!buffer) grad.assign(count, T(0));
  }

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

}  // namespace foulseg::nn
