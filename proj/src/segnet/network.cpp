#include "foulseg/segnet/network.hpp"

#include <algorithm>
#include <cmath>

#include "foulseg/config_util.hpp"
#include "foulseg/error.hpp"

namespace foulseg::nn {

std::vector<int> NetworkConfig::resolved_encoder_channels() const {
  if (!encoder_channels.empty()) return encoder_channels;
  // Reference widths follow the feature strides 2..32 of a compound-scaled (B2-sized) backbone.
  if (encoder == EncoderKind::Reference) return {32, 24, 48, 120, 352};
  return {8, 16, 24, 32, 64};
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, "network: " + m); };
  if (input_size <= 0 || input_size % 32 != 0) fail("input_size must be a positive multiple of 32");
  if (num_classes != kNumClasses) fail("num_classes must be 10");
  const auto enc = resolved_encoder_channels();
  if (enc.size() != kStages) fail("encoder needs exactly 5 stages");
  if (decoder_filters.size() != enc.size()) fail("decoder_filters length must equal the number of encoder skip levels");
  for (int c : enc)
    if (c <= 0) fail("encoder widths must be positive");
  for (int c : decoder_filters)
    if (c <= 0) fail("decoder filters must be positive");
  if (attention_reduction < 1) fail("attention_reduction must be >= 1");
  if (pretrained && pretrained_path.empty()) fail("pretrained=true requires pretrained_path");
}

NetworkConfig NetworkConfig::tiny() {
  NetworkConfig c;
  c.input_size = 64;
  c.encoder = EncoderKind::Tiny;
  c.decoder_filters = {64, 32, 24, 16, 16};
  return c;
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  constexpr std::string_view s = "network";
  require_known_keys(j,
                     {"input_size", "num_classes", "encoder", "encoder_channels", "decoder_filters",
                      "use_channel_attention", "use_residual_decoder", "attention_reduction", "pretrained",
                      "pretrained_path", "init_seed"},
                     s);
  NetworkConfig c;
  if (j.contains("encoder")) {
    const auto e = j.at("encoder").get<std::string>();
    if (e == "reference") {
      c.encoder = EncoderKind::Reference;
    } else if (e == "tiny") {
      c = tiny();
    } else {
      throw Error(ErrorCode::ConfigError, "network.encoder must be 'reference' or 'tiny'");
    }
  }
  read_key(j, "input_size", c.input_size, s);
  read_key(j, "num_classes", c.num_classes, s);
  read_key(j, "encoder_channels", c.encoder_channels, s);
  read_key(j, "decoder_filters", c.decoder_filters, s);
  read_key(j, "use_channel_attention", c.use_channel_attention, s);
  read_key(j, "use_residual_decoder", c.use_residual_decoder, s);
  read_key(j, "attention_reduction", c.attention_reduction, s);
  read_key(j, "pretrained", c.pretrained, s);
  read_key(j, "pretrained_path", c.pretrained_path, s);
  read_key(j, "init_seed", c.init_seed, s);
  c.validate();
  return c;
}

nlohmann::json NetworkConfig::to_json() const {
  return {{"input_size", input_size},
          {"num_classes", num_classes},
          {"encoder", encoder == EncoderKind::Reference ? "reference" : "tiny"},
          {"encoder_channels", resolved_encoder_channels()},
          {"decoder_filters", decoder_filters},
          {"use_channel_attention", use_channel_attention},
          {"use_residual_decoder", use_residual_decoder},
          {"attention_reduction", attention_reduction},
          {"pretrained", pretrained},
          {"pretrained_path", pretrained_path},
          {"init_seed", init_seed}};
}

template <typename T>
SegNet<T>::SegNet(const NetworkConfig& config) : config_(config) {
  config_.validate();
  const auto enc = config_.resolved_encoder_channels();
  Rng rng(derive_seed(config_.init_seed, {0x5e9e7ULL}));

  int in = 3;
  for (int s = 0; s < kStages; ++s) {
    const std::string name = "encoder." + std::to_string(s);
    const int out = enc[static_cast<std::size_t>(s)];
    EncoderStage stage{ConvBnAct<T>(name + ".down", in, out, 2), ConvBnAct<T>(name + ".refine", out, out, 1)};
    stage.down.init_he(rng);
    stage.refine.init_he(rng);
    encoder_.push_back(std::move(stage));
    in = out;
  }

  int prev = enc.back();
  for (int s = 0; s < kStages; ++s) {
    const std::string name = "decoder." + std::to_string(s);
    const int skip = s + 1 < kStages ? enc[static_cast<std::size_t>(kStages - 2 - s)] : 0;
    const int out = config_.decoder_filters[static_cast<std::size_t>(s)];
    DecoderStage stage;
    stage.up_channels = prev;
    stage.skip_channels = skip;
    stage.first = ConvBnAct<T>(name + ".block1", prev + skip, out, 1);
    stage.second = ConvBnAct<T>(name + ".block2", out, out, 1);
    stage.first.init_he(rng);
    stage.second.init_he(rng);
    stage.has_projection = config_.use_residual_decoder && prev + skip != out;
    if (stage.has_projection) {
      stage.projection = Conv2d<T>(name + ".projection", prev + skip, out, 1, 1, false);
      stage.projection.init_he(rng);
    }
    if (config_.use_channel_attention) {
      stage.attention = ChannelAttention<T>(name + ".attention", out, config_.attention_reduction);
      stage.attention.init_he(rng);
    }
    decoder_.push_back(std::move(stage));
    prev = out;
  }
  head_ = Conv2d<T>("head", prev, config_.num_classes, 1, 1, true);
  head_.init_he(rng);
}

template <typename T>
void SegNet<T>::check_input(const Tensor<T>& images) const {
  if (images.c != 3 || images.h != config_.input_size || images.w != config_.input_size || images.n < 1) {
    throw Error(ErrorCode::ShapeMismatch, "expected N x 3 x " + std::to_string(config_.input_size) + " x " +
                                              std::to_string(config_.input_size) + " input, got " +
                                              std::to_string(images.n) + " x " + std::to_string(images.c) + " x " +
                                              std::to_string(images.h) + " x " + std::to_string(images.w));
  }
}

template <typename T>
void SegNet<T>::encode(const Tensor<T>& images, bool training) {
  features_.clear();
  const Tensor<T>* x = &images;
  for (auto& stage : encoder_) {
    features_.push_back(stage.refine.forward(stage.down.forward(*x, training), training));
    x = &features_.back();
  }
}

template <typename T>
Tensor<T> SegNet<T>::forward(const Tensor<T>& images, bool training) {
  check_input(images);
  encode(images, training);
  Tensor<T> x = features_.back();
  for (int s = 0; s < kStages; ++s) {
    auto& stage = decoder_[static_cast<std::size_t>(s)];
    Tensor<T> cat = stage.up.forward(x);
    if (stage.skip_channels > 0) cat = concat_channels(cat, features_[static_cast<std::size_t>(kStages - 2 - s)]);
    Tensor<T> y = stage.second.forward(stage.first.forward(cat, training), training);
    if (config_.use_residual_decoder) add_inplace(y, stage.has_projection ? stage.projection.forward(cat) : cat);
    if (config_.use_channel_attention) y = stage.attention.forward(y);
    x = std::move(y);
  }
  return head_.forward(x);
}

template <typename T>
void SegNet<T>::backward(const Tensor<T>& dlogits) {
  const bool encoder_needed = encoder_trainable_from_ < kStages;
  std::vector<Tensor<T>> dfeatures(kStages);

  Tensor<T> d = head_.backward(dlogits, true);
  for (int s = kStages - 1; s >= 0; --s) {
    auto& stage = decoder_[static_cast<std::size_t>(s)];
    if (config_.use_channel_attention) d = stage.attention.backward(d);
    Tensor<T> dcat = stage.first.backward(stage.second.backward(d, true), true);
    if (config_.use_residual_decoder) add_inplace(dcat, stage.has_projection ? stage.projection.backward(d, true) : d);
    Tensor<T> dup;
    if (stage.skip_channels > 0) {
      Tensor<T> dskip;
      split_channels(dcat, stage.up_channels, dup, dskip);
      if (encoder_needed) dfeatures[static_cast<std::size_t>(kStages - 2 - s)] = std::move(dskip);
    } else {
      dup = std::move(dcat);
    }
    d = stage.up.backward(dup);
  }
  if (!encoder_needed) return;

  dfeatures[kStages - 1] = std::move(d);
  for (int s = kStages - 1; s >= encoder_trainable_from_; --s) {
    auto& stage = encoder_[static_cast<std::size_t>(s)];
    const bool need_input = s > encoder_trainable_from_;
    Tensor<T> dx = stage.down.backward(stage.refine.backward(dfeatures[static_cast<std::size_t>(s)], true), need_input);
    if (need_input) add_inplace(dfeatures[static_cast<std::size_t>(s - 1)], dx);
  }
}

template <typename T>
std::vector<std::vector<T>> SegNet<T>::embed(const Tensor<T>& images) {
  check_input(images);
  encode(images, false);
  const auto& deep = features_.back();
  std::vector<std::vector<T>> out(static_cast<std::size_t>(deep.n), std::vector<T>(static_cast<std::size_t>(deep.c)));
  const std::size_t plane = deep.plane();
  for (int i = 0; i < deep.n; ++i)
    for (int c = 0; c < deep.c; ++c) {
      const T* src = deep.channel(i, c);
      double s = 0.0;
      for (std::size_t j = 0; j < plane; ++j) s += src[j];
      out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = static_cast<T>(s / static_cast<double>(plane));
    }
  return out;
}

template <typename T>
int SegNet<T>::embedding_size() const {
  return config_.resolved_encoder_channels().back();
}

template <typename T>
std::vector<Parameter<T>*> SegNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& stage : encoder_) {
    stage.down.collect(out);
    stage.refine.collect(out);
  }
  for (auto& stage : decoder_) {
    stage.first.collect(out);
    stage.second.collect(out);
    if (stage.has_projection) stage.projection.collect(out);
    if (config_.use_channel_attention) stage.attention.collect(out);
  }
  head_.collect(out);
  return out;
}

template <typename T>
void SegNet<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename T>
void SegNet<T>::set_encoder_trainable_from(int first_trainable) {
  encoder_trainable_from_ = std::clamp(first_trainable, 0, kStages);
  for (int s = 0; s < kStages; ++s) {
    std::vector<Parameter<T>*> params;
    encoder_[static_cast<std::size_t>(s)].down.collect(params);
    encoder_[static_cast<std::size_t>(s)].refine.collect(params);
    for (auto* p : params) p->trainable = !p->buffer && s >= encoder_trainable_from_;
  }
}

template <typename T>
void SegNet<T>::set_decoder_trainable(bool trainable) {
  decoder_trainable_ = trainable;
  for (auto* p : parameters()) {
    if (p->name.rfind("encoder.", 0) == 0) continue;
    p->trainable = !p->buffer && trainable;
  }
}

template <typename T>
void write_image(Tensor<T>& batch, int sample, const RgbImage& image) {
  if (batch.c != 3 || image.width() != batch.w || image.height() != batch.h) {
    throw Error(ErrorCode::ShapeMismatch, "image does not match the network input size");
  }
  constexpr std::array<double, 3> mean{0.485, 0.456, 0.406};
  constexpr std::array<double, 3> stdev{0.229, 0.224, 0.225};
  for (int c = 0; c < 3; ++c) {
    T* dst = batch.channel(sample, c);
    for (int y = 0; y < image.height(); ++y)
      for (int x = 0; x < image.width(); ++x) {
        const double v = image.at(x, y, c) / 255.0;
        dst[static_cast<std::size_t>(y) * image.width() + x] =
            static_cast<T>((v - mean[static_cast<std::size_t>(c)]) / stdev[static_cast<std::size_t>(c)]);
      }
  }
}

template <typename T>
ProbabilityField softmax_field(const Tensor<T>& logits, int sample) {
  if (logits.c != kNumClasses) throw Error(ErrorCode::ShapeMismatch, "logits must have 10 channels");
  ProbabilityField field(logits.w, logits.h);
  const std::size_t plane = logits.plane();
  const T* base = logits.sample(sample);
  for (std::size_t i = 0; i < plane; ++i) {
    double mx = base[i];
    for (int c = 1; c < kNumClasses; ++c) mx = std::max<double>(mx, base[static_cast<std::size_t>(c) * plane + i]);
    std::array<double, kNumClasses> e{};
    double sum = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      e[static_cast<std::size_t>(c)] = std::exp(base[static_cast<std::size_t>(c) * plane + i] - mx);
      sum += e[static_cast<std::size_t>(c)];
    }
    float* dst = field.probs.data() + i * kNumClasses;
    for (int c = 0; c < kNumClasses; ++c) dst[c] = static_cast<float>(e[static_cast<std::size_t>(c)] / sum);
  }
  return field;
}

template class SegNet<float>;
template class SegNet<double>;
template void write_image<float>(Tensor<float>&, int, const RgbImage&);
template void write_image<double>(Tensor<double>&, int, const RgbImage&);
template ProbabilityField softmax_field<float>(const Tensor<float>&, int);
template ProbabilityField softmax_field<double>(const Tensor<double>&, int);

}  // namespace foulseg::nn
