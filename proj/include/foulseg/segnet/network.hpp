#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "foulseg/image.hpp"
#include "foulseg/probability.hpp"
#include "foulseg/rng.hpp"
#include "foulseg/segnet/layers.hpp"
#include "foulseg/segnet/tensor.hpp"

namespace foulseg::nn {

enum class EncoderKind { Reference, Tiny };

inline constexpr int kStages = 5;

struct NetworkConfig {
  int input_size = 192;
  int num_classes = 10;
  EncoderKind encoder = EncoderKind::Reference;
  /// Per-stage widths; empty selects the preset of `encoder`.
  std::vector<int> encoder_channels;
  std::vector<int> decoder_filters{256, 128, 64, 48, 32};
  bool use_channel_attention = true;
  bool use_residual_decoder = true;
  int attention_reduction = 8;
  bool pretrained = false;
  std::string pretrained_path;
  std::uint64_t init_seed = 0;

  /// Stage widths actually used (preset or override).
  std::vector<int> resolved_encoder_channels() const;
  /// Throws InvalidConfig when the configuration cannot be built.
  void validate() const;

  static NetworkConfig tiny();
  static NetworkConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// U-Net: five stride-2 encoder stages (strides 2..32) feeding five decoder
/// stages, each decoder stage being bilinear x2 upsampling, skip concatenation,
/// two conv-BN-ReLU6 blocks with a residual link, and squeeze-excitation.
template <typename T>
class SegNet {
 public:
  explicit SegNet(const NetworkConfig& config);

  const NetworkConfig& config() const noexcept { return config_; }

  /// Input: N x 3 x S x S normalized images. Output: N x 10 x S x S logits.
  Tensor<T> forward(const Tensor<T>& images, bool training);
  /// Back-propagates d(loss)/d(logits) from the last forward(); gradients accumulate.
  void backward(const Tensor<T>& dlogits);

  /// Spatial mean of the deepest encoder feature map, one row per image.
  std::vector<std::vector<T>> embed(const Tensor<T>& images);

  std::vector<Parameter<T>*> parameters();
  void zero_grad();

  /// Encoder stages with index >= first_trainable are trainable; kStages freezes the whole encoder.
  void set_encoder_trainable_from(int first_trainable);
  int encoder_trainable_from() const noexcept { return encoder_trainable_from_; }
  void set_decoder_trainable(bool trainable);

  int embedding_size() const;

 private:
  struct EncoderStage {
    ConvBnAct<T> down;
    ConvBnAct<T> refine;
  };
  struct DecoderStage {
    Upsample2x<T> up;
    int up_channels = 0;
    int skip_channels = 0;
    ConvBnAct<T> first;
    ConvBnAct<T> second;
    bool has_projection = false;
    Conv2d<T> projection;
    ChannelAttention<T> attention;
  };

  void check_input(const Tensor<T>& images) const;
  void encode(const Tensor<T>& images, bool training);

  NetworkConfig config_;
  std::vector<EncoderStage> encoder_;
  std::vector<DecoderStage> decoder_;
  Conv2d<T> head_;
  std::vector<Tensor<T>> features_;  // encoder outputs, strides 2..32
  int encoder_trainable_from_ = 0;
  bool decoder_trainable_ = true;
};

/// Writes an 8-bit RGB image into batch slot `sample` using the encoder's
/// input convention (ImageNet channel mean/std).
template <typename T>
void write_image(Tensor<T>& batch, int sample, const RgbImage& image);

/// Softmax over the class axis for one sample of a logits tensor.
template <typename T>
ProbabilityField softmax_field(const Tensor<T>& logits, int sample);

}  // namespace foulseg::nn
