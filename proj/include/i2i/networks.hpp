#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "i2i/attention.hpp"
#include "i2i/layers.hpp"
#include "i2i/parameters.hpp"
#include "i2i/rng.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

// Where self-attention blocks sit in the generator.
//   DsOnly  - before the first encoder downsampling stage
//   UsOnly  - before the first decoder upsampling stage
//   DsUs    - both of the above
//   Ds3Us3  - before/after every encoder downsampling stage and every decoder
//             upsampling stage: three blocks each, one per resolution level
enum class Variant { DsOnly, UsOnly, DsUs, Ds3Us3 };

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::DsOnly, Variant::UsOnly, Variant::DsUs,
                                                        Variant::Ds3Us3};

/// "ds", "us", "ds-us", "ds3-us3".
std::string variant_name(Variant v);
/// Inverse of variant_name; throws ConfigError on unknown names.
Variant parse_variant(std::string_view name);

struct PlacementConfig {
  Variant variant = Variant::DsUs;
  bool discriminator_attention = true;
};

struct ModelConfig {
  std::size_t image_size = 32;  // square images, power of two >= 8
  std::size_t image_channels = 3;
  std::size_t base_channels = 16;  // content code has 4x this many channels
  std::size_t style_dim = 8;
  std::size_t residual_blocks = 2;
  std::size_t mlp_dim = 64;
  std::size_t upsample_kernel = 5;
  std::size_t attention_cap = 4096;  // max spatial positions N at any attention block
  AttentionConfig attention;
  PlacementConfig placement;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inconsistent geometry or an attention block
  /// whose N exceeds attention_cap.
  void validate() const;
  std::size_t content_channels() const { return 4 * base_channels; }
  std::size_t content_size() const { return image_size / 4; }
};

enum class Domain { One = 1, Two = 2 };

constexpr Domain other(Domain d) { return d == Domain::One ? Domain::Two : Domain::One; }
constexpr std::size_t domain_index(Domain d) { return d == Domain::One ? 0 : 1; }

template <typename T>
class ContentEncoder {
 public:
  ContentEncoder(const ModelConfig& config, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> parameters() const;
  ParameterList<T> buffers() const;
  std::size_t attention_blocks() const;

 private:
  Conv2dLayer<T> stem_;
  InstanceNormLayer<T> stem_norm_;
  std::array<Conv2dLayer<T>, 2> down_;
  std::array<InstanceNormLayer<T>, 2> down_norm_;
  // Slot k sits at resolution image_size / 2^k, ahead of down_[k] for k < 2.
  std::array<std::optional<AttentionBlock<T>>, 3> attention_;
  std::vector<ResidualBlock<T>> residual_;
};

template <typename T>
class StyleEncoder {
 public:
  StyleEncoder(const ModelConfig& config, Rng& rng);
  /// [b x style_dim]
  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> parameters() const;

 private:
  Conv2dLayer<T> stem_;
  std::vector<Conv2dLayer<T>> down_;
  LinearLayer<T> head_;
};

template <typename T>
class Decoder {
 public:
  Decoder(const ModelConfig& config, Rng& rng);
  /// Image in [-1, 1] from a content code and a [b x style_dim] style code.
  Tensor<T> operator()(const Tensor<T>& content, const Tensor<T>& style) const;
  ParameterList<T> parameters() const;
  ParameterList<T> buffers() const;
  std::size_t attention_blocks() const;

 private:
  std::array<LinearLayer<T>, 3> mlp_;
  std::vector<AdaptiveResidualBlock<T>> residual_;
  // Slot k sits at resolution content_size * 2^k, ahead of up_[k] for k < 2.
  std::array<std::optional<AttentionBlock<T>>, 3> attention_;
  std::array<Conv2dLayer<T>, 2> up_;
  Conv2dLayer<T> head_;
};

template <typename T>
class Discriminator {
 public:
  Discriminator(const ModelConfig& config, Rng& rng);
  /// Patch scores in (0, 1), [b x 1 x size/8 x size/8].
  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> parameters() const;
  ParameterList<T> buffers() const;
  std::size_t attention_blocks() const { return attention_ ? 1 : 0; }

 private:
  std::optional<AttentionBlock<T>> attention_;
  std::array<Conv2dLayer<T>, 3> down_;
  Conv2dLayer<T> head_;
};

template <typename T>
struct DomainNetworks {
  ContentEncoder<T> content;
  StyleEncoder<T> style;
  Decoder<T> decoder;
  Discriminator<T> discriminator;
};

template <typename T>
struct Codes {
  Tensor<T> content;
  Tensor<T> style;
};

// Content/style autoencoders plus a discriminator for each of two domains.
// Copies share parameter storage.
template <typename T>
class TranslationModel {
 public:
  explicit TranslationModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  Codes<T> encode(const Tensor<T>& x, Domain domain) const;
  Tensor<T> encode_content(const Tensor<T>& x, Domain domain) const;
  Tensor<T> encode_style(const Tensor<T>& x, Domain domain) const;
  Tensor<T> decode(const Tensor<T>& content, const Tensor<T>& style, Domain domain) const;
  /// decode in the other domain of the content of x (encoded in `source`).
  Tensor<T> translate(const Tensor<T>& x, const Tensor<T>& target_style, Domain source) const;
  Tensor<T> discriminate(const Tensor<T>& x, Domain domain) const;

  /// Draw from the style prior, a standard normal per dimension.
  Tensor<T> sample_style(Rng& rng, std::size_t batch = 1) const;

  /// Encoders and decoders of both domains.
  ParameterList<T> generator_parameters() const;
  ParameterList<T> discriminator_parameters() const;
  /// Every trainable tensor, generator first, with stable unique names.
  ParameterList<T> named_parameters() const;
  ParameterList<T> buffers() const;

  /// Attention blocks in content encoder + decoder of one domain.
  std::size_t generator_attention_blocks(Domain domain) const;
  std::size_t discriminator_attention_blocks(Domain domain) const;

  /// Same parameters with the roles of the two domains exchanged.
  TranslationModel swapped() const;
  /// Both domains use the domain-one networks.
  TranslationModel tied() const;

 private:
  void require_image(const Tensor<T>& x, const char* op) const;
  const DomainNetworks<T>& nets(Domain d) const { return nets_[domain_index(d)]; }

  ModelConfig config_;
  std::vector<DomainNetworks<T>> nets_;
};

template <typename T>
TranslationModel<T> build_model(const ModelConfig& config);

}  // namespace i2i
