#include "i2i/networks.hpp"

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"

namespace i2i {

namespace {

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

struct Slots {
  std::array<bool, 3> encoder{};
  std::array<bool, 3> decoder{};
};

Slots attention_slots(Variant v) {
  Slots s;
  switch (v) {
    case Variant::DsOnly:
      s.encoder[0] = true;
      break;
    case Variant::UsOnly:
      s.decoder[0] = true;
      break;
    case Variant::DsUs:
      s.encoder[0] = s.decoder[0] = true;
      break;
    case Variant::Ds3Us3:
      s.encoder = {true, true, true};
      s.decoder = {true, true, true};
      break;
  }
  return s;
}

enum Role : std::uint64_t { kContent = 1, kStyle = 2, kDecoder = 3, kDiscriminator = 4 };

template <typename T>
Tensor<T> maybe_attend(const std::optional<AttentionBlock<T>>& block, const Tensor<T>& x) {
  return block ? attention_forward(x, *block) : x;
}

template <typename T>
void append_attention(ParameterList<T>& out, const std::string& prefix,
                      const std::array<std::optional<AttentionBlock<T>>, 3>& blocks, bool buffers) {
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    if (!blocks[k]) continue;
    append_prefixed(out, prefix + "attn" + std::to_string(k) + ".",
                    buffers ? blocks[k]->buffers() : blocks[k]->parameters());
  }
}

template <typename T>
std::size_t count_blocks(const std::array<std::optional<AttentionBlock<T>>, 3>& blocks) {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b ? 1 : 0;
  return n;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::DsOnly:
      return "ds";
    case Variant::UsOnly:
      return "us";
    case Variant::DsUs:
      return "ds-us";
    case Variant::Ds3Us3:
      return "ds3-us3";
  }
  throw ConfigError("unknown placement variant");
}

Variant parse_variant(std::string_view name) {
  for (const Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown placement variant '" + std::string(name) + "' (expected ds, us, ds-us or ds3-us3)");
}

void ModelConfig::validate() const {
  if (!is_power_of_two(image_size) || image_size < 8) {
    throw ConfigError("image_size must be a power of two >= 8, got " + std::to_string(image_size));
  }
  if (image_channels == 0 || base_channels == 0 || style_dim == 0 || mlp_dim == 0) {
    throw ConfigError("image_channels, base_channels, style_dim and mlp_dim must be positive");
  }
  if (upsample_kernel == 0 || upsample_kernel % 2 == 0) {
    throw ConfigError("upsample_kernel must be odd, got " + std::to_string(upsample_kernel));
  }
  if (attention.reduction == 0) throw ConfigError("attention reduction must be positive");

  const Slots slots = attention_slots(placement.variant);
  std::size_t largest = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    if (slots.encoder[k]) largest = std::max(largest, image_size >> k);
    if (slots.decoder[k]) largest = std::max(largest, content_size() << k);
  }
  if (placement.discriminator_attention) largest = std::max(largest, image_size);
  const std::size_t positions = largest * largest;
  if (positions > attention_cap) {
    throw ConfigError("attention at " + std::to_string(largest) + "x" + std::to_string(largest) + " needs N = " +
                      std::to_string(positions) + " positions, above the cap of " + std::to_string(attention_cap));
  }
}

// ---- content encoder ------------------------------------------------------

template <typename T>
ContentEncoder<T>::ContentEncoder(const ModelConfig& config, Rng& rng) {
  const std::size_t d = config.base_channels;
  const Slots slots = attention_slots(config.placement.variant);
  stem_ = Conv2dLayer<T>(config.image_channels, d, 7, 1, 3, rng, false);
  stem_norm_ = InstanceNormLayer<T>(d);
  const std::array<std::size_t, 3> widths = {d, 2 * d, 4 * d};
  for (std::size_t k = 0; k < 2; ++k) {
    down_[k] = Conv2dLayer<T>(widths[k], widths[k + 1], 4, 2, 1, rng, false);
    down_norm_[k] = InstanceNormLayer<T>(widths[k + 1]);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    if (slots.encoder[k]) attention_[k].emplace(widths[k], rng, config.attention);
  }
  for (std::size_t r = 0; r < config.residual_blocks; ++r) residual_.emplace_back(4 * d, rng);
}

template <typename T>
Tensor<T> ContentEncoder<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = relu(stem_norm_(stem_(x)));
  for (std::size_t k = 0; k < 2; ++k) {
    h = maybe_attend(attention_[k], h);
    h = relu(down_norm_[k](down_[k](h)));
  }
  h = maybe_attend(attention_[2], h);
  for (const auto& block : residual_) h = block(h);
  return h;
}

template <typename T>
ParameterList<T> ContentEncoder<T>::parameters() const {
  ParameterList<T> out;
  append_prefixed(out, "stem.", stem_.parameters());
  append_prefixed(out, "stem_norm.", stem_norm_.parameters());
  for (std::size_t k = 0; k < 2; ++k) {
    append_prefixed(out, "down" + std::to_string(k) + ".", down_[k].parameters());
    append_prefixed(out, "down_norm" + std::to_string(k) + ".", down_norm_[k].parameters());
  }
  append_attention(out, "", attention_, false);
  for (std::size_t r = 0; r < residual_.size(); ++r) {
    append_prefixed(out, "res" + std::to_string(r) + ".", residual_[r].parameters());
  }
  return out;
}

template <typename T>
ParameterList<T> ContentEncoder<T>::buffers() const {
  ParameterList<T> out;
  append_attention(out, "", attention_, true);
  return out;
}

template <typename T>
std::size_t ContentEncoder<T>::attention_blocks() const {
  return count_blocks(attention_);
}

// ---- style encoder --------------------------------------------------------

template <typename T>
StyleEncoder<T>::StyleEncoder(const ModelConfig& config, Rng& rng) {
  const std::size_t d = config.base_channels;
  stem_ = Conv2dLayer<T>(config.image_channels, d, 7, 1, 3, rng);
  std::size_t width = d;
  for (std::size_t size = config.image_size; size > 1; size /= 2) {
    const std::size_t next = std::min(2 * width, 4 * d);
    down_.emplace_back(width, next, 4, 2, 1, rng);
    width = next;
  }
  head_ = LinearLayer<T>(width, config.style_dim, rng);
}

template <typename T>
Tensor<T> StyleEncoder<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = relu(stem_(x));
  for (const auto& conv : down_) h = relu(conv(h));
  return head_(global_avg_pool(h));
}

template <typename T>
ParameterList<T> StyleEncoder<T>::parameters() const {
  ParameterList<T> out;
  append_prefixed(out, "stem.", stem_.parameters());
  for (std::size_t k = 0; k < down_.size(); ++k) {
    append_prefixed(out, "down" + std::to_string(k) + ".", down_[k].parameters());
  }
  append_prefixed(out, "head.", head_.parameters());
  return out;
}

// ---- decoder --------------------------------------------------------------

template <typename T>
Decoder<T>::Decoder(const ModelConfig& config, Rng& rng) {
  const std::size_t d = config.base_channels;
  const std::size_t c = config.content_channels();
  const Slots slots = attention_slots(config.placement.variant);
  for (std::size_t r = 0; r < config.residual_blocks; ++r) residual_.emplace_back(c, rng);
  const std::size_t style_params = std::max<std::size_t>(1, config.residual_blocks * 4 * c);
  mlp_[0] = LinearLayer<T>(config.style_dim, config.mlp_dim, rng);
  mlp_[1] = LinearLayer<T>(config.mlp_dim, config.mlp_dim, rng);
  mlp_[2] = LinearLayer<T>(config.mlp_dim, style_params, rng);
  const std::array<std::size_t, 3> widths = {4 * d, 2 * d, d};
  const std::size_t k = config.upsample_kernel;
  for (std::size_t s = 0; s < 2; ++s) up_[s] = Conv2dLayer<T>(widths[s], widths[s + 1], k, 1, k / 2, rng);
  for (std::size_t s = 0; s < 3; ++s) {
    if (slots.decoder[s]) attention_[s].emplace(widths[s], rng, config.attention);
  }
  head_ = Conv2dLayer<T>(d, config.image_channels, 7, 1, 3, rng);
}

template <typename T>
Tensor<T> Decoder<T>::operator()(const Tensor<T>& content, const Tensor<T>& style) const {
  if (!style.defined() || style.rank() != 2 || style.dim(0) != content.dim(0)) {
    throw DimensionError("decoder: style code " +
                         (style.defined() ? shape_str(style.shape()) : std::string("<undefined>")) +
                         " does not match the content batch");
  }
  const Tensor<T> params = mlp_[2](relu(mlp_[1](relu(mlp_[0](style)))));
  Tensor<T> h = content;
  for (std::size_t r = 0; r < residual_.size(); ++r) {
    const std::size_t width = residual_[r].style_width();
    h = residual_[r](h, slice_columns(params, r * width, width));
  }
  for (std::size_t s = 0; s < 2; ++s) {
    h = maybe_attend(attention_[s], h);
    h = relu(up_[s](upsample_nearest2x(h)));
  }
  h = maybe_attend(attention_[2], h);
  return tanh(head_(h));
}

template <typename T>
ParameterList<T> Decoder<T>::parameters() const {
  ParameterList<T> out;
  for (std::size_t k = 0; k < mlp_.size(); ++k) {
    append_prefixed(out, "mlp" + std::to_string(k) + ".", mlp_[k].parameters());
  }
  for (std::size_t r = 0; r < residual_.size(); ++r) {
    append_prefixed(out, "res" + std::to_string(r) + ".", residual_[r].parameters());
  }
  append_attention(out, "", attention_, false);
  for (std::size_t s = 0; s < 2; ++s) append_prefixed(out, "up" + std::to_string(s) + ".", up_[s].parameters());
  append_prefixed(out, "head.", head_.parameters());
  return out;
}

template <typename T>
ParameterList<T> Decoder<T>::buffers() const {
  ParameterList<T> out;
  append_attention(out, "", attention_, true);
  return out;
}

template <typename T>
std::size_t Decoder<T>::attention_blocks() const {
  return count_blocks(attention_);
}

// ---- discriminator --------------------------------------------------------

template <typename T>
Discriminator<T>::Discriminator(const ModelConfig& config, Rng& rng) {
  const std::size_t d = config.base_channels;
  if (config.placement.discriminator_attention) attention_.emplace(config.image_channels, rng, config.attention);
  const std::array<std::size_t, 4> widths = {config.image_channels, d, 2 * d, 4 * d};
  for (std::size_t k = 0; k < 3; ++k) down_[k] = Conv2dLayer<T>(widths[k], widths[k + 1], 4, 2, 1, rng);
  head_ = Conv2dLayer<T>(4 * d, 1, 1, 1, 0, rng);
}

template <typename T>
Tensor<T> Discriminator<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = maybe_attend(attention_, x);
  for (const auto& conv : down_) h = leaky_relu(conv(h), 0.2);
  return sigmoid(head_(h));
}

template <typename T>
ParameterList<T> Discriminator<T>::parameters() const {
  ParameterList<T> out;
  if (attention_) append_prefixed(out, "attn.", attention_->parameters());
  for (std::size_t k = 0; k < 3; ++k) append_prefixed(out, "down" + std::to_string(k) + ".", down_[k].parameters());
  append_prefixed(out, "head.", head_.parameters());
  return out;
}

template <typename T>
ParameterList<T> Discriminator<T>::buffers() const {
  ParameterList<T> out;
  if (attention_) append_prefixed(out, "attn.", attention_->buffers());
  return out;
}

// ---- model ----------------------------------------------------------------

template <typename T>
TranslationModel<T>::TranslationModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  for (const std::uint64_t domain : {1u, 2u}) {
    // Independent streams per network keep initialization stable when one
    // network's architecture changes.
    Rng content_rng(derive_seed(config_.seed, domain, kContent));
    Rng style_rng(derive_seed(config_.seed, domain, kStyle));
    Rng decoder_rng(derive_seed(config_.seed, domain, kDecoder));
    Rng disc_rng(derive_seed(config_.seed, domain, kDiscriminator));
    nets_.push_back(DomainNetworks<T>{ContentEncoder<T>(config_, content_rng), StyleEncoder<T>(config_, style_rng),
                                      Decoder<T>(config_, decoder_rng), Discriminator<T>(config_, disc_rng)});
  }
}

template <typename T>
void TranslationModel<T>::require_image(const Tensor<T>& x, const char* op) const {
  const std::size_t s = config_.image_size;
  if (!x.defined() || x.rank() != 4 || x.dim(1) != config_.image_channels || x.dim(2) != s || x.dim(3) != s) {
    throw DimensionError(std::string(op) + ": expected b x " + std::to_string(config_.image_channels) + " x " +
                         std::to_string(s) + " x " + std::to_string(s) + " image, got " +
                         (x.defined() ? shape_str(x.shape()) : std::string("<undefined>")));
  }
}

template <typename T>
Codes<T> TranslationModel<T>::encode(const Tensor<T>& x, Domain domain) const {
  return {encode_content(x, domain), encode_style(x, domain)};
}

template <typename T>
Tensor<T> TranslationModel<T>::encode_content(const Tensor<T>& x, Domain domain) const {
  require_image(x, "encode");
  return nets(domain).content(x);
}

template <typename T>
Tensor<T> TranslationModel<T>::encode_style(const Tensor<T>& x, Domain domain) const {
  require_image(x, "encode");
  return nets(domain).style(x);
}

template <typename T>
Tensor<T> TranslationModel<T>::decode(const Tensor<T>& content, const Tensor<T>& style, Domain domain) const {
  const std::size_t cs = config_.content_size();
  if (!content.defined() || content.rank() != 4 || content.dim(1) != config_.content_channels() ||
      content.dim(2) != cs || content.dim(3) != cs) {
    throw DimensionError("decode: content code " +
                         (content.defined() ? shape_str(content.shape()) : std::string("<undefined>")) +
                         " does not match " + std::to_string(config_.content_channels()) + " x " +
                         std::to_string(cs) + " x " + std::to_string(cs));
  }
  if (!style.defined() || style.rank() != 2 || style.dim(1) != config_.style_dim) {
    throw DimensionError("decode: style code must be b x " + std::to_string(config_.style_dim));
  }
  return nets(domain).decoder(content, style);
}

template <typename T>
Tensor<T> TranslationModel<T>::translate(const Tensor<T>& x, const Tensor<T>& target_style, Domain source) const {
  return decode(encode_content(x, source), target_style, other(source));
}

template <typename T>
Tensor<T> TranslationModel<T>::discriminate(const Tensor<T>& x, Domain domain) const {
  require_image(x, "discriminate");
  return nets(domain).discriminator(x);
}

template <typename T>
Tensor<T> TranslationModel<T>::sample_style(Rng& rng, std::size_t batch) const {
  std::vector<T> v(batch * config_.style_dim);
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return Tensor<T>(Shape{batch, config_.style_dim}, std::move(v));
}

template <typename T>
ParameterList<T> TranslationModel<T>::generator_parameters() const {
  ParameterList<T> out;
  for (std::size_t i = 0; i < nets_.size(); ++i) {
    const std::string p = "domain" + std::to_string(i + 1) + ".";
    append_prefixed(out, p + "content.", nets_[i].content.parameters());
    append_prefixed(out, p + "style.", nets_[i].style.parameters());
    append_prefixed(out, p + "decoder.", nets_[i].decoder.parameters());
  }
  return out;
}

template <typename T>
ParameterList<T> TranslationModel<T>::discriminator_parameters() const {
  ParameterList<T> out;
  for (std::size_t i = 0; i < nets_.size(); ++i) {
    append_prefixed(out, "domain" + std::to_string(i + 1) + ".discriminator.", nets_[i].discriminator.parameters());
  }
  return out;
}

template <typename T>
ParameterList<T> TranslationModel<T>::named_parameters() const {
  ParameterList<T> out = generator_parameters();
  append_prefixed(out, "", discriminator_parameters());
  return out;
}

template <typename T>
ParameterList<T> TranslationModel<T>::buffers() const {
  ParameterList<T> out;
  for (std::size_t i = 0; i < nets_.size(); ++i) {
    const std::string p = "domain" + std::to_string(i + 1) + ".";
    append_prefixed(out, p + "content.", nets_[i].content.buffers());
    append_prefixed(out, p + "decoder.", nets_[i].decoder.buffers());
    append_prefixed(out, p + "discriminator.", nets_[i].discriminator.buffers());
  }
  return out;
}

template <typename T>
std::size_t TranslationModel<T>::generator_attention_blocks(Domain domain) const {
  return nets(domain).content.attention_blocks() + nets(domain).decoder.attention_blocks();
}

template <typename T>
std::size_t TranslationModel<T>::discriminator_attention_blocks(Domain domain) const {
  return nets(domain).discriminator.attention_blocks();
}

template <typename T>
TranslationModel<T> TranslationModel<T>::swapped() const {
  TranslationModel copy = *this;
  std::swap(copy.nets_[0], copy.nets_[1]);
  return copy;
}

template <typename T>
TranslationModel<T> TranslationModel<T>::tied() const {
  TranslationModel copy = *this;
  copy.nets_[1] = copy.nets_[0];
  return copy;
}

template <typename T>
TranslationModel<T> build_model(const ModelConfig& config) {
  return TranslationModel<T>(config);
}

template class ContentEncoder<float>;
template class ContentEncoder<double>;
template class StyleEncoder<float>;
template class StyleEncoder<double>;
template class Decoder<float>;
template class Decoder<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class TranslationModel<float>;
template class TranslationModel<double>;
template TranslationModel<float> build_model(const ModelConfig&);
template TranslationModel<double> build_model(const ModelConfig&);

}  // namespace i2i
