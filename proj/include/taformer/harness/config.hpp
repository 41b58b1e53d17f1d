#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "taformer/core/optim.hpp"
#include "taformer/decoder/decoder.hpp"
#include "taformer/encoder/config.hpp"
#include "taformer/losses/types.hpp"
#include "taformer/synth/synthclip.hpp"

namespace taf {

struct DataConfig {
  std::size_t clips = 8;  // training pool size; every step uses the whole pool
  std::size_t frames = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t instances = 2;
  Scenario scenario = Scenario::Plain;
};

/// Component switches; they override the matching encoder/decoder/loss fields.
struct AblationSwitches {
  bool st_enc = true;           // temporal branch in the encoder
  bool tsa = true;              // temporal self-attention in the decoder
  bool contrastive = true;
  bool aux_contrastive = true;  // contrastive term on every decoder layer
  FusionMode fusion = FusionMode::Dynamic;
  std::size_t k_inter = 2;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t steps = 500;
  DataConfig data;
  EncoderConfig encoder;
  DecoderConfig decoder;
  LossWeights loss;
  AdamWConfig optim;
  double grad_clip = 0.1;  // global norm; 0 disables
  AblationSwitches ablation;

  /// Encoder/decoder/loss settings with the switches applied and the shared
  /// sizes (channels, heads, levels) copied across.
  EncoderConfig encoder_config() const;
  DecoderConfig decoder_config() const;
  LossWeights loss_weights() const;
  SynthOptions synth_options() const;
  /// Mask stride of the level-0 feature map relative to the input.
  std::size_t mask_stride() const { return 4; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys and wrong types throw ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace taf
