#pragma once

#include <filesystem>
#include <memory>

#include "taformer/core/params.hpp"
#include "taformer/decoder/decoder.hpp"
#include "taformer/encoder/backbone.hpp"
#include "taformer/encoder/encoder.hpp"
#include "taformer/harness/config.hpp"
#include "taformer/losses/total.hpp"

namespace taf {

struct ModelOutput {
  FeaturePyramidClip backbone;  // encoder input
  EncoderOutput encoder;
  DecoderOutput decoder;
};

/// Backbone, encoder, decoder and contrastive head with their parameters.
/// Parameter groups: backbone, encoder.*, decoder.*, contrastive.
class Model {
 public:
  explicit Model(const RunConfig& cfg);

  ModelOutput forward(const Tensor& pixels, bool keep_traces = false) const;
  LossResult loss(const ModelOutput& out, const GroundTruth& gt) const;

  const RunConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  RunConfig cfg_;
  ParameterSet params_;
  TinyBackbone backbone_;
  Encoder encoder_;
  Decoder decoder_;
  ContrastiveHead head_;
};

/// Directory with manifest.json (config + parameter table) and params.taft.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
/// Rebuilds the model from the manifest config and loads the parameters.
/// Throws FormatError listing every parameter whose name or shape disagrees.
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& dir);

}  // namespace taf
