#include "taformer/harness/model.hpp"

#include <fstream>

#include "taformer/core/tensor_io.hpp"

namespace taf {
namespace fs = std::filesystem;
using nlohmann::json;

Model::Model(const RunConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(cfg_.seed, 100));
  const auto enc = cfg_.encoder_config();
  backbone_ = TinyBackbone::create(params_, "backbone", enc, rng);
  encoder_ = Encoder::create(params_, "encoder", enc, rng);
  decoder_ = Decoder::create(params_, "decoder", cfg_.decoder_config(), rng);
  head_ = ContrastiveHead::create(params_, "contrastive", enc.channels, rng);
}

ModelOutput Model::forward(const Tensor& pixels, bool keep_traces) const {
  ModelOutput out;
  out.backbone = backbone_(pixels);
  out.encoder = encoder_(out.backbone, keep_traces);
  out.decoder = decoder_(out.encoder.features);
  return out;
}

LossResult Model::loss(const ModelOutput& out, const GroundTruth& gt) const {
  return total_loss(out.decoder, gt, &head_, cfg_.loss_weights());
}

void save_checkpoint(const Model& model, const fs::path& dir) {
  fs::create_directories(dir);
  json table = json::array();
  for (const auto& e : model.params().entries())
    table.push_back({{"name", e.name}, {"group", e.group}, {"shape", e.value.shape()}});
  const json manifest{{"format", "taformer-checkpoint-1"},
                      {"tensor_file", "params.taft"},
                      {"config", model.config().to_json()},
                      {"parameters", table}};
  save_tensors(dir / "params.taft", model.params().tensors());
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(1) << '\n';
  if (!os) throw FormatError("write failed for " + (dir / "manifest.json").string());
}

std::unique_ptr<Model> load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream is(mpath);
  if (!is) throw FormatError("cannot open " + mpath.string());
  json manifest;
  try {
    manifest = json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError(mpath.string() + ": malformed JSON at byte offset " + std::to_string(e.byte));
  }
  if (!manifest.contains("config") || !manifest.contains("parameters") || !manifest["parameters"].is_array())
    throw FormatError(mpath.string() + ": needs 'config' and 'parameters'");
  auto model = std::make_unique<Model>(RunConfig::from_json(manifest["config"]));
  const auto tensors = load_tensors(dir / "params.taft");
  const auto& entries = model->params().entries();
  const auto& table = manifest["parameters"];

  std::string bad;
  const std::size_t n = std::max({entries.size(), table.size(), tensors.size()});
  for (std::size_t i = 0; i < n; ++i) {
    const std::string expect = i < entries.size() ? entries[i].name + " " + shape_str(entries[i].value.shape()) : "(none)";
    std::string listed = "(none)";
    if (i < table.size()) listed = table[i].value("name", "?") + " " + shape_str(table[i].value("shape", Shape{}));
    const std::string stored = i < tensors.size() ? shape_str(tensors[i].shape()) : "(none)";
    const bool ok = i < entries.size() && i < table.size() && i < tensors.size() && listed == expect &&
                    tensors[i].shape() == entries[i].value.shape();
    if (!ok) bad += "\n  #" + std::to_string(i) + ": model " + expect + ", manifest " + listed + ", file " + stored;
  }
  if (!bad.empty()) throw FormatError("checkpoint " + dir.string() + " does not match its config:" + bad);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor dst = entries[i].value;
    std::copy(tensors[i].data().begin(), tensors[i].data().end(), dst.mutable_data().begin());
  }
  return model;
}

}  // namespace taf
