#include "taformer/encoder/config.hpp"

namespace taf {

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "dynamic") return FusionMode::Dynamic;
  if (s == "add") return FusionMode::Add;
  if (s == "concat") return FusionMode::Concat;
  throw ConfigError("unknown fusion mode '" + s + "' (expected dynamic, add or concat)");
}

const char* fusion_mode_name(FusionMode m) {
  switch (m) {
    case FusionMode::Dynamic: return "dynamic";
    case FusionMode::Add: return "add";
    case FusionMode::Concat: return "concat";
  }
  return "?";
}

void EncoderConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("encoder: " + what);
  };
  need(heads >= 1, "heads must be >= 1");
  need(levels >= 1 && levels <= 4, "levels must be in 1..4");
  need(k_intra >= 1, "k_intra must be >= 1");
  need(k_inter >= 1, "k_inter must be >= 1");
  need(window >= 1, "window must be >= 1");
  need(channels % heads == 0, "channels must be divisible by heads");
  need(channels >= 4 && channels % 4 == 0, "channels must be a positive multiple of 4");
  need(ffn_hidden >= 1, "ffn_hidden must be >= 1");
  need(gate_reduction >= 1 && channels % gate_reduction == 0, "channels must be divisible by gate_reduction");
}

}  // namespace taf
