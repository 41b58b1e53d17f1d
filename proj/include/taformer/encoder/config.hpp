#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace taf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FusionMode { Dynamic, Add, Concat };

FusionMode parse_fusion_mode(const std::string& s);
const char* fusion_mode_name(FusionMode m);

struct EncoderConfig {
  std::size_t heads = 2;      // M
  std::size_t levels = 2;     // L
  std::size_t k_intra = 2;    // spatial samples per level
  std::size_t k_inter = 2;    // temporal samples per level per neighbour frame
  std::size_t window = 1;     // d
  std::size_t channels = 32;  // C
  std::size_t layers = 2;     // N_enc
  std::size_t ffn_hidden = 64;
  FusionMode fusion = FusionMode::Dynamic;
  std::size_t gate_reduction = 4;
  bool pooled_gates = false;
  // Off: spatial-only layers, no temporal positional term (baseline encoder).
  bool temporal = true;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

}  // namespace taf
