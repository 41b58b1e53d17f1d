#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taformer/harness/config.hpp"

namespace taf {

struct GradcheckRow {
  std::string name;       // op name or parameter group
  std::size_t entries = 0;  // finite-difference probes
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckRow> ops;
  std::vector<GradcheckRow> groups;  // every parameter group exactly once
  bool pass() const;
  std::string table() const;
};

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t probes_per_tensor = 8;  // 0 probes every entry
  double op_tolerance = 1e-6;
  double group_tolerance = 1e-4;
  std::string inject_fault;  // op whose backward rule is perturbed during the run
};

/// C=16, T=3, Q=4, H=W=16, L=2, one clip of two instances.
RunConfig gradcheck_config(std::uint64_t seed);

/// Per-op checks on random inputs, then autodiff vs central differences of
/// the full training loss for every parameter group of a fresh model.
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double a, double n, double floor);

}  // namespace taf
