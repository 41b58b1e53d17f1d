#pragma once

#include <cstddef>
#include <vector>

namespace taf {

struct MatchAssignment {
  std::vector<std::size_t> slot_of_gt;  // injective
  double total_cost = 0.0;

  /// Inverse map over `slots` prediction slots; -1 marks no-object.
  std::vector<long> gt_of_slot(std::size_t slots) const;
};

/// Minimum-cost injective assignment of rows (ground truth) to columns
/// (prediction slots) for a row-major rows x cols cost matrix, rows <= cols.
/// Shortest augmenting path with potentials, O(rows^2 cols).
MatchAssignment hungarian_match(const std::vector<double>& cost, std::size_t rows, std::size_t cols);

}  // namespace taf
