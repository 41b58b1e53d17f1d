#include "taformer/losses/hungarian.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "taformer/core/tensor.hpp"

namespace taf {

std::vector<long> MatchAssignment::gt_of_slot(std::size_t slots) const {
  std::vector<long> inv(slots, -1);
  for (std::size_t g = 0; g < slot_of_gt.size(); ++g) inv.at(slot_of_gt[g]) = static_cast<long>(g);
  return inv;
}

MatchAssignment hungarian_match(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  if (rows > cols)
    throw ShapeError("hungarian_match: " + std::to_string(rows) + " ground-truth instances exceed " +
                     std::to_string(cols) + " prediction slots");
  if (cost.size() != rows * cols)
    throw ShapeError("hungarian_match: cost has " + std::to_string(cost.size()) + " entries, expected " +
                     std::to_string(rows * cols));
  for (double c : cost)
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian_match: non-finite cost entry");

  MatchAssignment res;
  if (rows == 0) return res;
  const double inf = std::numeric_limits<double>::infinity();
  auto a = [&](std::size_t i, std::size_t j) { return cost[(i - 1) * cols + (j - 1)]; };
  // 1-based potentials; column 0 is the virtual start of each augmenting path
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<std::size_t> p(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  res.slot_of_gt.assign(rows, 0);
  for (std::size_t j = 1; j <= cols; ++j)
    if (p[j] != 0) res.slot_of_gt[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < rows; ++i) res.total_cost += cost[i * cols + res.slot_of_gt[i]];
  return res;
}

}  // namespace taf
