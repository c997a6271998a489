#pragma once

#include <vector>

#include "gdeform/geometry.hpp"

namespace gdeform {

// Exact min-cost perfect matching (Jonker-Volgenant style shortest
// augmenting paths with potentials, O(n^3)). Returns row -> col.
std::vector<int> hungarian_assignment(const Mat& cost);

// Greedy nearest assignment followed by pairwise-swap refinement. Never
// better than optimal; deterministic.
std::vector<int> greedy_swap_assignment(const Mat& cost, int max_passes = 100);

}  // namespace gdeform
