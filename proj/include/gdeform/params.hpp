#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gdeform/geometry.hpp"

namespace gdeform {

// One named block of the flat parameter vector. dims has rank 1 (vectors,
// materialized as 1 x n) or 2 (matrices, row-major in the flat payload).
struct ParamEntry {
  std::string name;
  uint64_t offset = 0;
  std::vector<uint32_t> dims;

  uint64_t count() const {
    uint64_t c = 1;
    for (uint32_t d : dims) c *= d;
    return c;
  }
};

// Flat double parameter vector with a named layout. The layout order is
// fixed at model construction and is the checkpoint contract.
class ParamStore {
 public:
  int add_matrix(const std::string& name, int rows, int cols);
  int add_vector(const std::string& name, int n);

  int find(const std::string& name) const;  // -1 when missing
  const ParamEntry& entry(int idx) const { return entries_[static_cast<size_t>(idx)]; }
  int count() const { return static_cast<int>(entries_.size()); }
  size_t total() const { return values_.size(); }

  Mat get(int idx) const;
  void set(int idx, const Mat& m);

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  // Writes a block gradient (same shape conventions as get/set) into a flat
  // vector parallel to values().
  void scatter(int idx, const Mat& grad, std::vector<double>& flat) const;

 private:
  int add(const std::string& name, std::vector<uint32_t> dims);

  std::vector<ParamEntry> entries_;
  std::vector<double> values_;
};

}  // namespace gdeform
