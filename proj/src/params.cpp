#include "gdeform/params.hpp"

namespace gdeform {

int ParamStore::add(const std::string& name, std::vector<uint32_t> dims) {
  if (find(name) >= 0) throw ConfigError("duplicate parameter name: " + name);
  ParamEntry e;
  e.name = name;
  e.offset = values_.size();
  e.dims = std::move(dims);
  values_.resize(values_.size() + e.count(), 0.0);
  entries_.push_back(std::move(e));
  return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::add_matrix(const std::string& name, int rows, int cols) {
  return add(name, {static_cast<uint32_t>(rows), static_cast<uint32_t>(cols)});
}

int ParamStore::add_vector(const std::string& name, int n) {
  return add(name, {static_cast<uint32_t>(n)});
}

int ParamStore::find(const std::string& name) const {
  for (size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return static_cast<int>(i);
  return -1;
}

Mat ParamStore::get(int idx) const {
  const ParamEntry& e = entry(idx);
  int rows = e.dims.size() == 2 ? static_cast<int>(e.dims[0]) : 1;
  int cols = static_cast<int>(e.dims.back());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = values_[e.offset + static_cast<uint64_t>(r) * cols + c];
  return m;
}

void ParamStore::set(int idx, const Mat& m) {
  const ParamEntry& e = entry(idx);
  int rows = e.dims.size() == 2 ? static_cast<int>(e.dims[0]) : 1;
  int cols = static_cast<int>(e.dims.back());
  if (m.rows() != rows || m.cols() != cols)
    throw DimensionError("ParamStore::set: shape mismatch for " + e.name);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      values_[e.offset + static_cast<uint64_t>(r) * cols + c] = m(r, c);
}

void ParamStore::scatter(int idx, const Mat& grad,
                         std::vector<double>& flat) const {
  const ParamEntry& e = entry(idx);
  if (flat.size() != values_.size()) flat.resize(values_.size(), 0.0);
  int rows = e.dims.size() == 2 ? static_cast<int>(e.dims[0]) : 1;
  int cols = static_cast<int>(e.dims.back());
  if (grad.size() == 0) return;  // block unused by this loss
  if (grad.rows() != rows || grad.cols() != cols)
    throw DimensionError("ParamStore::scatter: shape mismatch for " + e.name);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      flat[e.offset + static_cast<uint64_t>(r) * cols + c] += grad(r, c);
}

}  // namespace gdeform
