#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stf {

using Vec = std::vector<double>;

/// Row-major n x d block of points. Rows are contiguous so kernels can walk
/// them with plain spans.
class Points {
 public:
  Points() = default;
  Points(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim, 0.0) {}
  Points(std::size_t dim, std::vector<double> data) : dim_(dim), data_(std::move(data)) {
    if (dim_ == 0) throw std::invalid_argument("Points: dimension must be positive");
    if (data_.size() % dim_ != 0) throw std::invalid_argument("Points: data size not a multiple of dimension");
    rows_ = data_.size() / dim_;
  }

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return rows_ == 0; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * dim_, dim_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  void push_back(std::span<const double> p) {
    if (dim_ == 0) dim_ = p.size();
    if (p.size() != dim_) throw std::invalid_argument("Points: dimension mismatch on push_back");
    data_.insert(data_.end(), p.begin(), p.end());
    ++rows_;
  }

  void reserve(std::size_t rows) { data_.reserve(rows * dim_); }

  friend bool operator==(const Points&, const Points&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
  }
}

}  // namespace stf
