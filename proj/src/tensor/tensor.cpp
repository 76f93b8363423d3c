#include "itst/tensor/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "itst/errors.hpp"

namespace itst {

namespace {

std::size_t trailing_cols(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return 0;
  return shape.back();
}

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, values_(rows * cols, fill), cols_(cols) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)), cols_(trailing_cols(shape_)) {
  const std::size_t expected =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (shape_.empty() || expected != values_.size()) {
    throw DimensionError("tensor shape " + shape_string() + " does not match " +
                         std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Tensor t(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    for (double v : row) t.values_[i++] = v;
  }
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  return shape_.empty() ? 0 : values_.size() / cols_;
}

std::size_t Tensor::cols() const { return cols_; }

double Tensor::at(std::size_t r, std::size_t c) const {
  if (r >= rows() || c >= cols_) {
    throw IndexError("index (" + std::to_string(r) + "," + std::to_string(c) +
                     ") out of range for " + shape_string());
  }
  return (*this)(r, c);
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tensor Tensor::slice_rows(std::size_t begin, std::size_t count) const {
  if (begin + count > rows()) throw IndexError("slice_rows past end of " + shape_string());
  Tensor out(count, cols_);
  std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(begin * cols_), count * cols_,
              out.values_.begin());
  return out;
}

Tensor Tensor::transposed() const {
  const std::size_t r = rows();
  Tensor out(cols_, r);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
  }
  return out;
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

}  // namespace itst
