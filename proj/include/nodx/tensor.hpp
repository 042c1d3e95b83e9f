#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace nodx {

/// Dense row-major tensor of doubles. The last dimension varies fastest.
/// Network activations use the layout (N, C, D, H, W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.data_.assign(t.data_.size(), v);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  // (n, c, d, h, w) accessor for 5-d tensors.
  double& at5(int n, int c, int d, int h, int w) {
    return data_[idx5(n, c, d, h, w)];
  }
  double at5(int n, int c, int d, int h, int w) const {
    return data_[idx5(n, c, d, h, w)];
  }
  size_t idx5(int n, int c, int d, int h, int w) const {
    return (((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) *
               shape_[4] + w;
  }

  double& at2(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  double at2(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

  void fill(double v) { data_.assign(data_.size(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    require_same_shape(o, "-=");
    for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  static size_t numel_of(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  std::string shape_str() const;

 private:
  void require_same_shape(const Tensor& o, const char* op) const {
    if (!same_shape(o))
      throw std::invalid_argument(std::string("Tensor: shape mismatch in ") + op);
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

bool all_finite(const Tensor& t);

}  // namespace nodx
