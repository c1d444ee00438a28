#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rpg {

using Dims = std::vector<std::size_t>;

std::size_t dims_product(const Dims& dims);
std::string dims_to_string(const Dims& dims);

/// Dense row-major array of doubles. An image is laid out as (row, col, channel).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  static Tensor image(std::size_t side, std::size_t channels, double fill = 0.0) {
    return Tensor(Dims{side, side, channels}, fill);
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // rank-3 (row, col, channel) accessors
  double& at(std::size_t r, std::size_t c, std::size_t ch) {
    return data_[(r * dims_[1] + c) * dims_[2] + ch];
  }
  double at(std::size_t r, std::size_t c, std::size_t ch) const {
    return data_[(r * dims_[1] + c) * dims_[2] + ch];
  }

  /// Same data, new dims with equal element count.
  Tensor reshaped(Dims dims) const;

  bool all_finite() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

void require_same_dims(const Tensor& a, const Tensor& b, const char* what);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor& axpy(double alpha, const Tensor& x, Tensor& y);  // y += alpha * x

double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double l2_norm(const Tensor& a);
double l2_distance(std::span<const double> a, std::span<const double> b);
double max_abs(const Tensor& a);
std::size_t argmax(std::span<const double> v);

}  // namespace rpg
