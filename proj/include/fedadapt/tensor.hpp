#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedadapt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major 64-bit tensor with an optional gradient buffer.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, std::vector<double> values);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  bool has_grad() const { return !grad.empty(); }
  /// Allocates a zeroed gradient if none is present.
  std::span<double> ensure_grad();
  void clear_grad() { grad.clear(); grad.shrink_to_fit(); }

  /// Checks product(shape) == numel and grad shape.
  bool well_formed() const;

  bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }
};

/// Named tensor with a trainability flag.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = false;

  Parameter() = default;
  Parameter(std::string n, Shape s, bool train = false)
      : name(std::move(n)), value(std::move(s)), trainable(train) {}

  std::size_t numel() const { return value.numel(); }
};

}  // namespace fedadapt
