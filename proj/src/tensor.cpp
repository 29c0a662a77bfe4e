#include "fedadapt/tensor.hpp"

#include <functional>
#include <numeric>
#include <sstream>

#include "fedadapt/error.hpp"

namespace fedadapt {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
}

std::span<double> Tensor::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

bool Tensor::well_formed() const {
  return shape_numel(shape) == data.size() && (grad.empty() || grad.size() == data.size());
}

}  // namespace fedadapt
