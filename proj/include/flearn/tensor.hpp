#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace flearn {

template <typename T>
struct BasicTensor {
  std::vector<std::int64_t> shape;
  std::vector<T> values;

  BasicTensor() = default;
  BasicTensor(std::vector<std::int64_t> shape_, std::vector<T> values_)
      : shape(std::move(shape_)), values(std::move(values_)) {}

  static BasicTensor zeros(std::vector<std::int64_t> shape_) {
    std::int64_t n = 1;
    for (std::int64_t d : shape_) n *= d;
    return BasicTensor(std::move(shape_), std::vector<T>(static_cast<std::size_t>(n), T(0)));
  }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
  }

  T* data() { return values.data(); }
  const T* data() const { return values.data(); }

  bool operator==(const BasicTensor&) const = default;
};

using Tensor = BasicTensor<float>;

// std::map keeps name iteration order fixed, which every deterministic
// reduction and serialization in the project relies on.
template <typename T>
using NamedTensorsT = std::map<std::string, BasicTensor<T>>;
using NamedTensors = NamedTensorsT<float>;

// Zero tensors with the same names and shapes as src, in the target scalar
// type (used for gradient accumulators and optimizer state).
template <typename T, typename U>
NamedTensorsT<T> zeros_like(const NamedTensorsT<U>& src) {
  NamedTensorsT<T> out;
  for (const auto& [name, tensor] : src) {
    out.emplace(name, BasicTensor<T>::zeros(tensor.shape));
  }
  return out;
}

// Dense row-major matrix, used for logit blocks.
template <typename T>
struct MatrixT {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  MatrixT() = default;
  MatrixT(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, T(0)) {}

  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  T* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const T* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

using Matrix = MatrixT<float>;

}  // namespace flearn
