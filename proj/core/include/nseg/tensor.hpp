#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nseg/errors.hpp"

namespace nseg {

/// Dense 4-D shape (batch, channels, rows, cols). All dimensions >= 1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  bool operator==(const Shape&) const = default;

  std::int64_t elems() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

/// Dense row-major 4-D tensor. float for training, double for gradient checks.
template <typename T>
struct Tensor {
  Shape shape{};
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(Shape s, T fill = T(0))
      : shape(checked(s)), data(static_cast<std::size_t>(s.elems()), fill) {}

  Tensor(Shape s, std::vector<T> values) : shape(checked(s)), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != shape.elems()) {
      throw ContractError("tensor data length " + std::to_string(data.size()) +
                          " does not match shape " + shape.str());
    }
  }

  std::int64_t size() const { return shape.elems(); }

  std::int64_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::int64_t>(b) * shape.c + ch) * shape.h + y) * shape.w + x;
  }

  T& at(int b, int ch, int y, int x) { return data[static_cast<std::size_t>(index(b, ch, y, x))]; }
  const T& at(int b, int ch, int y, int x) const {
    return data[static_cast<std::size_t>(index(b, ch, y, x))];
  }

  /// Pointer to the start of one (batch, channel) plane of h*w values.
  T* plane(int b, int ch) { return data.data() + index(b, ch, 0, 0); }
  const T* plane(int b, int ch) const { return data.data() + index(b, ch, 0, 0); }

  bool all_finite() const {
    for (const T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

 private:
  static Shape checked(const Shape& s) {
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
      throw ContractError("tensor dimensions must all be >= 1, got " + s.str());
    }
    return s;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace nseg
