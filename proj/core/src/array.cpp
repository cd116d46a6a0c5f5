#include "dpt/numerics/array.hpp"

#include <malloc.h>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <type_traits>

#include "dpt/error.hpp"

namespace dpt {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void configure_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Array<T>::Array(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
Array<T>::Array(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw ConfigError("array shape " + shape_str(shape_) + " does not match " +
                      std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Array<T> Array<T>::uninitialized(Shape shape) {
  Array a;
  a.data_.resize(shape_size(shape));
  a.shape_ = std::move(shape);
  return a;
}

template <typename T>
std::size_t Array<T>::dim(int axis) const {
  const int r = static_cast<int>(shape_.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ConfigError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[a];
}

template <typename T>
std::size_t Array<T>::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ConfigError("index rank mismatch for shape " + shape_str(shape_));
  }
  std::size_t off = 0;
  std::size_t k = 0;
  for (std::size_t i : index) {
    if (i >= shape_[k]) throw ConfigError("index out of range for shape " + shape_str(shape_));
    off = off * shape_[k] + i;
    ++k;
  }
  return off;
}

template <typename T>
T& Array<T>::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

template <typename T>
const T& Array<T>::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

template <typename T>
Array<T> Array<T>::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Array out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

template <typename T>
void Array<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Array<T>::all_finite() const {
  if constexpr (std::is_floating_point_v<T>) {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

template class Array<float>;
template class Array<double>;
template class Array<std::int32_t>;
template class Array<std::uint8_t>;

}  // namespace dpt
