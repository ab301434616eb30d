#pragma once

#include <cstddef>
#include <deque>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace gtp {

using Dims = std::vector<std::size_t>;

std::string dims_to_string(const Dims& dims);
std::size_t dims_product(const Dims& dims);

/// Dense row-major array of doubles with an optional gradient buffer of the
/// same length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims);
  Tensor(Dims dims, std::vector<double> values);

  static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }
  static Tensor filled(Dims dims, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }
  /// 2-D tensor from nested rows; every row must have the same length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // 2-D element access; no bounds checks beyond debug asserts.
  double& at(std::size_t r, std::size_t c) { return values_[r * dims_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * dims_[1] + c]; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  /// Allocates a zero gradient if absent.
  std::span<double> grad();
  std::span<const double> grad() const noexcept { return grad_; }
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  /// Same values, new dims; product must match.
  Tensor reshaped(Dims dims) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.values_ == b.values_;
  }

 private:
  Dims dims_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

/// Throws ShapeError naming both shapes when they differ.
void require_same_dims(const Tensor& a, const Tensor& b, const char* op);

/// Named trainable tensors in insertion order. References returned by get()
/// stay valid for the lifetime of the store.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;

  void zero_grads();

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

 private:
  std::deque<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace gtp
