#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace splab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first accumulation
  bool requires_grad = false;

  std::vector<double>& grad_buffer();
};
}  // namespace detail

// Dense row-major tensor of doubles. Copies share storage (handle semantics),
// which is what lets the tape route adjoints back to parameters.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct mutation is reserved for optimizer updates and finite differences.
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::size_t i) const { return impl_->data.at(i); }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  // Zero-filled view if no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // A fresh tensor with copied data that does not track gradients.
  Tensor detach() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorStorage>& storage() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorStorage> impl_;
};

// Ordered record of adjoint closures. Operations append to the tape that is
// active on the current thread; backward() replays them in exact reverse
// order of recording.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> adjoint);
  // Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint.
  void backward(const Tensor& loss);
  std::size_t size() const { return adjoints_.size(); }
  void clear() { adjoints_.clear(); }

  static Tape* active();

 private:
  std::vector<std::function<void()>> adjoints_;
};

// Makes a tape active on this thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// True if `inputs` contain a tensor that requires grad and a tape is active.
bool should_record(std::initializer_list<const Tensor*> inputs);

// Throws NumericError naming `what` if any element is NaN or infinite.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace splab
