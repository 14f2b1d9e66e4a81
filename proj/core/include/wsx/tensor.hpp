#pragma once

// Minimal dense reverse-mode differentiation engine.
//
// Values are row-major float64 buffers. Every operation executed on a Var that
// requires gradients is recorded as a node holding its inputs and a backward
// rule; backward() walks the reachable nodes in reverse execution order.

#include <any>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsx {

/// Base error type for everything thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

/// Cache-line aligned allocator. Vectorized reductions peel a prefix that
/// depends on the buffer address, so a fixed alignment keeps results
/// bit-reproducible from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, const std::vector<double>& values);
  Tensor(Shape shape, Buffer values);
  explicit Tensor(Shape shape, double fill = 0.0);

  static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  /// Row count of a matrix view: vectors are a single row, scalars 1x1.
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<double> data() noexcept { return values_; }
  std::span<const double> data() const noexcept { return values_; }
  const Buffer& values() const noexcept { return values_; }
  Buffer& values() noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  double item() const;
  void fill(double v);

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

 private:
  Shape shape_;
  Buffer values_;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Backward rule: reads node.grad and accumulates into the inputs' grads.
using BackwardFn = std::function<void(Node&)>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  BackwardFn backward;
  std::uint64_t seq = 0;
  std::string op = "leaf";

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

/// Handle to a recorded value. Copies share the same node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var parameter(Tensor value) { return Var(std::move(value), true); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  /// Gradient buffer; zeros of the value's shape when nothing accumulated yet.
  Tensor grad() const;
  void zero_grad();

  const NodePtr& node() const noexcept { return node_; }
  static Var from_node(NodePtr node);

 private:
  NodePtr node_;
};

/// Creates a recorded node. When no input requires a gradient the backward
/// rule is dropped and the result is a constant.
Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

/// Populates grads of every reachable requires_grad node from a scalar loss.
void backward(const Var& loss);

/// Seeded randomness for dropout; one generator per call keeps runs reproducible.
struct DropoutContext {
  bool training = false;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_seed();
};

// ---- built-in operations --------------------------------------------------

Var matmul(const Var& a, const Var& b);         // (n,k) x (k,m)
Var matmul_nt(const Var& a, const Var& b);      // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);            // elementwise
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);      // broadcast a (1,m) row over (n,m)
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
/// log(max(a, floor)); gradient is zero where the floor is active.
Var log_floor(const Var& a, double floor);
Var sum(const Var& a);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);            // sum(a * b) as a scalar
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, Shape shape);
Var select(const Var& a, std::size_t index);    // flat element as a scalar
Var dropout(const Var& a, double p, DropoutContext& ctx);
Var embedding_lookup(const Var& table, std::span<const std::size_t> ids);
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);

// ---- custom operations ----------------------------------------------------

struct CustomForwardResult {
  Tensor output;
  std::any saved;
};

using CustomForward = std::function<CustomForwardResult(std::span<const Tensor> inputs)>;
/// Maps (saved state, forward inputs, upstream grad) to one grad per input.
using CustomBackward = std::function<std::vector<Tensor>(
    const std::any& saved, std::span<const Tensor> inputs, const Tensor& upstream)>;

class CustomOp {
 public:
  CustomOp(std::string name, CustomForward forward, CustomBackward backward);
  Var operator()(const std::vector<Var>& inputs) const;
  const std::string& name() const noexcept { return *name_; }

 private:
  std::shared_ptr<const std::string> name_;
  CustomForward forward_;
  CustomBackward backward_;
};

CustomOp register_custom(std::string name, CustomForward forward, CustomBackward backward);

}  // namespace wsx
