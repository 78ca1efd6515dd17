#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap shared handle. Operations never mutate their inputs; the
// only in-place mutation is gradient accumulation and optimizer updates on
// parameters. Operations are recorded only while a TapeScope is active on the
// current thread and at least one input requires a gradient, so inference
// runs without any bookkeeping.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace phmdiff {

class Rng;

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::span<double> grad_buffer();  // allocates zeros on first use
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;  // negative axes count from the end
  int rank() const { return static_cast<int>(shape().size()); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();  // allocates zeros if absent
  void zero_grad();

  // Fresh tensor with copied values and no graph connection.
  Tensor detach() const;

  const TensorStorage* id() const { return impl_.get(); }
  const std::shared_ptr<TensorStorage>& storage() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(std::shared_ptr<TensorStorage>);

  std::shared_ptr<TensorStorage> impl_;
};

// Append-only record of differentiable operations in execution order.
class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<TensorStorage>> inputs;
    std::shared_ptr<TensorStorage> output;
    std::function<void()> backward;
  };

  void record(Node node);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

// Makes `tape` the recording tape for this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Writes d(loss)/d(x) into every requires_grad tensor reached by the tape.
// Leaves recorded on the tape but not connected to the loss end with zero grad.
void backward(const Tensor& loss, Tape& tape);

// --- elementwise (numpy-style broadcasting) ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor gelu(const Tensor& x);  // tanh approximation
Tensor silu(const Tensor& x);
Tensor exp(const Tensor& x);

// --- linear algebra ---
// a: [..., M, K]; b: [K, N] (shared) or [..., K, N] with identical leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last(const Tensor& x);  // swaps the last two axes

// --- structure ---
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);
// x: [B, N, D]; rows[b] lists the N-axis indices to keep for batch item b
// (one list shared by all items if rows.size() == 1). Result [B, K, D].
Tensor gather_rows(const Tensor& x, const std::vector<std::vector<std::int64_t>>& rows);
// table: [R, D]; returns leading_shape + [D].
Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& indices, Shape leading_shape);

// --- reductions and fused ops ---
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor softmax(const Tensor& x);  // over the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);
Tensor mse(const Tensor& a, const Tensor& b);
// a: [n, d], b: [m, d] -> [n, m] squared Euclidean distances.
Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

}  // namespace phmdiff
