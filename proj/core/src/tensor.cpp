#include "phmdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "phmdiff/error.hpp"
#include "phmdiff/rng.hpp"

namespace phmdiff {

using StoragePtr = std::shared_ptr<TensorStorage>;

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<double> TensorStorage::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor make_tensor(StoragePtr impl) { return Tensor(std::move(impl)); }

namespace {

thread_local Tape* g_active_tape = nullptr;

StoragePtr new_storage(Shape shape, std::vector<double> data) {
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto s = std::make_shared<TensorStorage>();
  s->shape = std::move(shape);
  s->data = std::move(data);
  return s;
}

// Gradient slot of an input, or an empty span when the input is a constant.
std::span<double> grad_slot(const StoragePtr& s) {
  if (!s->requires_grad) return {};
  return s->grad_buffer();
}

// Builds the op result and records `rule` on the active tape when any input
// needs a gradient. `rule(gout)` accumulates into the inputs' gradients.
template <class Rule>
Tensor emit(Shape shape, std::vector<double> data, std::vector<StoragePtr> inputs, Rule rule) {
  auto out = new_storage(std::move(shape), std::move(data));
  Tape* tape = g_active_tape;
  const bool needs = tape != nullptr && std::any_of(inputs.begin(), inputs.end(),
                                                    [](const StoragePtr& s) { return s->requires_grad; });
  if (needs) {
    out->requires_grad = true;
    TensorStorage* raw = out.get();
    Tape::Node node;
    node.inputs = std::move(inputs);
    node.output = out;
    node.backward = [raw, rule = std::move(rule)]() { rule(std::span<const double>(raw->grad)); };
    tape->record(std::move(node));
  }
  return make_tensor(std::move(out));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

int norm_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

std::int64_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::int64_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
  bool same = false;
};

std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  const std::size_t offset = r - in.size();
  std::vector<std::int64_t> contiguous(in.size(), 1);
  for (std::size_t i = in.size(); i-- > 1;) contiguous[i - 1] = contiguous[i] * in[i];
  std::vector<std::int64_t> strides(r, 0);
  for (std::size_t i = offset; i < r; ++i) {
    const std::size_t j = i - offset;
    strides[i] = in[j] == 1 ? 0 : contiguous[j];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::int64_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
  }
  p.stride_a = broadcast_strides(a, p.out);
  p.stride_b = broadcast_strides(b, p.out);
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void broadcast_loop(const BroadcastPlan& p, F&& f) {
  const std::int64_t n = shape_numel(p.out);
  if (p.same) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const int r = static_cast<int>(p.out.size());
  const std::int64_t inner = p.out[r - 1];
  const std::int64_t sa = p.stride_a[r - 1];
  const std::int64_t sb = p.stride_b[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ia = 0, ib = 0, o = 0;
  while (o < n) {
    for (std::int64_t j = 0; j < inner; ++j) f(o++, ia + j * sa, ib + j * sb);
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

template <class Fwd, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
  require_defined(a, op);
  require_defined(b, op);
  auto plan = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(plan.out)));
  const auto av = a.data();
  const auto bv = b.data();
  broadcast_loop(plan, [&](std::int64_t o, std::int64_t i, std::int64_t j) { out[o] = fwd(av[i], bv[j]); });
  auto sa = a.storage();
  auto sb = b.storage();
  Shape shape = plan.out;
  return emit(std::move(shape), std::move(out), {sa, sb}, [sa, sb, plan, da, db](std::span<const double> g) {
    auto ga = grad_slot(sa);
    auto gb = grad_slot(sb);
    const auto& av = sa->data;
    const auto& bv = sb->data;
    broadcast_loop(plan, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
      if (!ga.empty()) ga[i] += g[o] * da(av[i], bv[j]);
      if (!gb.empty()) gb[j] += g[o] * db(av[i], bv[j]);
    });
  });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  require_defined(x, op);
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  auto sx = x.storage();
  return emit(x.shape(), std::move(out), {sx}, [sx, deriv](std::span<const double> g) {
    auto gx = grad_slot(sx);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(sx->data[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(new_storage(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(new_storage(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return Tensor(new_storage({}, {value})); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(new_storage(std::move(shape), std::move(v)));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("shape() on undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("dim(): axis out of range for " + shape_str(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("data() on undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) throw ContractError("mutable_data() on undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw ContractError("set_requires_grad on undefined tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!impl_) throw ContractError("grad() on undefined tensor");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_) throw ContractError("mutable_grad() on undefined tensor");
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  if (!impl_) return;
  impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), std::vector<double>(data().begin(), data().end())); }

// ---------------------------------------------------------------------------
// Tape

void Tape::record(Node node) { nodes_.push_back(std::move(node)); }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss, Tape& tape) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  for (auto& node : tape.nodes()) node.output->grad.clear();
  if (loss.requires_grad()) {
    loss.storage()->grad_buffer()[0] = 1.0;
    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
      if (it->output->grad.empty()) continue;  // not on a path to the loss
      it->backward();
    }
  }
  for (auto& node : tape.nodes()) {
    for (auto& in : node.inputs) {
      if (in->requires_grad) in->grad_buffer();
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& x, double s) {
  return unary(x, "scale", [s](double v) { return v * s; }, [s](double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary(x, "add_scalar", [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v) {
        const double th = std::tanh(k * (v + c * v * v * v));
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * k * (1.0 + 3.0 * c * v * v);
      });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor exp(const Tensor& x) {
  require_defined(x, "exp");
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::exp(xv[i]);
  auto sx = x.storage();
  auto result = emit(x.shape(), out, {sx}, [sx, out](std::span<const double> g) {
    auto gx = grad_slot(sx);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * out[i];
  });
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + shape_str(as) + " and " + shape_str(bs));
  }
  const std::int64_t M = as[as.size() - 2];
  const std::int64_t K = as.back();
  const std::int64_t K2 = bs[bs.size() - 2];
  const std::int64_t N = bs.back();
  const bool shared_b = bs.size() == 2;
  if (K != K2 || (!shared_b && !std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2))) {
    throw ShapeError("matmul shape mismatch: " + shape_str(as) + " x " + shape_str(bs));
  }
  const std::int64_t batch = prod(as, 0, as.size() - 2);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(M);
  out_shape.push_back(N);
  std::vector<double> out(static_cast<std::size_t>(batch * M * N), 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::int64_t p = 0; p < batch; ++p) {
    const double* Ap = A + p * M * K;
    const double* Bp = shared_b ? B : B + p * K * N;
    double* Cp = out.data() + p * M * N;
    for (std::int64_t i = 0; i < M; ++i) {
      double* crow = Cp + i * N;
      for (std::int64_t k = 0; k < K; ++k) {
        const double aik = Ap[i * K + k];
        const double* brow = Bp + k * N;
        for (std::int64_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  auto sa = a.storage();
  auto sb = b.storage();
  return emit(std::move(out_shape), std::move(out), {sa, sb},
              [sa, sb, batch, M, K, N, shared_b](std::span<const double> g) {
                auto ga = grad_slot(sa);
                auto gb = grad_slot(sb);
                const double* A = sa->data.data();
                const double* B = sb->data.data();
                for (std::int64_t p = 0; p < batch; ++p) {
                  const double* Ap = A + p * M * K;
                  const double* Bp = shared_b ? B : B + p * K * N;
                  const double* Gp = g.data() + p * M * N;
                  if (!ga.empty()) {
                    double* GAp = ga.data() + p * M * K;
                    for (std::int64_t i = 0; i < M; ++i) {
                      const double* grow = Gp + i * N;
                      for (std::int64_t k = 0; k < K; ++k) {
                        const double* brow = Bp + k * N;
                        double acc = 0.0;
                        for (std::int64_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
                        GAp[i * K + k] += acc;
                      }
                    }
                  }
                  if (!gb.empty()) {
                    double* GBp = gb.data() + (shared_b ? 0 : p * K * N);
                    for (std::int64_t i = 0; i < M; ++i) {
                      const double* grow = Gp + i * N;
                      for (std::int64_t k = 0; k < K; ++k) {
                        const double aik = Ap[i * K + k];
                        double* gbrow = GBp + k * N;
                        for (std::int64_t j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
                      }
                    }
                  }
                }
              });
}

Tensor transpose_last(const Tensor& x) {
  require_defined(x, "transpose_last");
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose_last needs rank >= 2, got " + shape_str(s));
  const std::int64_t M = s[s.size() - 2];
  const std::int64_t N = s.back();
  const std::int64_t batch = prod(s, 0, s.size() - 2);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::int64_t p = 0; p < batch; ++p)
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < N; ++j) out[p * M * N + j * M + i] = xv[p * M * N + i * N + j];
  auto sx = x.storage();
  return emit(std::move(out_shape), std::move(out), {sx}, [sx, batch, M, N](std::span<const double> g) {
    auto gx = grad_slot(sx);
    if (gx.empty()) return;
    for (std::int64_t p = 0; p < batch; ++p)
      for (std::int64_t i = 0; i < M; ++i)
        for (std::int64_t j = 0; j < N; ++j) gx[p * M * N + i * N + j] += g[p * M * N + j * M + i];
  });
}

// ---------------------------------------------------------------------------
// Structure

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != static_cast<std::int64_t>(x.numel())) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  auto sx = x.storage();
  return emit(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {sx},
              [sx](std::span<const double> g) {
                auto gx = grad_slot(sx);
                if (gx.empty()) return;
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
              });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const Shape& first = parts.front().shape();
  axis = norm_axis(axis, static_cast<int>(first.size()), "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (static_cast<int>(i) == axis) || s[i] == first[i];
    if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const std::int64_t outer = prod(first, 0, axis);
  const std::int64_t tail = prod(first, axis + 1, first.size());
  const std::int64_t out_chunk = out_shape[axis] * tail;
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<StoragePtr> inputs;
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t chunk = p.shape()[axis] * tail;
    const auto pv = p.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * chunk, chunk, out.begin() + o * out_chunk + off);
    inputs.push_back(p.storage());
    offsets.push_back(off);
    off += chunk;
  }
  auto ins = inputs;
  return emit(std::move(out_shape), std::move(out), std::move(inputs),
              [ins, offsets, outer, out_chunk, tail, axis](std::span<const double> g) {
                for (std::size_t k = 0; k < ins.size(); ++k) {
                  auto gx = grad_slot(ins[k]);
                  if (gx.empty()) continue;
                  const std::int64_t chunk = ins[k]->shape[axis] * tail;
                  for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t i = 0; i < chunk; ++i) gx[o * chunk + i] += g[o * out_chunk + offsets[k] + i];
                }
              });
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  require_defined(x, "slice");
  const Shape& s = x.shape();
  axis = norm_axis(axis, static_cast<int>(s.size()), "slice");
  if (start < 0 || length <= 0 || start + length > s[axis]) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
                     shape_str(s));
  }
  const std::int64_t outer = prod(s, 0, axis);
  const std::int64_t tail = prod(s, axis + 1, s.size());
  const std::int64_t in_chunk = s[axis] * tail;
  const std::int64_t out_chunk = length * tail;
  Shape out_shape = s;
  out_shape[axis] = length;
  std::vector<double> out(static_cast<std::size_t>(outer * out_chunk));
  const auto xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + o * in_chunk + start * tail, out_chunk, out.begin() + o * out_chunk);
  auto sx = x.storage();
  return emit(std::move(out_shape), std::move(out), {sx},
              [sx, outer, in_chunk, out_chunk, start, tail](std::span<const double> g) {
                auto gx = grad_slot(sx);
                if (gx.empty()) return;
                for (std::int64_t o = 0; o < outer; ++o)
                  for (std::int64_t i = 0; i < out_chunk; ++i) gx[o * in_chunk + start * tail + i] += g[o * out_chunk + i];
              });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::vector<std::int64_t>>& rows) {
  require_defined(x, "gather_rows");
  const Shape& s = x.shape();
  if (s.size() != 3) throw ShapeError("gather_rows expects [B, N, D], got " + shape_str(s));
  const std::int64_t B = s[0], N = s[1], D = s[2];
  if (rows.size() != 1 && static_cast<std::int64_t>(rows.size()) != B) {
    throw ContractError("gather_rows: need 1 or " + std::to_string(B) + " index lists, got " +
                        std::to_string(rows.size()));
  }
  const std::size_t K = rows.front().size();
  if (K == 0) throw ContractError("gather_rows: empty index list");
  for (const auto& r : rows) {
    if (r.size() != K) throw ContractError("gather_rows: index lists differ in length");
    for (auto i : r)
      if (i < 0 || i >= N) throw ContractError("gather_rows: index " + std::to_string(i) + " out of range [0, " +
                                               std::to_string(N) + ")");
  }
  std::vector<double> out(static_cast<std::size_t>(B) * K * D);
  const auto xv = x.data();
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& r = rows.size() == 1 ? rows[0] : rows[b];
    for (std::size_t k = 0; k < K; ++k)
      std::copy_n(xv.begin() + (b * N + r[k]) * D, D, out.begin() + (b * K + k) * D);
  }
  auto sx = x.storage();
  return emit({B, static_cast<std::int64_t>(K), D}, std::move(out), {sx},
              [sx, rows, B, N, D, K](std::span<const double> g) {
                auto gx = grad_slot(sx);
                if (gx.empty()) return;
                for (std::int64_t b = 0; b < B; ++b) {
                  const auto& r = rows.size() == 1 ? rows[0] : rows[b];
                  for (std::size_t k = 0; k < K; ++k)
                    for (std::int64_t d = 0; d < D; ++d) gx[(b * N + r[k]) * D + d] += g[(b * K + k) * D + d];
                }
              });
}

Tensor embedding(const Tensor& table, const std::vector<std::int64_t>& indices, Shape leading_shape) {
  require_defined(table, "embedding");
  if (table.rank() != 2) throw ShapeError("embedding table must be [R, D], got " + shape_str(table.shape()));
  const std::int64_t R = table.dim(0), D = table.dim(1);
  if (shape_numel(leading_shape) != static_cast<std::int64_t>(indices.size())) {
    throw ShapeError("embedding: " + std::to_string(indices.size()) + " indices do not fill " +
                     shape_str(leading_shape));
  }
  for (auto i : indices)
    if (i < 0 || i >= R) throw ContractError("embedding: index " + std::to_string(i) + " out of range");
  std::vector<double> out(indices.size() * D);
  const auto tv = table.data();
  for (std::size_t k = 0; k < indices.size(); ++k) std::copy_n(tv.begin() + indices[k] * D, D, out.begin() + k * D);
  Shape out_shape = std::move(leading_shape);
  out_shape.push_back(D);
  auto st = table.storage();
  return emit(std::move(out_shape), std::move(out), {st}, [st, indices, D](std::span<const double> g) {
    auto gt = grad_slot(st);
    if (gt.empty()) return;
    for (std::size_t k = 0; k < indices.size(); ++k)
      for (std::int64_t d = 0; d < D; ++d) gt[indices[k] * D + d] += g[k * D + d];
  });
}

// ---------------------------------------------------------------------------
// Reductions and fused ops

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  const auto xv = x.data();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  auto sx = x.storage();
  return emit({}, {total}, {sx}, [sx](std::span<const double> g) {
    auto gx = grad_slot(sx);
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  const auto xv = x.data();
  const double n = static_cast<double>(xv.size());
  const double m = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
  auto sx = x.storage();
  return emit({}, {m}, {sx}, [sx, n](std::span<const double> g) {
    auto gx = grad_slot(sx);
    for (auto& v : gx) v += g[0] / n;
  });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  const std::int64_t N = x.shape().empty() ? 1 : x.shape().back();
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / N;
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * N;
    double* o = out.data() + r * N;
    const double mx = *std::max_element(in, in + N);
    double z = 0.0;
    for (std::int64_t j = 0; j < N; ++j) z += (o[j] = std::exp(in[j] - mx));
    const double inv = 1.0 / z;
    for (std::int64_t j = 0; j < N; ++j) o[j] *= inv;
  }
  auto sx = x.storage();
  auto y = out;
  return emit(x.shape(), std::move(out), {sx}, [sx, y, rows, N](std::span<const double> g) {
    auto gx = grad_slot(sx);
    if (gx.empty()) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * N;
      const double* gr = g.data() + r * N;
      double dot = 0.0;
      for (std::int64_t j = 0; j < N; ++j) dot += gr[j] * yr[j];
      for (std::int64_t j = 0; j < N; ++j) gx[r * N + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::int64_t D = x.shape().back();
  if (gain.numel() != static_cast<std::size_t>(D) || bias.numel() != static_cast<std::size_t>(D)) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(D) + " elements");
  }
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / D;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * D;
    double mu = 0.0;
    for (std::int64_t j = 0; j < D; ++j) mu += in[j];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::int64_t j = 0; j < D; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(D);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::int64_t j = 0; j < D; ++j) {
      const double h = (in[j] - mu) * inv;
      xhat[r * D + j] = h;
      out[r * D + j] = h * gv[j] + bv[j];
    }
  }
  auto sx = x.storage();
  auto sg = gain.storage();
  auto sb = bias.storage();
  return emit(x.shape(), std::move(out), {sx, sg, sb},
              [sx, sg, sb, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, D](std::span<const double> g) {
                auto gx = grad_slot(sx);
                auto gg = grad_slot(sg);
                auto gb = grad_slot(sb);
                const auto& gain = sg->data;
                std::vector<double> dh(static_cast<std::size_t>(D));
                for (std::int64_t r = 0; r < rows; ++r) {
                  const double* gr = g.data() + r * D;
                  const double* hr = xhat.data() + r * D;
                  double mean_dh = 0.0, mean_dh_h = 0.0;
                  for (std::int64_t j = 0; j < D; ++j) {
                    dh[j] = gr[j] * gain[j];
                    mean_dh += dh[j];
                    mean_dh_h += dh[j] * hr[j];
                    if (!gg.empty()) gg[j] += gr[j] * hr[j];
                    if (!gb.empty()) gb[j] += gr[j];
                  }
                  if (gx.empty()) continue;
                  mean_dh /= static_cast<double>(D);
                  mean_dh_h /= static_cast<double>(D);
                  for (std::int64_t j = 0; j < D; ++j)
                    gx[r * D + j] += inv_std[r] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                }
              });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_defined(a, "mse");
  require_defined(b, "mse");
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto av = a.data();
  const auto bv = b.data();
  const double n = static_cast<double>(av.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  auto sa = a.storage();
  auto sb = b.storage();
  return emit({}, {acc / n}, {sa, sb}, [sa, sb, n](std::span<const double> g) {
    auto ga = grad_slot(sa);
    auto gb = grad_slot(sb);
    const double k = 2.0 * g[0] / n;
    for (std::size_t i = 0; i < sa->data.size(); ++i) {
      const double d = sa->data[i] - sb->data[i];
      if (!ga.empty()) ga[i] += k * d;
      if (!gb.empty()) gb[i] -= k * d;
    }
  });
}

Tensor pairwise_sq_dist(const Tensor& a, const Tensor& b) {
  require_defined(a, "pairwise_sq_dist");
  require_defined(b, "pairwise_sq_dist");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError("pairwise_sq_dist: expected [n, d] and [m, d], got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::int64_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(static_cast<std::size_t>(n * m));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < d; ++k) {
        const double diff = av[i * d + k] - bv[j * d + k];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  auto sa = a.storage();
  auto sb = b.storage();
  return emit({n, m}, std::move(out), {sa, sb}, [sa, sb, n, m, d](std::span<const double> g) {
    auto ga = grad_slot(sa);
    auto gb = grad_slot(sb);
    const auto& av = sa->data;
    const auto& bv = sb->data;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; ++j) {
        const double gij = 2.0 * g[i * m + j];
        if (gij == 0.0) continue;
        for (std::int64_t k = 0; k < d; ++k) {
          const double diff = gij * (av[i * d + k] - bv[j * d + k]);
          if (!ga.empty()) ga[i * d + k] += diff;
          if (!gb.empty()) gb[j * d + k] -= diff;
        }
      }
  });
}

}  // namespace phmdiff
