#include "wsx/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

namespace wsx {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

std::atomic<std::uint64_t> g_seq{0};

ConstMatMap as_mat(const Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
MatMap as_mat(Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
ConstVecMap as_vec(const Tensor& t) { return {t.data().data(), Eigen::Index(t.size())}; }
VecMap as_vec(Tensor& t) { return {t.data().data(), Eigen::Index(t.size())}; }
Eigen::Map<const Eigen::RowVectorXd> as_row_vec(const Tensor& t) { return {t.data().data(), Eigen::Index(t.size())}; }
Eigen::Map<Eigen::RowVectorXd> as_row_vec(Tensor& t) { return {t.data().data(), Eigen::Index(t.size())}; }

std::size_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw Error(std::string(op) + ": " + detail);
}

void require_2d(const char* op, const Tensor& t, const char* which) {
  if (t.ndim() != 2) {
    shape_error(op, std::string(which) + " must be 2-D, got " + shape_str(t.shape()));
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    shape_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Node& input(Node& n, std::size_t i) { return *n.inputs[i]; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, Buffer values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (product(shape_) != values_.size()) {
    throw Error("Tensor: shape " + shape_str(shape_) + " does not match " + std::to_string(values_.size()) +
                " values");
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const noexcept { return ndim() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const noexcept {
  if (ndim() == 2) return shape_[1];
  if (ndim() == 1) return shape_[0];
  return size();
}

double Tensor::item() const {
  if (values_.size() != 1) throw Error("Tensor::item: tensor has " + std::to_string(values_.size()) + " elements");
  return values_[0];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

// ---- Node / Var -----------------------------------------------------------

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape(), 0.0);
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (g.size() != value.size()) {
    throw Error("backward of '" + op + "': gradient has " + std::to_string(g.size()) +
                " elements, value has shape " + shape_str(value.shape()));
  }
  Tensor& buf = grad_buffer();
  as_vec(buf) += as_vec(g);
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
}

Var Var::from_node(NodePtr node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

Tensor Var::grad() const {
  if (!node_) throw Error("Var::grad: undefined variable");
  if (node_->grad.empty()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var record(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  const bool any_grad = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (any_grad) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node());
    node->backward = std::move(backward);
  }
  return Var::from_node(std::move(node));
}

void backward(const Var& loss) {
  if (!loss.defined()) throw Error("backward: undefined loss");
  if (loss.size() != 1) throw Error("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && !seen.count(in.get())) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  loss.node()->accumulate(Tensor(loss.shape(), 1.0));
  for (Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

std::uint64_t DropoutContext::next_seed() { return splitmix64(seed ^ splitmix64(counter++)); }

// ---- built-in ops ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_2d("matmul", av, "lhs");
  require_2d("matmul", bv, "rhs");
  if (av.cols() != bv.rows()) {
    shape_error("matmul", "inner dims differ: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }
  Tensor out({av.rows(), bv.cols()});
  if (av.rows() == 1) {
    // row-vector products go through gemv and an outer product instead of gemm
    as_row_vec(out).noalias() = as_row_vec(av) * as_mat(bv);
    return record("matmul", std::move(out), {a, b}, [](Node& n) {
      Node& A = input(n, 0);
      Node& B = input(n, 1);
      auto g = as_row_vec(n.grad);
      if (A.requires_grad) as_row_vec(A.grad_buffer()).noalias() += g * as_mat(B.value).transpose();
      if (B.requires_grad) as_mat(B.grad_buffer()).noalias() += as_row_vec(A.value).transpose() * g;
    });
  }
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return record("matmul", std::move(out), {a, b}, [](Node& n) {
    Node& A = input(n, 0);
    Node& B = input(n, 1);
    auto g = as_mat(n.grad);
    if (A.requires_grad) as_mat(A.grad_buffer()).noalias() += g * as_mat(B.value).transpose();
    if (B.requires_grad) as_mat(B.grad_buffer()).noalias() += as_mat(A.value).transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_2d("matmul_nt", av, "lhs");
  require_2d("matmul_nt", bv, "rhs");
  if (av.cols() != bv.cols()) {
    shape_error("matmul_nt", "inner dims differ: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) + "^T");
  }
  Tensor out({av.rows(), bv.rows()});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv).transpose();
  return record("matmul_nt", std::move(out), {a, b}, [](Node& n) {
    Node& A = input(n, 0);
    Node& B = input(n, 1);
    auto g = as_mat(n.grad);
    if (A.requires_grad) as_mat(A.grad_buffer()).noalias() += g * as_mat(B.value);
    if (B.requires_grad) as_mat(B.grad_buffer()).noalias() += g.transpose() * as_mat(A.value);
  });
}

Var add(const Var& a, const Var& b) {
  require_same("add", a.value(), b.value());
  Tensor out = a.value();
  as_vec(out) += as_vec(b.value());
  return record("add", std::move(out), {a, b}, [](Node& n) {
    for (auto& in : n.inputs)
      if (in->requires_grad) in->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same("sub", a.value(), b.value());
  Tensor out = a.value();
  as_vec(out) -= as_vec(b.value());
  return record("sub", std::move(out), {a, b}, [](Node& n) {
    if (input(n, 0).requires_grad) input(n, 0).accumulate(n.grad);
    if (input(n, 1).requires_grad) as_vec(input(n, 1).grad_buffer()) -= as_vec(n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same("mul", a.value(), b.value());
  Tensor out = a.value();
  as_vec(out).array() *= as_vec(b.value()).array();
  return record("mul", std::move(out), {a, b}, [](Node& n) {
    Node& A = input(n, 0);
    Node& B = input(n, 1);
    if (A.requires_grad) as_vec(A.grad_buffer()).array() += as_vec(n.grad).array() * as_vec(B.value).array();
    if (B.requires_grad) as_vec(B.grad_buffer()).array() += as_vec(n.grad).array() * as_vec(A.value).array();
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  as_vec(out) *= s;
  return record("scale", std::move(out), {a}, [s](Node& n) { as_vec(input(n, 0).grad_buffer()) += s * as_vec(n.grad); });
}

Var add_row(const Var& a, const Var& row) {
  const Tensor& av = a.value();
  require_2d("add_row", av, "lhs");
  if (row.size() != av.cols()) {
    shape_error("add_row", "row of shape " + shape_str(row.shape()) + " cannot broadcast over " + shape_str(av.shape()));
  }
  Tensor out = av;
  as_mat(out).rowwise() += as_vec(row.value()).transpose();
  return record("add_row", std::move(out), {a, row}, [](Node& n) {
    if (input(n, 0).requires_grad) input(n, 0).accumulate(n.grad);
    Node& R = input(n, 1);
    if (R.requires_grad) as_vec(R.grad_buffer()) += as_mat(n.grad).colwise().sum().transpose();
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  as_vec(out) = as_vec(out).array().tanh();
  return record("tanh", std::move(out), {a}, [](Node& n) {
    auto y = as_vec(n.value).array();
    as_vec(input(n, 0).grad_buffer()).array() += as_vec(n.grad).array() * (1.0 - y * y);
  });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  as_vec(out) = as_vec(out).cwiseMax(0.0);
  return record("relu", std::move(out), {a}, [](Node& n) {
    auto x = as_vec(input(n, 0).value).array();
    as_vec(input(n, 0).grad_buffer()).array() += (x > 0.0).select(as_vec(n.grad).array(), 0.0);
  });
}

Var exp(const Var& a) {
  Tensor out = a.value();
  as_vec(out) = as_vec(out).array().exp();
  return record("exp", std::move(out), {a}, [](Node& n) {
    as_vec(input(n, 0).grad_buffer()).array() += as_vec(n.grad).array() * as_vec(n.value).array();
  });
}

Var log(const Var& a) {
  Tensor out = a.value();
  as_vec(out) = as_vec(out).array().log();
  return record("log", std::move(out), {a}, [](Node& n) {
    as_vec(input(n, 0).grad_buffer()).array() += as_vec(n.grad).array() / as_vec(input(n, 0).value).array();
  });
}

Var log_floor(const Var& a, double floor) {
  Tensor out = a.value();
  as_vec(out) = as_vec(out).cwiseMax(floor).array().log();
  return record("log_floor", std::move(out), {a}, [floor](Node& n) {
    auto x = as_vec(input(n, 0).value).array();
    as_vec(input(n, 0).grad_buffer()).array() += (x > floor).select(as_vec(n.grad).array() / x, 0.0);
  });
}

Var sum(const Var& a) {
  return record("sum", Tensor::scalar(as_vec(a.value()).sum()), {a}, [](Node& n) {
    as_vec(input(n, 0).grad_buffer()).array() += n.grad.item();
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) shape_error("mean", "empty input");
  const double k = 1.0 / double(a.size());
  return record("mean", Tensor::scalar(as_vec(a.value()).sum() * k), {a}, [k](Node& n) {
    as_vec(input(n, 0).grad_buffer()).array() += n.grad.item() * k;
  });
}

Var dot(const Var& a, const Var& b) {
  if (a.size() != b.size()) {
    shape_error("dot", "size mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  return record("dot", Tensor::scalar(as_vec(a.value()).dot(as_vec(b.value()))), {a, b}, [](Node& n) {
    const double g = n.grad.item();
    if (input(n, 0).requires_grad) as_vec(input(n, 0).grad_buffer()) += g * as_vec(input(n, 1).value);
    if (input(n, 1).requires_grad) as_vec(input(n, 1).grad_buffer()) += g * as_vec(input(n, 0).value);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.value().ndim() > 2 || p.value().cols() != cols) {
      shape_error("concat_rows", "column mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    offsets.push_back(rows);
    rows += p.value().rows();
  }
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i].value().data().begin(), parts[i].value().data().end(), out.data().begin() + offsets[i] * cols);
  }
  return record("concat_rows", std::move(out), parts, [offsets, cols](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      Node& in = *n.inputs[i];
      if (!in.requires_grad) continue;
      Tensor& g = in.grad_buffer();
      const double* src = n.grad.data().data() + offsets[i] * cols;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) shape_error("concat_cols", "no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.value().ndim() > 2 || p.value().rows() != rows) {
      shape_error("concat_cols", "row mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    offsets.push_back(cols);
    cols += p.value().cols();
  }
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = parts[i].value();
    as_mat(out).middleCols(Eigen::Index(offsets[i]), Eigen::Index(v.cols())) = as_mat(v);
  }
  return record("concat_cols", std::move(out), parts, [offsets](Node& n) {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      Node& in = *n.inputs[i];
      if (!in.requires_grad) continue;
      Tensor& g = in.grad_buffer();
      as_mat(g) += as_mat(n.grad).middleCols(Eigen::Index(offsets[i]), Eigen::Index(g.cols()));
    }
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_2d("slice_rows", av, "input");
  if (begin > end || end > av.rows()) {
    shape_error("slice_rows", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                                  shape_str(av.shape()));
  }
  const std::size_t cols = av.cols();
  Tensor out({end - begin, cols});
  std::copy(av.data().begin() + begin * cols, av.data().begin() + end * cols, out.data().begin());
  return record("slice_rows", std::move(out), {a}, [begin, cols](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    for (std::size_t k = 0; k < n.grad.size(); ++k) g[begin * cols + k] += n.grad[k];
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_2d("slice_cols", av, "input");
  if (begin > end || end > av.cols()) {
    shape_error("slice_cols", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                                  shape_str(av.shape()));
  }
  Tensor out({av.rows(), end - begin});
  as_mat(out) = as_mat(av).middleCols(Eigen::Index(begin), Eigen::Index(end - begin));
  return record("slice_cols", std::move(out), {a}, [begin](Node& n) {
    as_mat(input(n, 0).grad_buffer()).middleCols(Eigen::Index(begin), Eigen::Index(n.grad.cols())) += as_mat(n.grad);
  });
}

Var reshape(const Var& a, Shape shape) {
  if (product(shape) != a.size()) {
    shape_error("reshape", "cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), a.value().values());
  return record("reshape", std::move(out), {a}, [](Node& n) { input(n, 0).accumulate(n.grad); });
}

Var select(const Var& a, std::size_t index) {
  if (index >= a.size()) {
    shape_error("select", "index " + std::to_string(index) + " outside " + shape_str(a.shape()));
  }
  return record("select", Tensor::scalar(a.value()[index]), {a}, [index](Node& n) {
    input(n, 0).grad_buffer()[index] += n.grad.item();
  });
}

Var dropout(const Var& a, double p, DropoutContext& ctx) {
  if (p < 0.0 || p >= 1.0) shape_error("dropout", "probability must be in [0,1), got " + std::to_string(p));
  if (!ctx.training || p == 0.0) return a;
  // splitmix64 stream; mt19937 seeding per call dominated small layers
  std::uint64_t state = ctx.next_seed();
  const double inv = 1.0 / (1.0 - p);
  Tensor mask(a.shape());
  for (auto& m : mask.values()) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    m = double(z >> 11) * 0x1.0p-53 >= p ? inv : 0.0;
  }
  Tensor out = a.value();
  as_vec(out).array() *= as_vec(mask).array();
  return record("dropout", std::move(out), {a}, [mask = std::move(mask)](Node& n) {
    as_vec(input(n, 0).grad_buffer()).array() += as_vec(n.grad).array() * as_vec(mask).array();
  });
}

Var embedding_lookup(const Var& table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  require_2d("embedding_lookup", tv, "table");
  const std::size_t cols = tv.cols();
  Tensor out({ids.size(), cols});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      shape_error("embedding_lookup", "id " + std::to_string(ids[i]) + " outside table of " +
                                          std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.data().begin() + ids[i] * cols, cols, out.data().begin() + i * cols);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return record("embedding_lookup", std::move(out), {table}, [saved = std::move(saved), cols](Node& n) {
    Tensor& g = input(n, 0).grad_buffer();
    for (std::size_t i = 0; i < saved.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) g[saved[i] * cols + c] += n.grad[i * cols + c];
  });
}

Var softmax_rows(const Var& a) {
  Tensor out = a.value();
  if (out.ndim() > 2) shape_error("softmax_rows", "expected at most 2-D, got " + shape_str(out.shape()));
  if (out.empty()) shape_error("softmax_rows", "empty input");
  auto m = as_mat(out);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return record("softmax_rows", std::move(out), {a}, [](Node& n) {
    auto y = as_mat(n.value);
    auto g = as_mat(n.grad);
    auto gi = as_mat(input(n, 0).grad_buffer());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double inner = y.row(r).dot(g.row(r));
      gi.row(r).array() += y.row(r).array() * (g.row(r).array() - inner);
    }
  });
}

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps) {
  const Tensor& av = a.value();
  require_2d("layer_norm_rows", av, "input");
  const std::size_t cols = av.cols();
  if (gain.size() != cols || bias.size() != cols) {
    shape_error("layer_norm_rows", "gain/bias of size " + std::to_string(gain.size()) + "/" +
                                       std::to_string(bias.size()) + " for width " + std::to_string(cols));
  }
  Tensor normed = av;
  std::vector<double> inv_std(av.rows());
  auto x = as_mat(normed);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    x.row(r).array() -= mu;
    const double var = x.row(r).squaredNorm() / double(cols);
    inv_std[std::size_t(r)] = 1.0 / std::sqrt(var + eps);
    x.row(r) *= inv_std[std::size_t(r)];
  }
  Tensor out = normed;
  auto o = as_mat(out);
  o.array().rowwise() *= as_vec(gain.value()).transpose().array();
  o.rowwise() += as_vec(bias.value()).transpose();
  return record("layer_norm_rows", std::move(out), {a, gain, bias},
                [normed = std::move(normed), inv_std = std::move(inv_std)](Node& n) {
                  auto g = as_mat(n.grad);
                  auto xh = as_mat(normed);
                  Node& A = input(n, 0);
                  Node& G = input(n, 1);
                  Node& B = input(n, 2);
                  if (G.requires_grad) as_vec(G.grad_buffer()) += (g.array() * xh.array()).colwise().sum().transpose().matrix();
                  if (B.requires_grad) as_vec(B.grad_buffer()) += g.colwise().sum().transpose();
                  if (A.requires_grad) {
                    auto ga = as_mat(A.grad_buffer());
                    const auto gamma = as_vec(G.value).transpose().array();
                    const double k = 1.0 / double(xh.cols());
                    for (Eigen::Index r = 0; r < xh.rows(); ++r) {
                      Eigen::RowVectorXd dxh = (g.row(r).array() * gamma).matrix();
                      const double m1 = dxh.sum() * k;
                      const double m2 = dxh.dot(xh.row(r)) * k;
                      ga.row(r).array() +=
                          inv_std[std::size_t(r)] * (dxh.array() - m1 - xh.row(r).array() * m2);
                    }
                  }
                });
}

// ---- custom ops -----------------------------------------------------------

CustomOp::CustomOp(std::string name, CustomForward forward, CustomBackward backward)
    : name_(std::make_shared<const std::string>(std::move(name))),
      forward_(std::move(forward)),
      backward_(std::move(backward)) {}

Var CustomOp::operator()(const std::vector<Var>& inputs) const {
  std::vector<Tensor> values;
  values.reserve(inputs.size());
  for (const auto& v : inputs) values.push_back(v.value());
  CustomForwardResult res = forward_(values);
  auto name = name_;
  auto bwd = backward_;
  return record(name_->c_str(), std::move(res.output), inputs,
                [name, bwd, saved = std::move(res.saved), values = std::move(values)](Node& n) {
                  std::vector<Tensor> grads = bwd(saved, values, n.grad);
                  if (grads.size() != n.inputs.size()) {
                    throw Error("custom op '" + *name + "': backward returned " + std::to_string(grads.size()) +
                                " grads for " + std::to_string(n.inputs.size()) + " inputs");
                  }
                  for (std::size_t i = 0; i < grads.size(); ++i) {
                    Node& in = *n.inputs[i];
                    if (!in.requires_grad) continue;
                    if (grads[i].size() != in.value.size()) {
                      throw Error("custom op '" + *name + "': backward grad " + std::to_string(i) + " has shape " +
                                  shape_str(grads[i].shape()) + ", input has " + shape_str(in.value.shape()));
                    }
                    in.accumulate(grads[i]);
                  }
                });
}

CustomOp register_custom(std::string name, CustomForward forward, CustomBackward backward) {
  return CustomOp(std::move(name), std::move(forward), std::move(backward));
}

}  // namespace wsx
