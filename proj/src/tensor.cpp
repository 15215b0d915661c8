#include "tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace c3 {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
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

namespace {

template <typename R>
using RowMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename R>
using MatMap = Eigen::Map<RowMat<R>>;
template <typename R>
using CMatMap = Eigen::Map<const RowMat<R>>;
template <typename R>
using StridedMap = Eigen::Map<RowMat<R>, 0, Eigen::OuterStride<>>;
template <typename R>
using CStridedMap = Eigen::Map<const RowMat<R>, 0, Eigen::OuterStride<>>;

template <typename R>
using NodePtr = std::shared_ptr<TensorNode<R>>;

template <typename R>
bool tracking(std::initializer_list<const Tensor<R>*> inputs) {
  if (GradTape<R>::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename R>
Tensor<R> make(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode<R>>();
  node->data.assign(shape_numel(shape), R(0));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor<R>(std::move(node));
}

template <typename R>
void record(std::function<void()> rule) {
  GradTape<R>::active()->record(std::move(rule));
}

// Output grad present and input wants one.
template <typename R>
bool flows(const NodePtr<R>& out, const NodePtr<R>& in) {
  return in && in->requires_grad && out->grad.size() == out->data.size();
}

void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace

// ---- Tensor ------------------------------------------------------------------

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape, bool requires_grad) {
  return make<Real>(std::move(shape), requires_grad);
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value, bool requires_grad) {
  auto t = make<Real>(std::move(shape), requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

template <typename Real>
Tensor<Real> Tensor<Real>::from(Shape shape, std::vector<Real> data, bool requires_grad) {
  require(shape_numel(shape) == data.size(), ErrorKind::kDimension,
          "tensor data length " + std::to_string(data.size()) + " does not match shape " +
              shape_str(shape));
  auto node = std::make_shared<TensorNode<Real>>();
  node->shape = std::move(shape);
  node->data.assign(data.begin(), data.end());
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Real>
Real Tensor<Real>::item() const {
  require(numel() == 1, ErrorKind::kDimension, "item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename Real>
std::span<Real> Tensor<Real>::grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone() const {
  return from(node_->shape, std::vector<Real>(node_->data.begin(), node_->data.end()), node_->requires_grad);
}

// ---- GradTape ----------------------------------------------------------------

template <typename Real>
GradTape<Real>::GradTape() : previous_(active_) {
  active_ = this;
}

template <typename Real>
GradTape<Real>::~GradTape() {
  active_ = previous_;
}

template <typename Real>
void GradTape<Real>::backward(const Tensor<Real>& loss) {
  require(!consumed_, ErrorKind::kInternal, "backward called twice on one tape");
  require(loss.numel() == 1, ErrorKind::kDimension,
          "backward needs a scalar loss, got " + shape_str(loss.shape()));
  consumed_ = true;
  if (!loss.requires_grad()) return;
  loss.node()->ensure_grad();
  loss.node()->grad[0] += Real(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
  records_.clear();
}

// ---- linear algebra ----------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), ErrorKind::kDimension,
          "matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool rg = tracking<Real>({&a, &b});
  auto out = make<Real>({m, n}, rg);
  MatMap<Real>(out.data().data(), m, n).noalias() =
      CMatMap<Real>(a.data().data(), m, k) * CMatMap<Real>(b.data().data(), k, n);
  if (rg) {
    record<Real>([an = a.shared_node(), bn = b.shared_node(), on = out.shared_node(), m, k, n] {
      CMatMap<Real> dc(on->grad.data(), m, n);
      if (flows(on, an)) {
        an->ensure_grad();
        MatMap<Real>(an->grad.data(), m, k).noalias() += dc * CMatMap<Real>(bn->data.data(), k, n).transpose();
      }
      if (flows(on, bn)) {
        bn->ensure_grad();
        MatMap<Real>(bn->grad.data(), k, n).noalias() += CMatMap<Real>(an->data.data(), m, k).transpose() * dc;
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias) {
  require(w.ndim() == 2 && x.cols() == w.dim(0), ErrorKind::kDimension,
          "linear shape mismatch: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  const std::size_t m = x.rows(), k = w.dim(0), n = w.dim(1);
  if (bias.defined()) {
    require(bias.numel() == n, ErrorKind::kDimension,
            "linear bias " + shape_str(bias.shape()) + " does not match output width " + std::to_string(n));
  }
  const bool rg = tracking<Real>({&x, &w, &bias});
  Shape shape = x.shape();
  shape.back() = n;
  auto out = make<Real>(shape, rg);
  MatMap<Real> y(out.data().data(), m, n);
  y.noalias() = CMatMap<Real>(x.data().data(), m, k) * CMatMap<Real>(w.data().data(), k, n);
  if (bias.defined()) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.data().data(), n);
  }
  if (rg) {
    NodePtr<Real> bn = bias.defined() ? bias.shared_node() : nullptr;
    record<Real>([xn = x.shared_node(), wn = w.shared_node(), bn, on = out.shared_node(), m, k, n] {
      CMatMap<Real> dy(on->grad.data(), m, n);
      if (flows(on, xn)) {
        xn->ensure_grad();
        MatMap<Real>(xn->grad.data(), m, k).noalias() += dy * CMatMap<Real>(wn->data.data(), k, n).transpose();
      }
      if (flows(on, wn)) {
        wn->ensure_grad();
        MatMap<Real>(wn->grad.data(), k, n).noalias() += CMatMap<Real>(xn->data.data(), m, k).transpose() * dy;
      }
      if (flows(on, bn)) {
        bn->ensure_grad();
        Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bn->grad.data(), n) += dy.colwise().sum();
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
  require(x.ndim() == 2, ErrorKind::kDimension, "transpose needs a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>({n, m}, rg);
  MatMap<Real>(out.data().data(), n, m) = CMatMap<Real>(x.data().data(), m, n).transpose();
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node(), m, n] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      MatMap<Real>(xn->grad.data(), m, n) += CMatMap<Real>(on->grad.data(), n, m).transpose();
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), ErrorKind::kDimension,
          "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>(std::move(shape), rg);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node()] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

// ---- elementwise -------------------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          "add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool rg = tracking<Real>({&a, &b});
  auto out = make<Real>(a.shape(), rg);
  auto y = out.data();
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] + bd[i];
  if (rg) {
    record<Real>([an = a.shared_node(), bn = b.shared_node(), on = out.shared_node()] {
      for (const auto& in : {an, bn}) {
        if (!flows(on, in)) continue;
        in->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) in->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  const std::size_t n = x.cols(), m = x.rows();
  require(bias.numel() == n, ErrorKind::kDimension,
          "bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  const bool rg = tracking<Real>({&x, &bias});
  auto out = make<Real>(x.shape(), rg);
  auto y = out.data();
  auto xd = x.data(), bd = bias.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = xd[r * n + c] + bd[c];
  if (rg) {
    record<Real>([xn = x.shared_node(), bn = bias.shared_node(), on = out.shared_node(), m, n] {
      if (flows(on, xn)) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      }
      if (flows(on, bn)) {
        bn->ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) bn->grad[c] += on->grad[r * n + c];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a.shape() == b.shape(), ErrorKind::kDimension,
          "mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const bool rg = tracking<Real>({&a, &b});
  auto out = make<Real>(a.shape(), rg);
  auto y = out.data();
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = ad[i] * bd[i];
  if (rg) {
    record<Real>([an = a.shared_node(), bn = b.shared_node(), on = out.shared_node()] {
      if (flows(on, an)) {
        an->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->data[i];
      }
      if (flows(on, bn)) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->data[i];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor) {
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>(x.shape(), rg);
  auto y = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] * factor;
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node(), factor] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * factor;
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>({1}, rg);
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  out.data()[0] = acc;
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node()] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      const Real g = on->grad[0];
      for (auto& v : xn->grad) v += g;
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> silu(const Tensor<Real>& x) {
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>(x.shape(), rg);
  auto y = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xd[i] / (Real(1) + std::exp(-xd[i]));
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node()] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const Real v = xn->data[i];
        const Real s = Real(1) / (Real(1) + std::exp(-v));
        xn->grad[i] += on->grad[i] * s * (Real(1) + v * (Real(1) - s));
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  constexpr Real kC = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real kA = Real(0.044715);
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>(x.shape(), rg);
  auto y = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const Real v = xd[i];
    y[i] = Real(0.5) * v * (Real(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node()] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) {
        const Real v = xn->data[i];
        const Real t = std::tanh(kC * (v + kA * v * v * v));
        const Real dt = (Real(1) - t * t) * kC * (Real(1) + Real(3) * kA * v * v);
        xn->grad[i] += on->grad[i] * (Real(0.5) * (Real(1) + t) + Real(0.5) * v * dt);
      }
    });
  }
  return out;
}

// ---- normalization -----------------------------------------------------------

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, int axis) {
  const auto nd = static_cast<int>(x.ndim());
  const int ax = axis < 0 ? axis + nd : axis;
  require(ax >= 0 && ax < nd, ErrorKind::kDimension,
          "softmax axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(i);
  for (int i = ax + 1; i < nd; ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(ax);
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>(x.shape(), rg);
  auto y = out.data();
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
      Real z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Real e = std::exp(xd[base + j * inner] - mx);
        y[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= z;
    }
  }
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node(), outer, inner, n] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          Real dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += on->grad[base + j * inner] * on->data[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            xn->grad[idx] += on->data[idx] * (on->grad[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> rms_norm(const Tensor<Real>& x, const Tensor<Real>& gain, Real eps) {
  const std::size_t d = x.cols(), m = x.rows();
  require(d >= 1 && gain.numel() == d, ErrorKind::kDimension,
          "rms_norm gain " + shape_str(gain.shape()) + " does not match " + shape_str(x.shape()));
  require(eps > 0, ErrorKind::kInvalidArgument, "rms_norm eps must be positive");
  const bool rg = tracking<Real>({&x, &gain});
  auto out = make<Real>(x.shape(), rg);
  Buffer<Real> inv_rms(m);
  auto y = out.data();
  auto xd = x.data(), gd = gain.data();
  for (std::size_t r = 0; r < m; ++r) {
    const Real* row = xd.data() + r * d;
    double ss = 0;
    for (std::size_t c = 0; c < d; ++c) ss += double(row[c]) * double(row[c]);
    const Real inv = Real(1.0 / std::sqrt(ss / double(d) + double(eps)));
    inv_rms[r] = inv;
    for (std::size_t c = 0; c < d; ++c) y[r * d + c] = row[c] * inv * gd[c];
  }
  if (rg) {
    record<Real>([xn = x.shared_node(), gn = gain.shared_node(), on = out.shared_node(),
                  inv_rms = std::move(inv_rms), m, d] {
      const bool dx = flows(on, xn), dg = flows(on, gn);
      if (dx) xn->ensure_grad();
      if (dg) gn->ensure_grad();
      for (std::size_t r = 0; r < m; ++r) {
        const Real* row = xn->data.data() + r * d;
        const Real* dy = on->grad.data() + r * d;
        const Real inv = inv_rms[r];
        if (dg) {
          for (std::size_t c = 0; c < d; ++c) gn->grad[c] += dy[c] * row[c] * inv;
        }
        if (dx) {
          Real dot = 0;
          for (std::size_t c = 0; c < d; ++c) dot += dy[c] * gn->data[c] * row[c];
          const Real k = inv * inv * inv * dot / Real(d);
          for (std::size_t c = 0; c < d; ++c) xn->grad[r * d + c] += dy[c] * gn->data[c] * inv - row[c] * k;
        }
      }
    });
  }
  return out;
}

// ---- indexing ----------------------------------------------------------------

template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const std::int32_t> ids) {
  require(table.ndim() == 2, ErrorKind::kDimension, "embedding table must be a matrix");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  for (auto id : ids) {
    require(id >= 0 && static_cast<std::size_t>(id) < vocab, ErrorKind::kInvalidArgument,
            "token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab));
  }
  const bool rg = tracking<Real>({&table});
  auto out = make<Real>({ids.size(), d}, rg);
  auto y = out.data();
  auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(td.begin() + std::size_t(ids[i]) * d, d, y.begin() + i * d);
  if (rg) {
    record<Real>([tn = table.shared_node(), on = out.shared_node(), ids = std::vector<std::int32_t>(ids.begin(), ids.end()), d] {
      if (!flows(on, tn)) return;
      tn->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        Real* dst = tn->grad.data() + std::size_t(ids[i]) * d;
        const Real* src = on->grad.data() + i * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> concat_rows(std::span<const Tensor<Real>> parts) {
  require(!parts.empty(), ErrorKind::kInvalidArgument, "concat of zero tensors");
  Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t total_rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p.ndim() >= 1 && Shape(p.shape().begin() + 1, p.shape().end()) == trailing, ErrorKind::kDimension,
            "concat shape mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total_rows += p.dim(0);
    rg = rg || tracking<Real>({&p});
  }
  Shape shape = parts[0].shape();
  shape[0] = total_rows;
  auto out = make<Real>(shape, rg);
  std::size_t offset = 0;
  std::vector<NodePtr<Real>> nodes;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset);
    nodes.push_back(p.shared_node());
    offsets.push_back(offset);
    offset += p.numel();
  }
  if (rg) {
    record<Real>([nodes = std::move(nodes), offsets = std::move(offsets), on = out.shared_node()] {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!flows(on, nodes[i])) continue;
        nodes[i]->ensure_grad();
        const Real* src = on->grad.data() + offsets[i];
        for (std::size_t j = 0; j < nodes[i]->grad.size(); ++j) nodes[i]->grad[j] += src[j];
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> slice_rows(const Tensor<Real>& x, std::size_t begin, std::size_t count) {
  require(x.ndim() >= 1 && begin + count <= x.dim(0), ErrorKind::kDimension,
          "slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") out of range for " +
              shape_str(x.shape()));
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>(shape, rg);
  std::copy_n(x.data().begin() + begin * row, count * row, out.data().begin());
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node(), offset = begin * row] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      for (std::size_t j = 0; j < on->grad.size(); ++j) xn->grad[offset + j] += on->grad[j];
    });
  }
  return out;
}

// ---- attention ---------------------------------------------------------------

namespace {

// angle(position, j) = position * base^(-2j/d_head). Tables are per thread and
// grow on demand; entry [p * half + j] holds cos/sin for position p.
struct RotaryTable {
  std::size_t d_head = 0;
  double base = 0;
  std::vector<double> cos, sin;
};

const RotaryTable& rotary_table(std::size_t d_head, double base, std::int64_t max_position) {
  thread_local std::vector<RotaryTable> tables;
  RotaryTable* table = nullptr;
  for (auto& t : tables) {
    if (t.d_head == d_head && t.base == base) table = &t;
  }
  if (table == nullptr) {
    tables.push_back({d_head, base, {}, {}});
    table = &tables.back();
  }
  const std::size_t half = d_head / 2;
  const std::size_t have = half == 0 ? 0 : table->cos.size() / half;
  const std::size_t need = std::size_t(max_position) + 1;
  if (have < need) {
    const std::size_t target = std::max(need, 2 * have);
    table->cos.resize(target * half);
    table->sin.resize(target * half);
    for (std::size_t p = have; p < target; ++p) {
      for (std::size_t j = 0; j < half; ++j) {
        const double angle = double(p) * std::pow(base, -2.0 * double(j) / double(d_head));
        table->cos[p * half + j] = std::cos(angle);
        table->sin[p * half + j] = std::sin(angle);
      }
    }
  }
  return *table;
}

template <typename Real>
void rotate_rows(std::span<Real> data, std::span<const std::int64_t> positions, std::size_t n_heads,
                 std::size_t d_head, double base, double sign) {
  const std::size_t half = d_head / 2;
  const std::size_t width = n_heads * d_head;
  std::int64_t max_position = 0;
  for (auto p : positions) {
    require(p >= 0, ErrorKind::kInvalidArgument, "rotary position must be non-negative");
    max_position = std::max(max_position, p);
  }
  const RotaryTable& table = rotary_table(d_head, base, max_position);
  Buffer<Real> cs(half), sn(half);
  for (std::size_t t = 0; t < positions.size(); ++t) {
    const std::size_t row = std::size_t(positions[t]) * half;
    for (std::size_t j = 0; j < half; ++j) {
      cs[j] = Real(table.cos[row + j]);
      sn[j] = Real(sign * table.sin[row + j]);
    }
    for (std::size_t h = 0; h < n_heads; ++h) {
      Real* v = data.data() + t * width + h * d_head;
      for (std::size_t j = 0; j < half; ++j) {
        const Real a = v[j], b = v[j + half];
        v[j] = a * cs[j] - b * sn[j];
        v[j + half] = b * cs[j] + a * sn[j];
      }
    }
  }
}

}  // namespace

template <typename Real>
void rope_rotate(std::span<Real> head, std::int64_t position, double base) {
  require(head.size() % 2 == 0, ErrorKind::kInvalidArgument,
          "rotary embedding needs an even head dimension, got " + std::to_string(head.size()));
  const std::int64_t pos[1] = {position};
  rotate_rows<Real>(head, pos, 1, head.size(), base, 1.0);
}

template <typename Real>
Tensor<Real> rope(const Tensor<Real>& x, std::span<const std::int64_t> positions, std::size_t n_heads,
                  double base) {
  require(x.ndim() == 2 && x.dim(0) == positions.size(), ErrorKind::kDimension,
          "rope expects [T, width] with T = " + std::to_string(positions.size()) + ", got " + shape_str(x.shape()));
  require(n_heads > 0 && x.dim(1) % n_heads == 0, ErrorKind::kDimension, "rope width not divisible by heads");
  const std::size_t d_head = x.dim(1) / n_heads;
  require(d_head % 2 == 0, ErrorKind::kInvalidArgument,
          "rotary embedding needs an even head dimension, got " + std::to_string(d_head));
  const bool rg = tracking<Real>({&x});
  auto out = make<Real>(x.shape(), rg);
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  rotate_rows<Real>(out.data(), positions, n_heads, d_head, base, 1.0);
  if (rg) {
    record<Real>([xn = x.shared_node(), on = out.shared_node(),
                  pos = std::vector<std::int64_t>(positions.begin(), positions.end()), n_heads, d_head, base] {
      if (!flows(on, xn)) return;
      xn->ensure_grad();
      Buffer<Real> g = on->grad;
      rotate_rows<Real>(std::span<Real>(g), pos, n_heads, d_head, base, -1.0);
      for (std::size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> causal_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                              std::size_t n_heads) {
  require(q.ndim() == 2 && k.ndim() == 2 && v.ndim() == 2 && k.shape() == v.shape() && q.dim(1) == k.dim(1),
          ErrorKind::kDimension,
          "attention shape mismatch: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
              shape_str(v.shape()));
  require(q.dim(0) <= k.dim(0), ErrorKind::kDimension, "attention has more queries than keys");
  require(n_heads > 0 && q.dim(1) % n_heads == 0, ErrorKind::kDimension, "attention width not divisible by heads");
  const std::size_t tq = q.dim(0), tk = k.dim(0), width = q.dim(1), dh = width / n_heads;
  const std::size_t offset = tk - tq;
  const Real inv_scale = Real(1) / std::sqrt(Real(dh));
  const bool rg = tracking<Real>({&q, &k, &v});
  auto out = make<Real>({tq, width}, rg);
  Buffer<Real> probs(n_heads * tq * tk, Real(0));
  RowMat<Real> scores(tq, tk);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(width));
  for (std::size_t h = 0; h < n_heads; ++h) {
    CStridedMap<Real> qh(q.data().data() + h * dh, tq, dh, stride);
    CStridedMap<Real> kh(k.data().data() + h * dh, tk, dh, stride);
    CStridedMap<Real> vh(v.data().data() + h * dh, tk, dh, stride);
    scores.noalias() = qh * kh.transpose();
    MatMap<Real> p(probs.data() + h * tq * tk, tq, tk);
    for (std::size_t i = 0; i < tq; ++i) {
      const auto n = Eigen::Index(offset + i + 1);
      auto row = p.row(Eigen::Index(i)).head(n);
      row = scores.row(Eigen::Index(i)).head(n) * inv_scale;
      row = (row.array() - row.maxCoeff()).exp().matrix();
      row /= row.sum();
    }
    StridedMap<Real>(out.data().data() + h * dh, tq, dh, stride).noalias() = p * vh;
  }
  if (rg) {
    record<Real>([qn = q.shared_node(), kn = k.shared_node(), vn = v.shared_node(), on = out.shared_node(),
                  probs = std::move(probs), n_heads, tq, tk, width, dh, inv_scale] {
      if (on->grad.size() != on->data.size()) return;
      const bool dq = flows(on, qn), dk = flows(on, kn), dv = flows(on, vn);
      if (dq) qn->ensure_grad();
      if (dk) kn->ensure_grad();
      if (dv) vn->ensure_grad();
      const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(width));
      RowMat<Real> dp(tq, tk);
      for (std::size_t h = 0; h < n_heads; ++h) {
        CMatMap<Real> p(probs.data() + h * tq * tk, tq, tk);
        CStridedMap<Real> dout(on->grad.data() + h * dh, tq, dh, stride);
        CStridedMap<Real> qh(qn->data.data() + h * dh, tq, dh, stride);
        CStridedMap<Real> kh(kn->data.data() + h * dh, tk, dh, stride);
        CStridedMap<Real> vh(vn->data.data() + h * dh, tk, dh, stride);
        if (dv) StridedMap<Real>(vn->grad.data() + h * dh, tk, dh, stride).noalias() += p.transpose() * dout;
        if (!dq && !dk) continue;
        dp.noalias() = dout * vh.transpose();
        const auto row_dot = (dp.array() * p.array()).rowwise().sum().eval();
        dp = (p.array() * (dp.array().colwise() - row_dot)).matrix() * inv_scale;
        if (dq) StridedMap<Real>(qn->grad.data() + h * dh, tq, dh, stride).noalias() += dp * kh;
        if (dk) StridedMap<Real>(kn->grad.data() + h * dh, tk, dh, stride).noalias() += dp.transpose() * qh;
      }
    });
  }
  return out;
}

// ---- losses ------------------------------------------------------------------

template <typename Real>
Tensor<Real> nll_sum(const Tensor<Real>& logits, std::span<const std::int32_t> targets,
                     std::span<const std::uint8_t> mask) {
  require(logits.ndim() == 2 && logits.dim(0) == targets.size() && targets.size() == mask.size(),
          ErrorKind::kDimension,
          "cross entropy expects logits [t, V] with t targets and t mask bits, got " + shape_str(logits.shape()) +
              ", " + std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) + " mask bits");
  const std::size_t t = logits.dim(0), vocab = logits.dim(1);
  for (std::size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    require(targets[i] >= 0 && std::size_t(targets[i]) < vocab, ErrorKind::kInvalidArgument,
            "target id " + std::to_string(targets[i]) + " outside vocabulary of " + std::to_string(vocab));
  }
  const bool rg = tracking<Real>({&logits});
  auto out = make<Real>({1}, rg);
  Buffer<Real> lse(t, Real(0));
  auto ld = logits.data();
  Real total = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    const Real* row = ld.data() + i * vocab;
    const Real mx = *std::max_element(row, row + vocab);
    Real z = 0;
    for (std::size_t c = 0; c < vocab; ++c) z += std::exp(row[c] - mx);
    lse[i] = mx + std::log(z);
    total += lse[i] - row[targets[i]];
  }
  out.data()[0] = total;
  if (rg) {
    record<Real>([ln = logits.shared_node(), on = out.shared_node(), lse = std::move(lse),
                  tg = std::vector<std::int32_t>(targets.begin(), targets.end()),
                  mk = std::vector<std::uint8_t>(mask.begin(), mask.end()), t, vocab] {
      if (!flows(on, ln)) return;
      ln->ensure_grad();
      const Real g = on->grad[0];
      for (std::size_t i = 0; i < t; ++i) {
        if (!mk[i]) continue;
        const Real* row = ln->data.data() + i * vocab;
        Real* dst = ln->grad.data() + i * vocab;
        for (std::size_t c = 0; c < vocab; ++c) dst[c] += g * std::exp(row[c] - lse[i]);
        dst[tg[i]] -= g;
      }
    });
  }
  return out;
}

template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& logits, std::span<const std::int32_t> targets,
                           std::span<const std::uint8_t> mask) {
  const auto count = std::count_if(mask.begin(), mask.end(), [](std::uint8_t b) { return b != 0; });
  require(count > 0, ErrorKind::kInvalidArgument, "cross entropy with an empty mask is undefined");
  return scale(nll_sum(logits, targets, mask), Real(1) / Real(count));
}

template <typename Real>
std::vector<std::size_t> argmax(const Tensor<Real>& x) {
  const std::size_t n = x.cols();
  std::vector<std::size_t> idx(x.rows());
  auto d = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Real* row = d.data() + r * n;
    idx[r] = std::size_t(std::max_element(row, row + n) - row);
  }
  return idx;
}

// ---- instantiation -----------------------------------------------------------

#define C3_INSTANTIATE_TENSOR(R)                                                                          \
  template class Tensor<R>;                                                                               \
  template class GradTape<R>;                                                                             \
  template Tensor<R> matmul(const Tensor<R>&, const Tensor<R>&);                                          \
  template Tensor<R> linear(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&);                        \
  template Tensor<R> add(const Tensor<R>&, const Tensor<R>&);                                             \
  template Tensor<R> add_bias(const Tensor<R>&, const Tensor<R>&);                                        \
  template Tensor<R> mul(const Tensor<R>&, const Tensor<R>&);                                             \
  template Tensor<R> scale(const Tensor<R>&, R);                                                          \
  template Tensor<R> sum(const Tensor<R>&);                                                               \
  template Tensor<R> silu(const Tensor<R>&);                                                              \
  template Tensor<R> gelu(const Tensor<R>&);                                                              \
  template Tensor<R> softmax(const Tensor<R>&, int);                                                      \
  template Tensor<R> rms_norm(const Tensor<R>&, const Tensor<R>&, R);                                     \
  template Tensor<R> embedding(const Tensor<R>&, std::span<const std::int32_t>);                          \
  template Tensor<R> transpose(const Tensor<R>&);                                                         \
  template Tensor<R> reshape(const Tensor<R>&, Shape);                                                    \
  template Tensor<R> concat_rows(std::span<const Tensor<R>>);                                             \
  template Tensor<R> slice_rows(const Tensor<R>&, std::size_t, std::size_t);                              \
  template Tensor<R> rope(const Tensor<R>&, std::span<const std::int64_t>, std::size_t, double);          \
  template void rope_rotate(std::span<R>, std::int64_t, double);                                          \
  template Tensor<R> causal_attention(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&, std::size_t); \
  template Tensor<R> nll_sum(const Tensor<R>&, std::span<const std::int32_t>, std::span<const std::uint8_t>); \
  template Tensor<R> cross_entropy(const Tensor<R>&, std::span<const std::int32_t>,                      \
                                   std::span<const std::uint8_t>);                                        \
  template std::vector<std::size_t> argmax(const Tensor<R>&);

C3_INSTANTIATE_TENSOR(float)
C3_INSTANTIATE_TENSOR(double)

}  // namespace c3
