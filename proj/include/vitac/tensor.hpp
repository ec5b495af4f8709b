#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitac {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::runtime_error("vitac: " + msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

class Tape;

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until touched by backward
  bool requires_grad = false;
  bool is_leaf = true;
  Tape* tape = nullptr;
  // Propagates this node's adjoint to its inputs. Inputs are captured as
  // raw pointers; the owning tape keeps every node alive.
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Learnable parameter. Lives outside any tape; a forward pass binds it to
// the tape via Tape::use(), and backward() flushes adjoints into `grad`.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty = not yet populated

  void zero_grad() { grad.assign(value.size(), 0.0); }
  int64_t size() const { return static_cast<int64_t>(value.size()); }
};

// Value handle over a tape node.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> n) : n_(std::move(n)) {}

  const Shape& shape() const { return n_->shape; }
  const std::vector<double>& data() const { return n_->data; }
  std::vector<double>& data() { return n_->data; }
  const std::vector<double>& grad() const { return n_->grad; }
  int64_t size() const { return static_cast<int64_t>(n_->data.size()); }
  bool defined() const { return n_ != nullptr; }
  bool requires_grad() const { return n_->requires_grad; }
  double item() const {
    require(n_->data.size() == 1, "item() on non-scalar tensor " + shape_str(n_->shape));
    return n_->data[0];
  }
  std::shared_ptr<TensorNode> node() const { return n_; }

private:
  std::shared_ptr<TensorNode> n_;
};

// Records one forward pass; backward() replays adjoints in exact reverse
// order of recording. A tape and its tensors are confined to one execution
// context (no shared mutable state across contexts).
class Tape {
public:
  Tensor constant(Shape shape, std::vector<double> data) {
    return make_leaf(std::move(shape), std::move(data), false);
  }

  Tensor scalar(double v) { return constant({1}, {v}); }

  Tensor leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    return make_leaf(std::move(shape), std::move(data), requires_grad);
  }

  // Bind a parameter into this tape's graph.
  Tensor use(Param& p) {
    require(numel(p.shape) == p.size(),
            "param '" + p.name + "' shape/data mismatch");
    auto n = std::make_shared<TensorNode>();
    n->shape = p.shape;
    n->data = p.value;
    n->requires_grad = true;
    n->is_leaf = true;
    n->tape = this;
    Param* pp = &p;
    n->backward_fn = [pp](TensorNode& self) {
      if (self.grad.empty()) return;
      if (pp->grad.empty()) pp->grad.assign(pp->value.size(), 0.0);
      for (size_t i = 0; i < self.grad.size(); ++i) pp->grad[i] += self.grad[i];
      self.grad.clear();
    };
    nodes_.push_back(n);
    return Tensor(n);
  }

  Tensor record(Shape shape, std::vector<double> data, bool requires_grad,
                std::function<void(TensorNode&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    require(numel(shape) == static_cast<int64_t>(data.size()),
            "node shape " + shape_str(shape) + " inconsistent with data length");
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->is_leaf = false;
    n->tape = this;
    n->backward_fn = std::move(backward_fn);
    nodes_.push_back(n);
    return Tensor(n);
  }

  // Reverse-mode sweep from a scalar root. Ancestor leaves created with
  // requires_grad accumulate across repeated calls; parameters flush into
  // Param::grad each call.
  void backward(const Tensor& root) {
    require(root.size() == 1, "backward root must be scalar, got " +
                                  shape_str(root.shape()));
    require(root.node()->tape == this, "backward root recorded on another tape");
    for (auto& n : nodes_) {
      if (!n->is_leaf) n->grad.clear();
    }
    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      TensorNode* n = it->get();
      if (n->grad.empty()) continue;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  size_t num_nodes() const { return nodes_.size(); }

private:
  Tensor make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    require(numel(shape) == static_cast<int64_t>(data.size()),
            "leaf shape " + shape_str(shape) + " inconsistent with data length");
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    n->tape = this;
    nodes_.push_back(n);
    return Tensor(n);
  }

  std::vector<std::shared_ptr<TensorNode>> nodes_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) fail(std::string(op) + ": non-finite input value");
  }
}

inline Tape* tape_of(const Tensor& a) {
  require(a.defined(), "undefined tensor");
  return a.node()->tape;
}

inline void same_tape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.node()->tape == b.node()->tape,
          std::string(op) + ": inputs recorded on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b, "add");
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  detail::check_finite(a, "add");
  detail::check_finite(b, "add");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::tape_of(a)->record(
      a.shape(), std::move(out), an->requires_grad || bn->requires_grad,
      [an, bn](TensorNode& self) {
        auto& g = self.grad;
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
        }
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b, "sub");
  require(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  detail::check_finite(a, "sub");
  detail::check_finite(b, "sub");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::tape_of(a)->record(
      a.shape(), std::move(out), an->requires_grad || bn->requires_grad,
      [an, bn](TensorNode& self) {
        auto& g = self.grad;
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) bn->grad[i] -= g[i];
        }
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b, "mul");
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  detail::check_finite(a, "mul");
  detail::check_finite(b, "mul");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::tape_of(a)->record(
      a.shape(), std::move(out), an->requires_grad || bn->requires_grad,
      [an, bn](TensorNode& self) {
        auto& g = self.grad;
        if (an->requires_grad) {
          an->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->data[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->data[i];
        }
      });
}

// m * a + c, elementwise with scalar constants.
inline Tensor affine(const Tensor& a, double m, double c) {
  detail::check_finite(a, "affine");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = m * a.data()[i] + c;
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      a.shape(), std::move(out), an->requires_grad, [an, m](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += m * g[i];
      });
}

inline Tensor scale(const Tensor& a, double m) { return affine(a, m, 0.0); }

inline Tensor exp(const Tensor& a) {
  detail::check_finite(a, "exp");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = std::exp(a.data()[i]);
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      a.shape(), std::move(out), an->requires_grad, [an](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * self.data[i];
      });
}

inline Tensor relu(const Tensor& a) {
  detail::check_finite(a, "relu");
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      a.shape(), std::move(out), an->requires_grad, [an](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) {
          if (an->data[i] > 0.0) an->grad[i] += g[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.size(), "reshape: " + shape_str(a.shape()) +
                                        " incompatible with " + shape_str(shape));
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      std::move(shape), a.data(), an->requires_grad, [an](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      });
}

inline Tensor flatten(const Tensor& a) {
  return reshape(a, {static_cast<int>(a.size())});
}

inline Tensor transpose(const Tensor& a) {
  require(a.shape().size() == 2, "transpose: expected 2-D, got " + shape_str(a.shape()));
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      {n, m}, std::move(out), an->requires_grad, [an, m, n](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        an->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            an->grad[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
      });
}

inline Tensor concat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat: no inputs");
  std::vector<double> out;
  bool rg = false;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p, "concat");
    detail::check_finite(p, "concat");
    out.insert(out.end(), p.data().begin(), p.data().end());
    rg = rg || p.requires_grad();
  }
  std::vector<TensorNode*> ins;
  for (const auto& p : parts) ins.push_back(p.node().get());
  const int total = static_cast<int>(out.size());
  return detail::tape_of(parts[0])->record(
      {total}, std::move(out), rg,
      [ins](TensorNode& self) {
        auto& g = self.grad;
        size_t off = 0;
        for (auto* in : ins) {
          if (in->requires_grad) {
            in->ensure_grad();
            for (size_t i = 0; i < in->data.size(); ++i) in->grad[i] += g[off + i];
          }
          off += in->data.size();
        }
      });
}

inline Tensor slice(const Tensor& a, int start, int len) {
  require(start >= 0 && len >= 1 && start + len <= a.size(),
          "slice: range out of bounds");
  std::vector<double> out(a.data().begin() + start, a.data().begin() + start + len);
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      {len}, std::move(out), an->requires_grad,
      [an, start, len](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        an->ensure_grad();
        for (int i = 0; i < len; ++i) an->grad[start + i] += g[i];
      });
}

// Stack n same-length vectors into an [n, D] matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  require(!rows.empty(), "stack_rows: no inputs");
  const int d = static_cast<int>(rows[0].size());
  std::vector<double> out;
  bool rg = false;
  for (const auto& r : rows) {
    detail::same_tape(rows[0], r, "stack_rows");
    require(r.size() == d, "stack_rows: ragged rows");
    out.insert(out.end(), r.data().begin(), r.data().end());
    rg = rg || r.requires_grad();
  }
  std::vector<TensorNode*> ins;
  for (const auto& r : rows) ins.push_back(r.node().get());
  const int nrows = static_cast<int>(rows.size());
  return detail::tape_of(rows[0])->record(
      {nrows, d}, std::move(out), rg,
      [ins, d](TensorNode& self) {
        auto& g = self.grad;
        for (size_t r = 0; r < ins.size(); ++r) {
          if (!ins[r]->requires_grad) continue;
          ins[r]->ensure_grad();
          for (int i = 0; i < d; ++i) ins[r]->grad[i] += g[r * d + i];
        }
      });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b, "matmul");
  require(a.shape().size() == 2 && b.shape().size() == 2 &&
              a.shape()[1] == b.shape()[0],
          "matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  detail::check_finite(a, "matmul");
  detail::check_finite(b, "matmul");
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double av = a.data()[static_cast<size_t>(i) * k + p];
      for (int j = 0; j < n; ++j)
        out[static_cast<size_t>(i) * n + j] += av * b.data()[static_cast<size_t>(p) * n + j];
    }
  TensorNode* an = a.node().get();
  TensorNode* bn = b.node().get();
  return detail::tape_of(a)->record(
      {m, n}, std::move(out), an->requires_grad || bn->requires_grad,
      [an, bn, m, k, n](TensorNode& self) {
        auto& g = self.grad;
        if (an->requires_grad) {
          an->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const double gv = g[static_cast<size_t>(i) * n + j];
              for (int p = 0; p < k; ++p)
                an->grad[static_cast<size_t>(i) * k + p] += gv * bn->data[static_cast<size_t>(p) * n + j];
            }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              const double av = an->data[static_cast<size_t>(i) * k + p];
              for (int j = 0; j < n; ++j)
                bn->grad[static_cast<size_t>(p) * n + j] += g[static_cast<size_t>(i) * n + j] * av;
            }
        }
      });
}

// y = W x + b with x:[n], W:[m,n], b:[m].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::same_tape(x, w, "linear");
  detail::same_tape(x, b, "linear");
  require(x.shape().size() == 1 && w.shape().size() == 2 &&
              w.shape()[1] == x.shape()[0] && b.shape() == Shape{w.shape()[0]},
          "linear: incompatible shapes x=" + shape_str(x.shape()) +
              " W=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
  detail::check_finite(x, "linear");
  detail::check_finite(w, "linear");
  detail::check_finite(b, "linear");
  const int m = w.shape()[0], n = w.shape()[1];
  std::vector<double> out(m);
  for (int i = 0; i < m; ++i) {
    double acc = b.data()[i];
    const double* wr = w.data().data() + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += wr[j] * x.data()[j];
    out[i] = acc;
  }
  TensorNode* xn = x.node().get();
  TensorNode* wn = w.node().get();
  TensorNode* bn = b.node().get();
  return detail::tape_of(x)->record(
      {m}, std::move(out),
      xn->requires_grad || wn->requires_grad || bn->requires_grad,
      [xn, wn, bn, m, n](TensorNode& self) {
        auto& g = self.grad;
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (int i = 0; i < m; ++i) {
            const double gv = g[i];
            const double* wr = wn->data.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) xn->grad[j] += gv * wr[j];
          }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          for (int i = 0; i < m; ++i) {
            const double gv = g[i];
            double* wr = wn->grad.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) wr[j] += gv * xn->data[j];
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (int i = 0; i < m; ++i) bn->grad[i] += g[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions (valid by default, optional zero padding)
// ---------------------------------------------------------------------------

// x:[C,H,W], w:[F,C,kh,kw], b:[F] -> [F,H',W']
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride = 1, int pad = 0) {
  detail::same_tape(x, w, "conv2d");
  detail::same_tape(x, b, "conv2d");
  require(x.shape().size() == 3 && w.shape().size() == 4,
          "conv2d: expected x:[C,H,W], w:[F,C,kh,kw], got x=" +
              shape_str(x.shape()) + " w=" + shape_str(w.shape()));
  const int c = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int f = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  require(w.shape()[1] == c, "conv2d: channel mismatch x=" + shape_str(x.shape()) +
                                 " w=" + shape_str(w.shape()));
  require(b.shape() == Shape{f}, "conv2d: bias shape " + shape_str(b.shape()));
  require(kh <= h + 2 * pad && kw <= wd + 2 * pad,
          "conv2d: kernel larger than padded input");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  detail::check_finite(x, "conv2d");
  detail::check_finite(w, "conv2d");
  detail::check_finite(b, "conv2d");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<size_t>(f) * oh * ow);
  for (int fo = 0; fo < f; ++fo)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b.data()[fo];
        for (int ci = 0; ci < c; ++ci)
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const double* xr = x.data().data() + (static_cast<size_t>(ci) * h + iy) * wd;
            const double* wr = w.data().data() +
                ((static_cast<size_t>(fo) * c + ci) * kh + ky) * kw;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= wd) continue;
              acc += xr[ix] * wr[kx];
            }
          }
        out[(static_cast<size_t>(fo) * oh + oy) * ow + ox] = acc;
      }
  TensorNode* xn = x.node().get();
  TensorNode* wn = w.node().get();
  TensorNode* bn = b.node().get();
  return detail::tape_of(x)->record(
      {f, oh, ow}, std::move(out),
      xn->requires_grad || wn->requires_grad || bn->requires_grad,
      [xn, wn, bn, c, h, wd, f, kh, kw, oh, ow, stride, pad](TensorNode& self) {
        auto& g = self.grad;
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int fo = 0; fo < f; ++fo)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const double gv = g[(static_cast<size_t>(fo) * oh + oy) * ow + ox];
              if (gv == 0.0) continue;
              if (bn->requires_grad) bn->grad[fo] += gv;
              for (int ci = 0; ci < c; ++ci)
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy * stride + ky - pad;
                  if (iy < 0 || iy >= h) continue;
                  const size_t xoff = (static_cast<size_t>(ci) * h + iy) * wd;
                  const size_t woff =
                      ((static_cast<size_t>(fo) * c + ci) * kh + ky) * kw;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride + kx - pad;
                    if (ix < 0 || ix >= wd) continue;
                    if (wn->requires_grad)
                      wn->grad[woff + kx] += gv * xn->data[xoff + ix];
                    if (xn->requires_grad)
                      xn->grad[xoff + ix] += gv * wn->data[woff + kx];
                  }
                }
            }
      });
}

// x:[C,L], w:[F,C,k], b:[F] -> [F,L']
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride = 1, int pad = 0) {
  detail::same_tape(x, w, "conv1d");
  detail::same_tape(x, b, "conv1d");
  require(x.shape().size() == 2 && w.shape().size() == 3,
          "conv1d: expected x:[C,L], w:[F,C,k], got x=" + shape_str(x.shape()) +
              " w=" + shape_str(w.shape()));
  const int c = x.shape()[0], l = x.shape()[1];
  const int f = w.shape()[0], k = w.shape()[2];
  require(w.shape()[1] == c, "conv1d: channel mismatch");
  require(b.shape() == Shape{f}, "conv1d: bias shape " + shape_str(b.shape()));
  require(k <= l + 2 * pad, "conv1d: kernel larger than padded input");
  require(stride >= 1 && pad >= 0, "conv1d: bad stride/pad");
  detail::check_finite(x, "conv1d");
  detail::check_finite(w, "conv1d");
  detail::check_finite(b, "conv1d");
  const int ol = (l + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<size_t>(f) * ol);
  for (int fo = 0; fo < f; ++fo)
    for (int o = 0; o < ol; ++o) {
      double acc = b.data()[fo];
      for (int ci = 0; ci < c; ++ci) {
        const double* xr = x.data().data() + static_cast<size_t>(ci) * l;
        const double* wr = w.data().data() + (static_cast<size_t>(fo) * c + ci) * k;
        for (int kk = 0; kk < k; ++kk) {
          const int ix = o * stride + kk - pad;
          if (ix < 0 || ix >= l) continue;
          acc += xr[ix] * wr[kk];
        }
      }
      out[static_cast<size_t>(fo) * ol + o] = acc;
    }
  TensorNode* xn = x.node().get();
  TensorNode* wn = w.node().get();
  TensorNode* bn = b.node().get();
  return detail::tape_of(x)->record(
      {f, ol}, std::move(out),
      xn->requires_grad || wn->requires_grad || bn->requires_grad,
      [xn, wn, bn, c, l, f, k, ol, stride, pad](TensorNode& self) {
        auto& g = self.grad;
        if (xn->requires_grad) xn->ensure_grad();
        if (wn->requires_grad) wn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int fo = 0; fo < f; ++fo)
          for (int o = 0; o < ol; ++o) {
            const double gv = g[static_cast<size_t>(fo) * ol + o];
            if (gv == 0.0) continue;
            if (bn->requires_grad) bn->grad[fo] += gv;
            for (int ci = 0; ci < c; ++ci) {
              const size_t xoff = static_cast<size_t>(ci) * l;
              const size_t woff = (static_cast<size_t>(fo) * c + ci) * k;
              for (int kk = 0; kk < k; ++kk) {
                const int ix = o * stride + kk - pad;
                if (ix < 0 || ix >= l) continue;
                if (wn->requires_grad)
                  wn->grad[woff + kk] += gv * xn->data[xoff + ix];
                if (xn->requires_grad)
                  xn->grad[xoff + ix] += gv * wn->data[woff + kk];
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Reductions & losses
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  detail::check_finite(a, "sum");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record({1}, {acc}, an->requires_grad,
                                    [an](TensorNode& self) {
                                      if (!an->requires_grad) return;
                                      const double g = self.grad[0];
                                      an->ensure_grad();
                                      for (size_t i = 0; i < an->data.size(); ++i)
                                        an->grad[i] += g;
                                    });
}

inline Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor mse(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b, "mse");
  require(a.shape() == b.shape(), "mse: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

// Row-wise log-softmax of a 2-D matrix.
inline Tensor log_softmax_rows(const Tensor& a) {
  require(a.shape().size() == 2, "log_softmax_rows: expected 2-D");
  detail::check_finite(a, "log_softmax_rows");
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.size());
  for (int i = 0; i < m; ++i) {
    const double* row = a.data().data() + static_cast<size_t>(i) * n;
    double mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = row[j] - lz;
  }
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      {m, n}, std::move(out), an->requires_grad, [an, m, n](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        auto& yv = self.data;
        an->ensure_grad();
        for (int i = 0; i < m; ++i) {
          double gs = 0.0;
          for (int j = 0; j < n; ++j) gs += g[static_cast<size_t>(i) * n + j];
          for (int j = 0; j < n; ++j) {
            const size_t idx = static_cast<size_t>(i) * n + j;
            an->grad[idx] += g[idx] - std::exp(yv[idx]) * gs;
          }
        }
      });
}

inline Tensor diag(const Tensor& a) {
  require(a.shape().size() == 2 && a.shape()[0] == a.shape()[1],
          "diag: expected square matrix, got " + shape_str(a.shape()));
  const int n = a.shape()[0];
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = a.data()[static_cast<size_t>(i) * n + i];
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      {n}, std::move(out), an->requires_grad, [an, n](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        an->ensure_grad();
        for (int i = 0; i < n; ++i) an->grad[static_cast<size_t>(i) * n + i] += g[i];
      });
}

// Cross entropy of the diagonal against row-wise softmax: the
// -1/n * sum_i log softmax(row_i)[i] building block of the symmetric
// contrastive loss.
inline Tensor diag_cross_entropy_rows(const Tensor& logits) {
  return scale(mean(diag(log_softmax_rows(logits))), -1.0);
}

inline Tensor l2_normalize(const Tensor& a) {
  require(a.shape().size() == 1, "l2_normalize: expected 1-D vector");
  detail::check_finite(a, "l2_normalize");
  double s2 = 0.0;
  for (double v : a.data()) s2 += v * v;
  require(s2 > 0.0, "l2_normalize: zero vector");
  const double inv = 1.0 / std::sqrt(s2);
  std::vector<double> out(a.size());
  for (int64_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * inv;
  TensorNode* an = a.node().get();
  return detail::tape_of(a)->record(
      a.shape(), std::move(out), an->requires_grad, [an, inv](TensorNode& self) {
        if (!an->requires_grad) return;
        auto& g = self.grad;
        auto& yv = self.data;
        double dot = 0.0;
        for (size_t i = 0; i < g.size(); ++i) dot += g[i] * yv[i];
        an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i)
          an->grad[i] += inv * (g[i] - yv[i] * dot);
      });
}

// FiLM-style conditioning: y[c,l] = s[c] * x[c,l] + t[c].
inline Tensor scale_shift(const Tensor& x, const Tensor& s, const Tensor& t) {
  detail::same_tape(x, s, "scale_shift");
  detail::same_tape(x, t, "scale_shift");
  require(x.shape().size() == 2, "scale_shift: expected x:[C,L]");
  const int c = x.shape()[0], l = x.shape()[1];
  require(s.shape() == Shape{c} && t.shape() == Shape{c},
          "scale_shift: scale/shift must be [C]=" + std::to_string(c) +
              ", got " + shape_str(s.shape()) + " and " + shape_str(t.shape()));
  detail::check_finite(x, "scale_shift");
  detail::check_finite(s, "scale_shift");
  detail::check_finite(t, "scale_shift");
  std::vector<double> out(x.size());
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < l; ++i)
      out[static_cast<size_t>(ci) * l + i] =
          s.data()[ci] * x.data()[static_cast<size_t>(ci) * l + i] + t.data()[ci];
  TensorNode* xn = x.node().get();
  TensorNode* sn = s.node().get();
  TensorNode* tn = t.node().get();
  return detail::tape_of(x)->record(
      {c, l}, std::move(out),
      xn->requires_grad || sn->requires_grad || tn->requires_grad,
      [xn, sn, tn, c, l](TensorNode& self) {
        auto& g = self.grad;
        if (xn->requires_grad) xn->ensure_grad();
        if (sn->requires_grad) sn->ensure_grad();
        if (tn->requires_grad) tn->ensure_grad();
        for (int ci = 0; ci < c; ++ci)
          for (int i = 0; i < l; ++i) {
            const size_t idx = static_cast<size_t>(ci) * l + i;
            const double gv = g[idx];
            if (xn->requires_grad) xn->grad[idx] += gv * sn->data[ci];
            if (sn->requires_grad) sn->grad[ci] += gv * xn->data[idx];
            if (tn->requires_grad) tn->grad[ci] += gv;
          }
      });
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

using TensorFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

// Central-difference check of reverse-mode gradients. Returns the max over
// all input coordinates of |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
inline double grad_check(const TensorFn& f, const std::vector<Shape>& shapes,
                         const std::vector<std::vector<double>>& points,
                         double epsilon = 1e-5) {
  require(shapes.size() == points.size(), "grad_check: shapes/points mismatch");
  auto eval = [&](const std::vector<std::vector<double>>& xs) {
    Tape tape;
    std::vector<Tensor> leaves;
    for (size_t i = 0; i < xs.size(); ++i)
      leaves.push_back(tape.leaf(shapes[i], xs[i], false));
    Tensor y = f(tape, leaves);
    require(y.size() == 1, "grad_check: f must be scalar-valued");
    const double v = y.item();
    if (!std::isfinite(v)) fail("grad_check: f non-finite at probe point");
    return v;
  };

  // Analytic pass.
  Tape tape;
  std::vector<Tensor> leaves;
  for (size_t i = 0; i < points.size(); ++i)
    leaves.push_back(tape.leaf(shapes[i], points[i], true));
  Tensor y = f(tape, leaves);
  require(y.size() == 1, "grad_check: f must be scalar-valued");
  tape.backward(y);

  double max_err = 0.0;
  for (size_t i = 0; i < points.size(); ++i) {
    const auto& g = leaves[i].grad();
    for (size_t j = 0; j < points[i].size(); ++j) {
      auto plus = points, minus = points;
      plus[i][j] += epsilon;
      minus[i][j] -= epsilon;
      const double num = (eval(plus) - eval(minus)) / (2.0 * epsilon);
      const double ana = g.empty() ? 0.0 : g[j];
      const double err =
          std::abs(ana - num) / (std::abs(ana) + std::abs(num) + 1e-12);
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

inline double grad_check(const std::function<Tensor(Tape&, Tensor&)>& f,
                         const Shape& shape, const std::vector<double>& point,
                         double epsilon = 1e-5) {
  return grad_check(
      [&](Tape& t, std::vector<Tensor>& xs) { return f(t, xs[0]); }, {shape},
      {point}, epsilon);
}

}  // namespace vitac
