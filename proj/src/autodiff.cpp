#include "latte/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "latte/error.hpp"
#include "latte/rng.hpp"

namespace latte {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor Gradients::wrt(Var v) const {
  if (v.id() < present_.size() && present_[v.id()]) return grads_[v.id()];
  return Tensor(v.value().shape(), 0.0);
}

Var Tape::leaf(Tensor value, bool trainable) {
  if (!value.all_finite()) throw DomainError("leaf value is not finite");
  nodes_.push_back(Node{std::move(value), nullptr, trainable,
                        trainable ? "parameter" : "constant"});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents,
                 BackwardFn backward, std::string_view name) {
  if (!value.all_finite()) {
    throw DomainError(std::string(name) + " produced a non-finite value");
  }
  bool needs = false;
  for (const Var& p : parents) {
    if (&p.tape() != this) throw Error("operands recorded on different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), needs ? std::move(backward) : nullptr,
                        needs, std::string(name)});
  return Var(this, nodes_.size() - 1);
}

Tensor* Tape::grad_buffer(Var target) {
  if (!nodes_[target.id()].requires_grad || active_grads_ == nullptr) {
    return nullptr;
  }
  auto& grads = *active_grads_;
  auto& present = *active_present_;
  if (!present[target.id()]) {
    grads[target.id()] = Tensor(nodes_[target.id()].value.shape(), 0.0);
    present[target.id()] = true;
  }
  return &grads[target.id()];
}

void Tape::accumulate(Var target, const Tensor& g) {
  Tensor* buf = grad_buffer(target);
  if (buf == nullptr) return;
  if (buf->size() != g.size()) {
    throw ShapeError("gradient shape " + shape_string(g.shape()) +
                     " does not match node shape " +
                     shape_string(buf->shape()));
  }
  auto dst = buf->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Gradients Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_string(loss.shape()));
  }
  Gradients out;
  out.tape_ = this;
  out.grads_.resize(nodes_.size());
  out.present_.assign(nodes_.size(), false);
  active_grads_ = &out.grads_;
  active_present_ = &out.present_;
  if (nodes_[loss.id()].requires_grad) {
    out.grads_[loss.id()] = Tensor(loss.shape(), 1.0);
    out.present_[loss.id()] = true;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      if (!out.present_[id] || !nodes_[id].backward) continue;
      nodes_[id].backward(*this, out.grads_[id]);
    }
  }
  active_grads_ = nullptr;
  active_present_ = nullptr;
  return out;
}

namespace {

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(),
                    big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw ShapeError(std::string(op) + ": incompatible shapes " +
                   shape_string(a) + " and " + shape_string(b));
}

// Elementwise unary op whose derivative is expressed through the input value
// x and output value y.
template <typename Fwd, typename Deriv>
Var unary(Var x, std::string_view name, Fwd fwd, Deriv deriv) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  auto src = xv.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fwd(src[i]);
  const std::size_t out_id = tape.size();
  Var parents[] = {x};
  return tape.record(
      std::move(out), parents,
      [x, out_id, deriv](Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(x);
        if (!gx) return;
        auto xs = x.value().data();
        auto ys = t.value(out_id).data();
        auto gs = g.data();
        auto dst = gx->data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
          dst[i] += gs[i] * deriv(xs[i], ys[i]);
        }
      },
      name);
}

enum class BinaryKind { kAdd, kSub, kMul };

Var binary(Var a, Var b, BinaryKind kind, std::string_view name) {
  Tape& tape = a.tape();
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  Tensor out(out_shape);
  auto av = a.value().data();
  auto bv = b.value().data();
  auto dst = out.data();
  const std::size_t na = av.size();
  const std::size_t nb = bv.size();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double x = av[i % na];
    const double y = bv[i % nb];
    switch (kind) {
      case BinaryKind::kAdd: dst[i] = x + y; break;
      case BinaryKind::kSub: dst[i] = x - y; break;
      case BinaryKind::kMul: dst[i] = x * y; break;
    }
  }
  Var parents[] = {a, b};
  return tape.record(
      std::move(out), parents,
      [a, b, kind](Tape& t, const Tensor& g) {
        auto gs = g.data();
        auto av = a.value().data();
        auto bv = b.value().data();
        const std::size_t na = av.size();
        const std::size_t nb = bv.size();
        if (Tensor* ga = t.grad_buffer(a)) {
          auto dst = ga->data();
          for (std::size_t i = 0; i < gs.size(); ++i) {
            const double d = kind == BinaryKind::kMul ? bv[i % nb] : 1.0;
            dst[i % na] += gs[i] * d;
          }
        }
        if (Tensor* gb = t.grad_buffer(b)) {
          auto dst = gb->data();
          for (std::size_t i = 0; i < gs.size(); ++i) {
            double d = 1.0;
            if (kind == BinaryKind::kSub) d = -1.0;
            if (kind == BinaryKind::kMul) d = av[i % na];
            dst[i % nb] += gs[i] * d;
          }
        }
      },
      name);
}

// View of `shape` as [outer, axis_len, inner] around `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

struct ConvGeometry {
  std::size_t n, h, w, cin, cout, k, pad;
  std::size_t rows() const { return n * h * w; }
  std::size_t patch() const { return k * k * cin; }
};

// Patch matrix [N*H*W, k*k*Cin]; out-of-range taps are zero.
void im2col(const ConvGeometry& g, std::span<const double> x,
            std::span<double> cols) {
  std::fill(cols.begin(), cols.end(), 0.0);
  const std::size_t patch = g.patch();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t y = 0; y < g.h; ++y) {
      for (std::size_t xx = 0; xx < g.w; ++xx) {
        double* row = cols.data() + ((n * g.h + y) * g.w + xx) * patch;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            const double* src =
                x.data() + ((n * g.h + static_cast<std::size_t>(sy)) * g.w +
                            static_cast<std::size_t>(sx)) *
                               g.cin;
            std::copy(src, src + g.cin, row + (ky * g.k + kx) * g.cin);
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, std::span<const double> cols,
                std::span<double> dx) {
  const std::size_t patch = g.patch();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t y = 0; y < g.h; ++y) {
      for (std::size_t xx = 0; xx < g.w; ++xx) {
        const double* row = cols.data() + ((n * g.h + y) * g.w + xx) * patch;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(g.w)) continue;
            double* dst =
                dx.data() + ((n * g.h + static_cast<std::size_t>(sy)) * g.w +
                             static_cast<std::size_t>(sx)) *
                                g.cin;
            const double* src = row + (ky * g.k + kx) * g.cin;
            for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Var scale(Var a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double c) {
  return unary(
      a, "add_scalar", [c](double x) { return x + c; },
      [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.empty() || bs.size() != 2 || as.back() != bs[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_string(as) +
                     " and " + shape_string(bs));
  }
  const auto k = static_cast<Eigen::Index>(bs[0]);
  const auto n = static_cast<Eigen::Index>(bs[1]);
  const auto m = static_cast<Eigen::Index>(a.value().size() / bs[0]);
  Shape out_shape = as;
  out_shape.back() = bs[1];
  Tensor out(out_shape);
  MatrixMap(out.data().data(), m, n).noalias() =
      ConstMatrixMap(a.value().data().data(), m, k) *
      ConstMatrixMap(b.value().data().data(), k, n);
  Var parents[] = {a, b};
  return a.tape().record(
      std::move(out), parents,
      [a, b, m, n, k](Tape& t, const Tensor& g) {
        ConstMatrixMap gm(g.data().data(), m, n);
        if (Tensor* ga = t.grad_buffer(a)) {
          MatrixMap(ga->data().data(), m, k).noalias() +=
              gm * ConstMatrixMap(b.value().data().data(), k, n).transpose();
        }
        if (Tensor* gb = t.grad_buffer(b)) {
          MatrixMap(gb->data().data(), k, n).noalias() +=
              ConstMatrixMap(a.value().data().data(), m, k).transpose() * gm;
        }
      },
      "matmul");
}

Var conv2d_same(Var x, Var kernel) {
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4 || ks[0] != ks[1] || ks[0] % 2 == 0 ||
      ks[2] != xs[3]) {
    throw ShapeError("conv2d_same: incompatible input " + shape_string(xs) +
                     " and kernel " + shape_string(ks));
  }
  const ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ks[3], ks[0],
                         (ks[0] - 1) / 2};
  const auto rows = static_cast<Eigen::Index>(geo.rows());
  const auto patch = static_cast<Eigen::Index>(geo.patch());
  const auto cout = static_cast<Eigen::Index>(geo.cout);

  // For k == 1 the patch matrix is the input itself.
  auto cols = std::make_shared<std::vector<double>>();
  std::span<const double> col_view = x.value().data();
  if (geo.k > 1) {
    cols->resize(geo.rows() * geo.patch());
    im2col(geo, x.value().data(), *cols);
    col_view = *cols;
  }
  Tensor out(Shape{geo.n, geo.h, geo.w, geo.cout});
  MatrixMap(out.data().data(), rows, cout).noalias() =
      ConstMatrixMap(col_view.data(), rows, patch) *
      ConstMatrixMap(kernel.value().data().data(), patch, cout);

  Var parents[] = {x, kernel};
  return x.tape().record(
      std::move(out), parents,
      [x, kernel, geo, cols, rows, patch, cout](Tape& t, const Tensor& g) {
        ConstMatrixMap gm(g.data().data(), rows, cout);
        std::span<const double> col_view =
            geo.k > 1 ? std::span<const double>(*cols) : x.value().data();
        if (Tensor* gk = t.grad_buffer(kernel)) {
          MatrixMap(gk->data().data(), patch, cout).noalias() +=
              ConstMatrixMap(col_view.data(), rows, patch).transpose() * gm;
        }
        if (Tensor* gx = t.grad_buffer(x)) {
          ConstMatrixMap km(kernel.value().data().data(), patch, cout);
          if (geo.k == 1) {
            MatrixMap(gx->data().data(), rows, patch).noalias() +=
                gm * km.transpose();
          } else {
            std::vector<double> dcols(geo.rows() * geo.patch());
            MatrixMap(dcols.data(), rows, patch).noalias() = gm * km.transpose();
            col2im_add(geo, dcols, gx->data());
          }
        }
      },
      "conv2d_same");
}

Var sigmoid(Var x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); },
      [](double, double y) { return y; });
}

Var log(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("log of nonpositive value");
  }
  return unary(
      x, "log", [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw DomainError("sqrt of nonpositive value");
  }
  return unary(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

Var abs(Var x) {
  return unary(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) {
        return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      });
}

Var square(Var x) {
  return unary(
      x, "square", [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Var sum(Var x) {
  const auto xs = x.value().data();
  const double total = std::accumulate(xs.begin(), xs.end(), 0.0);
  Var parents[] = {x};
  return x.tape().record(
      Tensor::scalar(total), parents,
      [x](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_buffer(x)) {
          const double gv = g[0];
          for (double& d : gx->data()) d += gv;
        }
      },
      "sum");
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  Var parents[] = {x};
  return x.tape().record(
      std::move(out), parents,
      [x](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_buffer(x)) {
          auto dst = gx->data();
          auto src = g.data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      },
      "reshape");
}

Var concat(std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = xs[0].shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& v : xs) {
    const Shape& s = v.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw ShapeError("concat: shape " + shape_string(s) +
                       " incompatible with " + shape_string(first));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (const Var& v : xs) {
    const AxisSplit vs = split_axis(v.shape(), axis);
    const auto src = v.value().data();
    const std::size_t chunk = vs.len * vs.inner;
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(src.data() + o * chunk, chunk,
                  out.data().data() + o * os.len * os.inner + offset * os.inner);
    }
    offset += vs.len;
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return xs[0].tape().record(
      std::move(out), parents,
      [parents, axis, os](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (const Var& v : parents) {
          const AxisSplit vs = split_axis(v.shape(), axis);
          const std::size_t chunk = vs.len * vs.inner;
          if (Tensor* gv = t.grad_buffer(v)) {
            auto dst = gv->data();
            for (std::size_t o = 0; o < os.outer; ++o) {
              const double* src =
                  g.data().data() + o * os.len * os.inner + offset * os.inner;
              for (std::size_t i = 0; i < chunk; ++i) {
                dst[o * chunk + i] += src[i];
              }
            }
          }
          offset += vs.len;
        }
      },
      "concat");
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& xs = x.shape();
  if (axis >= xs.size() || begin >= end || end > xs[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") on axis " + std::to_string(axis) +
                     " of " + shape_string(xs));
  }
  Shape out_shape = xs;
  out_shape[axis] = end - begin;
  const AxisSplit is = split_axis(xs, axis);
  const std::size_t chunk = (end - begin) * is.inner;
  Tensor out(out_shape);
  const auto src = x.value().data();
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(src.data() + o * is.len * is.inner + begin * is.inner, chunk,
                out.data().data() + o * chunk);
  }
  Var parents[] = {x};
  return x.tape().record(
      std::move(out), parents,
      [x, is, begin, chunk](Tape& t, const Tensor& g) {
        if (Tensor* gx = t.grad_buffer(x)) {
          auto dst = gx->data();
          for (std::size_t o = 0; o < is.outer; ++o) {
            double* d = dst.data() + o * is.len * is.inner + begin * is.inner;
            const double* s = g.data().data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) d[i] += s[i];
          }
        }
      },
      "slice");
}

Var stack(std::span<const Var> xs, std::size_t axis) {
  if (xs.empty()) throw ShapeError("stack of zero tensors");
  std::vector<Var> expanded;
  expanded.reserve(xs.size());
  for (const Var& v : xs) {
    if (v.shape() != xs[0].shape()) {
      throw ShapeError("stack: mismatched shapes " + shape_string(v.shape()) +
                       " and " + shape_string(xs[0].shape()));
    }
    Shape s = v.shape();
    if (axis > s.size()) throw ShapeError("stack axis out of range");
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(v, std::move(s)));
  }
  return concat(expanded, axis);
}

double grad_check(const TensorFunction& f, std::span<const Tensor> inputs,
                  const GradCheckOptions& options) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : inputs) vars.push_back(tape.leaf(t));
    Var loss = f(tape, vars);
    Gradients g = tape.backward(loss);
    for (const Var& v : vars) analytic.push_back(g.wrt(v));
  }
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : xs) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
  };

  Rng rng(options.seed);
  std::vector<Tensor> probe(inputs.begin(), inputs.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    std::vector<std::size_t> coords(probe[k].size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_entries > 0 && coords.size() > options.max_entries) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(options.max_entries);
    }
    for (std::size_t i : coords) {
      // Divide by the steps actually taken, which differ from epsilon by the
      // rounding of orig +/- epsilon.
      const double orig = probe[k][i];
      const double hi = orig + options.epsilon;
      const double lo = orig - options.epsilon;
      probe[k][i] = hi;
      const double up = evaluate(probe);
      probe[k][i] = lo;
      const double down = evaluate(probe);
      probe[k][i] = orig;
      const double numeric = (up - down) / (hi - lo);
      const double a = analytic[k][i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                  double epsilon) {
  const Tensor inputs[] = {x};
  return grad_check(
      [&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); }, inputs,
      GradCheckOptions{epsilon, 0, 0});
}

}  // namespace latte
