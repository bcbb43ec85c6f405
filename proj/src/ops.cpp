#include "sketchhash/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace sketchhash {

namespace {

using RowMatrix = Tensor::RowMatrix;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_rank(const Var& x, Eigen::Index rank, const char* op) {
  if (x.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
  }
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

/// Records a single-input node whose input gradient is grad_in += fn(grad, value, input).
template <typename Fn>
Var unary(const Var& x, Tensor out, Fn fn) {
  return x.graph().record(std::move(out), {x},
                          [x, fn](Graph& g, const Tensor& grad, const Tensor& value) {
                            if (auto* gx = g.grad_target(x)) fn(*gx, grad, value, x.value());
                          });
}

struct ConvGeometry {
  Eigen::Index n, c, h, w;   // input
  Eigen::Index o, k;         // filters
  Eigen::Index ho, wo;       // output
  Eigen::Index pad_top, pad_left;
  int stride;

  Eigen::Index patch() const { return c * k * k; }
  Eigen::Index out_pixels() const { return ho * wo; }
};

void im2col(const double* image, const ConvGeometry& geo, RowMatrix& cols) {
  cols.resize(geo.patch(), geo.out_pixels());
  for (Eigen::Index ch = 0; ch < geo.c; ++ch) {
    for (Eigen::Index ky = 0; ky < geo.k; ++ky) {
      for (Eigen::Index kx = 0; kx < geo.k; ++kx) {
        double* row = cols.row((ch * geo.k + ky) * geo.k + kx).data();
        for (Eigen::Index oy = 0; oy < geo.ho; ++oy) {
          const Eigen::Index iy = oy * geo.stride + ky - geo.pad_top;
          for (Eigen::Index ox = 0; ox < geo.wo; ++ox) {
            const Eigen::Index ix = ox * geo.stride + kx - geo.pad_left;
            const bool inside = iy >= 0 && iy < geo.h && ix >= 0 && ix < geo.w;
            row[oy * geo.wo + ox] = inside ? image[(ch * geo.h + iy) * geo.w + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& cols, const ConvGeometry& geo, double* image) {
  for (Eigen::Index ch = 0; ch < geo.c; ++ch) {
    for (Eigen::Index ky = 0; ky < geo.k; ++ky) {
      for (Eigen::Index kx = 0; kx < geo.k; ++kx) {
        const double* row = cols.row((ch * geo.k + ky) * geo.k + kx).data();
        for (Eigen::Index oy = 0; oy < geo.ho; ++oy) {
          const Eigen::Index iy = oy * geo.stride + ky - geo.pad_top;
          if (iy < 0 || iy >= geo.h) continue;
          for (Eigen::Index ox = 0; ox < geo.wo; ++ox) {
            const Eigen::Index ix = ox * geo.stride + kx - geo.pad_left;
            if (ix < 0 || ix >= geo.w) continue;
            image[(ch * geo.h + iy) * geo.w + ix] += row[oy * geo.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out(Shape{a.shape()[0], b.shape()[1]});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& grad, const Tensor&) {
    if (auto* ga = g.grad_target(a)) {
      ga->matrix().noalias() += grad.matrix() * b.value().matrix().transpose();
    }
    if (auto* gb = g.grad_target(b)) {
      gb->matrix().noalias() += a.value().matrix().transpose() * grad.matrix();
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  out.flat() = a.value().flat() + b.value().flat();
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& grad, const Tensor&) {
    if (auto* ga = g.grad_target(a)) ga->flat() += grad.flat();
    if (auto* gb = g.grad_target(b)) gb->flat() += grad.flat();
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  out.flat() = a.value().flat() - b.value().flat();
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& grad, const Tensor&) {
    if (auto* ga = g.grad_target(a)) ga->flat() += grad.flat();
    if (auto* gb = g.grad_target(b)) gb->flat() -= grad.flat();
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  out.flat() = a.value().flat().cwiseProduct(b.value().flat());
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& grad, const Tensor&) {
    if (auto* ga = g.grad_target(a)) ga->flat() += grad.flat().cwiseProduct(b.value().flat());
    if (auto* gb = g.grad_target(b)) gb->flat() += grad.flat().cwiseProduct(a.value().flat());
  });
}

Var add_bias(const Var& x, const Var& b) {
  require_rank(x, 2, "add_bias");
  if (b.value().size() != x.shape()[1]) {
    throw ShapeError("add_bias: bias " + shape_string(b.shape()) + " does not match " +
                     shape_string(x.shape()));
  }
  Tensor out(x.shape());
  out.matrix() = x.value().matrix().rowwise() + b.value().flat().transpose();
  return x.graph().record(std::move(out), {x, b}, [x, b](Graph& g, const Tensor& grad, const Tensor&) {
    if (auto* gx = g.grad_target(x)) gx->flat() += grad.flat();
    if (auto* gb = g.grad_target(b)) gb->flat() += grad.matrix().colwise().sum().transpose();
  });
}

Var affine(const Var& x, double scale, double shift) {
  Tensor out(x.shape());
  out.flat() = (scale * x.value().flat().array() + shift).matrix();
  return unary(x, std::move(out), [scale](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor&) {
    gx.flat() += scale * grad.flat();
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  // Clamped so the output stays strictly inside (0, 1) past |x| ~ 37, where
  // the plain formula rounds to 0 or 1.
  static const double lo = std::numeric_limits<double>::min();
  static const double hi = std::nextafter(1.0, 0.0);
  out.flat() = (1.0 / (1.0 + (-x.value().flat().array()).exp())).max(lo).min(hi).matrix();
  return unary(x, std::move(out), [](Tensor& gx, const Tensor& grad, const Tensor& y, const Tensor&) {
    gx.flat().array() += grad.flat().array() * y.flat().array() * (1.0 - y.flat().array());
  });
}

Var tanh(const Var& x) {
  Tensor out(x.shape());
  out.flat() = x.value().flat().array().tanh().matrix();
  return unary(x, std::move(out), [](Tensor& gx, const Tensor& grad, const Tensor& y, const Tensor&) {
    gx.flat().array() += grad.flat().array() * (1.0 - y.flat().array().square());
  });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  out.flat() = x.value().flat().cwiseMax(0.0);
  return unary(x, std::move(out), [](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor& in) {
    gx.flat().array() += (in.flat().array() > 0.0).select(grad.flat().array(), 0.0);
  });
}

Var square(const Var& x) {
  Tensor out(x.shape());
  out.flat() = x.value().flat().array().square().matrix();
  return unary(x, std::move(out), [](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor& in) {
    gx.flat().array() += 2.0 * grad.flat().array() * in.flat().array();
  });
}

Var sum(const Var& x) {
  return unary(x, Tensor::scalar(x.value().flat().sum()),
               [](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor&) {
                 gx.flat().array() += grad.item();
               });
}

Var mean(const Var& x) {
  const auto n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return unary(x, Tensor::scalar(x.value().flat().sum() / n),
               [n](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor&) {
                 gx.flat().array() += grad.item() / n;
               });
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of zero operands");
  const Eigen::Index rows = parts.front().shape().at(0);
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat");
    if (p.shape()[0] != rows) {
      throw ShapeError("concat: row counts differ " + shape_string(parts.front().shape()) + " vs " +
                       shape_string(p.shape()));
    }
    cols += p.shape()[1];
  }
  Tensor out(Shape{rows, cols});
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.matrix().middleCols(at, p.shape()[1]) = p.value().matrix();
    at += p.shape()[1];
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts.front().graph().record(
      std::move(out), parts, [keep](Graph& g, const Tensor& grad, const Tensor&) {
        Eigen::Index offset = 0;
        for (const auto& p : keep) {
          const auto width = p.shape()[1];
          if (auto* gp = g.grad_target(p)) gp->matrix() += grad.matrix().middleCols(offset, width);
          offset += width;
        }
      });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  require_rank(x, 2, "slice_cols");
  if (start < 0 || count < 0 || start + count > x.shape()[1]) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + shape_string(x.shape()));
  }
  Tensor out(Shape{x.shape()[0], count});
  out.matrix() = x.value().matrix().middleCols(start, count);
  return unary(x, std::move(out), [start, count](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor&) {
    gx.matrix().middleCols(start, count) += grad.matrix();
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value();
  out.reshape(std::move(shape));
  return unary(x, std::move(out), [](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor&) {
    gx.flat() += grad.flat();
  });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, Padding padding) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3]) {
    throw ShapeError("conv2d: filters " + shape_string(ws) + " do not fit input " + shape_string(xs));
  }
  if (b.value().size() != ws[0]) {
    throw ShapeError("conv2d: bias " + shape_string(b.shape()) + " does not match filters " +
                     shape_string(ws));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");

  ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], 0, 0, 0, 0, stride};
  if (padding == Padding::Valid) {
    if (geo.h < geo.k || geo.w < geo.k) {
      throw ShapeError("conv2d: input " + shape_string(xs) + " smaller than filters " + shape_string(ws));
    }
    geo.ho = (geo.h - geo.k) / stride + 1;
    geo.wo = (geo.w - geo.k) / stride + 1;
  } else {
    geo.ho = (geo.h + stride - 1) / stride;
    geo.wo = (geo.w + stride - 1) / stride;
    geo.pad_top = std::max<Eigen::Index>((geo.ho - 1) * stride + geo.k - geo.h, 0) / 2;
    geo.pad_left = std::max<Eigen::Index>((geo.wo - 1) * stride + geo.k - geo.w, 0) / 2;
  }

  Tensor out(Shape{geo.n, geo.o, geo.ho, geo.wo});
  auto cols = std::make_shared<std::vector<RowMatrix>>(static_cast<std::size_t>(geo.n));
  const ConstMatrixMap filters(w.value().data(), geo.o, geo.patch());
  const auto in_stride = geo.c * geo.h * geo.w;
  const auto out_stride = geo.o * geo.out_pixels();
  for (Eigen::Index n = 0; n < geo.n; ++n) {
    auto& col = (*cols)[static_cast<std::size_t>(n)];
    im2col(x.value().data() + n * in_stride, geo, col);
    MatrixMap dst(out.data() + n * out_stride, geo.o, geo.out_pixels());
    dst.noalias() = filters * col;
    dst.colwise() += b.value().flat();
  }

  return x.graph().record(
      std::move(out), {x, w, b}, [x, w, b, geo, cols](Graph& g, const Tensor& grad, const Tensor&) {
        auto* gx = g.grad_target(x);
        auto* gw = g.grad_target(w);
        auto* gb = g.grad_target(b);
        const ConstMatrixMap filters(w.value().data(), geo.o, geo.patch());
        const auto in_stride = geo.c * geo.h * geo.w;
        const auto out_stride = geo.o * geo.out_pixels();
        RowMatrix dcols;
        for (Eigen::Index n = 0; n < geo.n; ++n) {
          const ConstMatrixMap g_out(grad.data() + n * out_stride, geo.o, geo.out_pixels());
          const auto& col = (*cols)[static_cast<std::size_t>(n)];
          if (gw) MatrixMap(gw->data(), geo.o, geo.patch()).noalias() += g_out * col.transpose();
          if (gb) gb->flat() += g_out.rowwise().sum();
          if (gx) {
            dcols.noalias() = filters.transpose() * g_out;
            col2im_add(dcols, geo, gx->data() + n * in_stride);
          }
        }
      });
}

Var max_pool2d(const Var& x, int kernel, int stride) {
  require_rank(x, 4, "max_pool2d");
  const auto& s = x.shape();
  if (kernel < 1 || stride < 1 || s[2] < kernel || s[3] < kernel) {
    throw ShapeError("max_pool2d: window " + std::to_string(kernel) + " does not fit " + shape_string(s));
  }
  const Eigen::Index ho = (s[2] - kernel) / stride + 1;
  const Eigen::Index wo = (s[3] - kernel) / stride + 1;
  Tensor out(Shape{s[0], s[1], ho, wo});
  auto argmax = std::make_shared<std::vector<Eigen::Index>>(static_cast<std::size_t>(out.size()));
  const double* in = x.value().data();
  Eigen::Index o = 0;
  for (Eigen::Index plane = 0; plane < s[0] * s[1]; ++plane) {
    const Eigen::Index base = plane * s[2] * s[3];
    for (Eigen::Index oy = 0; oy < ho; ++oy) {
      for (Eigen::Index ox = 0; ox < wo; ++ox, ++o) {
        Eigen::Index best = base + (oy * stride) * s[3] + ox * stride;
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            const Eigen::Index idx = base + (oy * stride + ky) * s[3] + ox * stride + kx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        (*argmax)[static_cast<std::size_t>(o)] = best;
        out.data()[o] = in[best];
      }
    }
  }
  return unary(x, std::move(out), [argmax](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor&) {
    for (std::size_t i = 0; i < argmax->size(); ++i) gx.data()[(*argmax)[i]] += grad.data()[i];
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const auto rows = logits.shape()[0];
  const auto classes = logits.shape()[1];
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(logits.shape()));
  }
  if (rows == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw PreconditionError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  auto probs = std::make_shared<RowMatrix>(rows, classes);
  const auto z = logits.value().matrix();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double m = z.row(i).maxCoeff();
    const auto e = (z.row(i).array() - m).exp();
    const double total = e.sum();
    loss -= z(i, labels[static_cast<std::size_t>(i)]) - m - std::log(total);
    probs->row(i) = e / total;
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return unary(logits, Tensor::scalar(loss / static_cast<double>(rows)),
               [probs, ys](Tensor& gx, const Tensor& grad, const Tensor&, const Tensor&) {
                 const double scale = grad.item() / static_cast<double>(ys.size());
                 auto gm = gx.matrix();
                 gm += scale * (*probs);
                 for (std::size_t i = 0; i < ys.size(); ++i) {
                   gm(static_cast<Eigen::Index>(i), ys[i]) -= scale;
                 }
               });
}

Var gather_rows(std::span<const Var> sources, std::span<const int> source_of_row) {
  if (sources.empty()) throw ShapeError("gather_rows: no sources");
  const Shape& shape = sources.front().shape();
  for (const auto& s : sources) {
    require_rank(s, 2, "gather_rows");
    if (s.shape() != shape) {
      throw ShapeError("gather_rows: source shapes differ " + shape_string(shape) + " vs " +
                       shape_string(s.shape()));
    }
  }
  if (static_cast<Eigen::Index>(source_of_row.size()) != shape[0]) {
    throw ShapeError("gather_rows: index length does not match " + shape_string(shape));
  }
  Tensor out(shape);
  for (Eigen::Index i = 0; i < shape[0]; ++i) {
    const int src = source_of_row[static_cast<std::size_t>(i)];
    if (src >= static_cast<int>(sources.size())) throw ShapeError("gather_rows: source index out of range");
    if (src >= 0) out.matrix().row(i) = sources[static_cast<std::size_t>(src)].value().matrix().row(i);
  }
  std::vector<Var> keep(sources.begin(), sources.end());
  std::vector<int> index(source_of_row.begin(), source_of_row.end());
  return sources.front().graph().record(
      std::move(out), sources, [keep, index](Graph& g, const Tensor& grad, const Tensor&) {
        for (std::size_t i = 0; i < index.size(); ++i) {
          if (index[i] < 0) continue;
          if (auto* gs = g.grad_target(keep[static_cast<std::size_t>(index[i])])) {
            gs->matrix().row(static_cast<Eigen::Index>(i)) += grad.matrix().row(static_cast<Eigen::Index>(i));
          }
        }
      });
}

Var select_rows(std::span<const std::uint8_t> mask, const Var& when_set, const Var& when_clear) {
  require_same(when_set, when_clear, "select_rows");
  require_rank(when_set, 2, "select_rows");
  if (static_cast<Eigen::Index>(mask.size()) != when_set.shape()[0]) {
    throw ShapeError("select_rows: mask length does not match " + shape_string(when_set.shape()));
  }
  Tensor out(when_set.shape());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.matrix().row(i) = (mask[static_cast<std::size_t>(i)] ? when_set : when_clear).value().matrix().row(i);
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return when_set.graph().record(
      std::move(out), {when_set, when_clear}, [m, when_set, when_clear](Graph& g, const Tensor& grad, const Tensor&) {
        auto* gs = g.grad_target(when_set);
        auto* gc = g.grad_target(when_clear);
        for (std::size_t i = 0; i < m.size(); ++i) {
          auto* target = m[i] ? gs : gc;
          if (target) target->matrix().row(static_cast<Eigen::Index>(i)) += grad.matrix().row(static_cast<Eigen::Index>(i));
        }
      });
}

}  // namespace sketchhash
