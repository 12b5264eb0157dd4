#include "cosparse/ops.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace cosparse {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace ops {
namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

template <typename Scalar>
void require_rank(const char* op, const char* name, const DiffTensor<Scalar>& t, Index rank) {
  if (!t) shape_fail(op, std::string(name) + " is empty");
  if (t.value().rank() != rank) {
    shape_fail(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                       to_string(t.shape()));
  }
}

// b broadcasts over a when b's shape equals a trailing suffix of a's shape.
bool broadcastable(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  return std::equal(b.rbegin(), b.rend(), a.rbegin());
}

}  // namespace

template <typename Scalar>
DiffTensor<Scalar> conv2d(Tape<Scalar>& tape, const DiffTensor<Scalar>& x,
                          const DiffTensor<Scalar>& weight, const DiffTensor<Scalar>& bias,
                          Conv2dAttrs attrs) {
  require_rank("conv2d", "input", x, 4);
  require_rank("conv2d", "kernel", weight, 4);
  const Index n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const Index o = weight.shape()[0], kh = weight.shape()[2], kw = weight.shape()[3];
  if (weight.shape()[1] != c) {
    shape_fail("conv2d", "input channels " + std::to_string(c) + " vs kernel " +
                             to_string(weight.shape()));
  }
  if (attrs.stride < 1 || attrs.pad < 0) shape_fail("conv2d", "stride must be >= 1 and pad >= 0");
  if (h + 2 * attrs.pad < kh || w + 2 * attrs.pad < kw) {
    shape_fail("conv2d", "kernel " + to_string(weight.shape()) + " larger than padded input " +
                             to_string(x.shape()));
  }
  if (bias && bias.shape() != Shape{o}) {
    shape_fail("conv2d", "bias shape " + to_string(bias.shape()) + " for " + std::to_string(o) +
                             " output channels");
  }
  const Index ho = (h + 2 * attrs.pad - kh) / attrs.stride + 1;
  const Index wo = (w + 2 * attrs.pad - kw) / attrs.stride + 1;
  const Index k = c * kh * kw;
  const Index p = ho * wo;

  Tensor<Scalar> cols({n, k, p});
  const Scalar* xs = x.value().data();
  for (Index b = 0; b < n; ++b) {
    Scalar* col = cols.data() + b * k * p;
    for (Index ci = 0; ci < c; ++ci) {
      for (Index i = 0; i < kh; ++i) {
        for (Index j = 0; j < kw; ++j) {
          Scalar* row = col + ((ci * kh + i) * kw + j) * p;
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * attrs.stride - attrs.pad + i;
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * attrs.stride - attrs.pad + j;
              const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
              row[oy * wo + ox] = inside ? xs[((b * c + ci) * h + iy) * w + ix] : Scalar(0);
            }
          }
        }
      }
    }
  }

  Tensor<Scalar> out({n, o, ho, wo});
  const auto wmat = weight.value().matrix(o, k);
  for (Index b = 0; b < n; ++b) {
    Eigen::Map<const RowMatrix<Scalar>> col(cols.data() + b * k * p, k, p);
    Eigen::Map<RowMatrix<Scalar>> dst(out.data() + b * o * p, o, p);
    dst.noalias() = wmat * col;
    if (bias) dst.colwise() += bias.value().values();
  }

  auto y = tape.make_output(std::move(out), {&x, &weight, &bias});
  tape.record("conv2d", {x, weight, bias}, y,
              [x, weight, bias, cols = std::move(cols), n, c, h, w, o, kh, kw, ho, wo, k, p,
               attrs](const Tensor<Scalar>& g) mutable {
                const auto wmat = weight.value().matrix(o, k);
                for (Index b = 0; b < n; ++b) {
                  Eigen::Map<const RowMatrix<Scalar>> gb(g.data() + b * o * p, o, p);
                  Eigen::Map<const RowMatrix<Scalar>> col(cols.data() + b * k * p, k, p);
                  if (weight.requires_grad()) {
                    weight.grad_buffer().matrix(o, k).noalias() += gb * col.transpose();
                  }
                  if (bias && bias.requires_grad()) {
                    bias.grad_buffer().values() += gb.rowwise().sum();
                  }
                  if (x.requires_grad()) {
                    RowMatrix<Scalar> dcol = wmat.transpose() * gb;
                    Scalar* dx = x.grad_buffer().data();
                    for (Index ci = 0; ci < c; ++ci) {
                      for (Index i = 0; i < kh; ++i) {
                        for (Index j = 0; j < kw; ++j) {
                          const Scalar* row = dcol.data() + ((ci * kh + i) * kw + j) * p;
                          for (Index oy = 0; oy < ho; ++oy) {
                            const Index iy = oy * attrs.stride - attrs.pad + i;
                            if (iy < 0 || iy >= h) continue;
                            for (Index ox = 0; ox < wo; ++ox) {
                              const Index ix = ox * attrs.stride - attrs.pad + j;
                              if (ix < 0 || ix >= w) continue;
                              dx[((b * c + ci) * h + iy) * w + ix] += row[oy * wo + ox];
                            }
                          }
                        }
                      }
                    }
                  }
                }
              });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> linear(Tape<Scalar>& tape, const DiffTensor<Scalar>& x,
                          const DiffTensor<Scalar>& weight, const DiffTensor<Scalar>& bias) {
  require_rank("linear", "input", x, 2);
  require_rank("linear", "weight", weight, 2);
  const Index n = x.shape()[0], in = x.shape()[1], out_f = weight.shape()[0];
  if (weight.shape()[1] != in) {
    shape_fail("linear", "input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  }
  if (bias && bias.shape() != Shape{out_f}) {
    shape_fail("linear", "bias shape " + to_string(bias.shape()) + " for " +
                             std::to_string(out_f) + " outputs");
  }
  Tensor<Scalar> out({n, out_f});
  out.matrix(n, out_f).noalias() = x.value().matrix(n, in) * weight.value().matrix(out_f, in).transpose();
  if (bias) out.matrix(n, out_f).rowwise() += bias.value().values().transpose();

  auto y = tape.make_output(std::move(out), {&x, &weight, &bias});
  tape.record("linear", {x, weight, bias}, y,
              [x, weight, bias, n, in, out_f](const Tensor<Scalar>& g) mutable {
                const auto gm = g.matrix(n, out_f);
                if (x.requires_grad()) {
                  x.grad_buffer().matrix(n, in).noalias() += gm * weight.value().matrix(out_f, in);
                }
                if (weight.requires_grad()) {
                  weight.grad_buffer().matrix(out_f, in).noalias() +=
                      gm.transpose() * x.value().matrix(n, in);
                }
                if (bias && bias.requires_grad()) {
                  bias.grad_buffer().values() += gm.colwise().sum().transpose();
                }
              });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> relu(Tape<Scalar>& tape, const DiffTensor<Scalar>& x) {
  if (!x) shape_fail("relu", "input is empty");
  Tensor<Scalar> out = x.value();
  std::vector<unsigned char> active(static_cast<std::size_t>(out.size()));
  for (Index i = 0; i < out.size(); ++i) {
    active[static_cast<std::size_t>(i)] = out[i] > Scalar(0);
    if (!active[static_cast<std::size_t>(i)]) out[i] = Scalar(0);
  }
  tape.mix_nonsmooth(active.data(), active.size());
  auto y = tape.make_output(std::move(out), {&x});
  tape.record("relu", {x}, y, [x, active = std::move(active)](const Tensor<Scalar>& g) mutable {
    auto& dx = x.grad_buffer();
    for (Index i = 0; i < g.size(); ++i) {
      if (active[static_cast<std::size_t>(i)]) dx[i] += g[i];
    }
  });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> maxpool2d(Tape<Scalar>& tape, const DiffTensor<Scalar>& x, Pool2dAttrs attrs) {
  require_rank("maxpool2d", "input", x, 4);
  const Index n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (attrs.kernel < 1 || attrs.stride < 1 || attrs.kernel > h || attrs.kernel > w) {
    shape_fail("maxpool2d", "kernel " + std::to_string(attrs.kernel) + " invalid for input " +
                                to_string(x.shape()));
  }
  const Index ho = (h - attrs.kernel) / attrs.stride + 1;
  const Index wo = (w - attrs.kernel) / attrs.stride + 1;
  Tensor<Scalar> out({n, c, ho, wo});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const Scalar* xs = x.value().data();
  Index q = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox, ++q) {
        Index best = plane * h * w + (oy * attrs.stride) * w + ox * attrs.stride;
        for (Index i = 0; i < attrs.kernel; ++i) {
          for (Index j = 0; j < attrs.kernel; ++j) {
            const Index idx = plane * h * w + (oy * attrs.stride + i) * w + ox * attrs.stride + j;
            if (xs[idx] > xs[best]) best = idx;
          }
        }
        argmax[static_cast<std::size_t>(q)] = best;
        out[q] = xs[best];
      }
    }
  }
  tape.mix_nonsmooth(argmax.data(), argmax.size() * sizeof(Index));
  auto y = tape.make_output(std::move(out), {&x});
  tape.record("maxpool2d", {x}, y, [x, argmax = std::move(argmax)](const Tensor<Scalar>& g) mutable {
    auto& dx = x.grad_buffer();
    for (Index i = 0; i < g.size(); ++i) dx[argmax[static_cast<std::size_t>(i)]] += g[i];
  });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> avgpool2d(Tape<Scalar>& tape, const DiffTensor<Scalar>& x, Pool2dAttrs attrs) {
  require_rank("avgpool2d", "input", x, 4);
  const Index n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (attrs.kernel < 1 || attrs.stride < 1 || attrs.kernel > h || attrs.kernel > w) {
    shape_fail("avgpool2d", "kernel " + std::to_string(attrs.kernel) + " invalid for input " +
                                to_string(x.shape()));
  }
  const Index ho = (h - attrs.kernel) / attrs.stride + 1;
  const Index wo = (w - attrs.kernel) / attrs.stride + 1;
  const Scalar inv = Scalar(1) / Scalar(attrs.kernel * attrs.kernel);
  Tensor<Scalar> out({n, c, ho, wo});
  const Scalar* xs = x.value().data();
  Index q = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox, ++q) {
        Scalar acc = 0;
        for (Index i = 0; i < attrs.kernel; ++i) {
          for (Index j = 0; j < attrs.kernel; ++j) {
            acc += xs[plane * h * w + (oy * attrs.stride + i) * w + ox * attrs.stride + j];
          }
        }
        out[q] = acc * inv;
      }
    }
  }
  auto y = tape.make_output(std::move(out), {&x});
  tape.record("avgpool2d", {x}, y,
              [x, n, c, h, w, ho, wo, attrs, inv](const Tensor<Scalar>& g) mutable {
                Scalar* dx = x.grad_buffer().data();
                Index q = 0;
                for (Index plane = 0; plane < n * c; ++plane) {
                  for (Index oy = 0; oy < ho; ++oy) {
                    for (Index ox = 0; ox < wo; ++ox, ++q) {
                      const Scalar share = g[q] * inv;
                      for (Index i = 0; i < attrs.kernel; ++i) {
                        for (Index j = 0; j < attrs.kernel; ++j) {
                          dx[plane * h * w + (oy * attrs.stride + i) * w + ox * attrs.stride + j] +=
                              share;
                        }
                      }
                    }
                  }
                }
              });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> add(Tape<Scalar>& tape, const DiffTensor<Scalar>& a, const DiffTensor<Scalar>& b) {
  if (!a || !b) shape_fail("add", "empty operand");
  if (!broadcastable(a.shape(), b.shape())) {
    shape_fail("add", "cannot broadcast " + to_string(b.shape()) + " onto " + to_string(a.shape()));
  }
  const Index bs = b.size();
  const Index reps = bs == 0 ? 0 : a.size() / bs;
  Tensor<Scalar> out = a.value();
  for (Index r = 0; r < reps; ++r) out.values().segment(r * bs, bs) += b.value().values();
  auto y = tape.make_output(std::move(out), {&a, &b});
  tape.record("add", {a, b}, y, [a, b, bs, reps](const Tensor<Scalar>& g) mutable {
    if (a.requires_grad()) a.grad_buffer().values() += g.values();
    if (b.requires_grad()) {
      auto& db = b.grad_buffer();
      for (Index r = 0; r < reps; ++r) db.values() += g.values().segment(r * bs, bs);
    }
  });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> mul(Tape<Scalar>& tape, const DiffTensor<Scalar>& a, const DiffTensor<Scalar>& b) {
  if (!a || !b) shape_fail("mul", "empty operand");
  if (!broadcastable(a.shape(), b.shape())) {
    shape_fail("mul", "cannot broadcast " + to_string(b.shape()) + " onto " + to_string(a.shape()));
  }
  const Index bs = b.size();
  const Index reps = bs == 0 ? 0 : a.size() / bs;
  Tensor<Scalar> out = a.value();
  for (Index r = 0; r < reps; ++r) {
    out.values().segment(r * bs, bs).array() *= b.value().values().array();
  }
  auto y = tape.make_output(std::move(out), {&a, &b});
  tape.record("mul", {a, b}, y, [a, b, bs, reps](const Tensor<Scalar>& g) mutable {
    // Read both operands before writing either grad: a and b may alias.
    const auto& av = a.value().values();
    const auto& bv = b.value().values();
    if (a.requires_grad()) {
      auto& da = a.grad_buffer();
      for (Index r = 0; r < reps; ++r) {
        da.values().segment(r * bs, bs).array() += g.values().segment(r * bs, bs).array() * bv.array();
      }
    }
    if (b.requires_grad()) {
      auto& db = b.grad_buffer();
      for (Index r = 0; r < reps; ++r) {
        db.values().array() += g.values().segment(r * bs, bs).array() * av.segment(r * bs, bs).array();
      }
    }
  });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> flatten(Tape<Scalar>& tape, const DiffTensor<Scalar>& x) {
  if (!x || x.value().rank() < 1) shape_fail("flatten", "input must have a batch axis");
  const Index n = x.shape()[0];
  const Index rest = n == 0 ? 0 : x.size() / n;
  auto y = tape.make_output(x.value().reshaped({n, rest}), {&x});
  tape.record("flatten", {x}, y, [x](const Tensor<Scalar>& g) mutable {
    x.grad_buffer().values() += g.values();
  });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> sum(Tape<Scalar>& tape, const DiffTensor<Scalar>& x) {
  if (!x) shape_fail("sum", "input is empty");
  Tensor<Scalar> out({1});
  out[0] = x.value().values().sum();
  auto y = tape.make_output(std::move(out), {&x});
  tape.record("sum", {x}, y, [x](const Tensor<Scalar>& g) mutable {
    x.grad_buffer().values().array() += g[0];
  });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> softmax_cross_entropy(Tape<Scalar>& tape, const DiffTensor<Scalar>& logits,
                                         std::span<const int> labels) {
  require_rank("softmax_cross_entropy", "logits", logits, 2);
  const Index n = logits.shape()[0], k = logits.shape()[1];
  if (static_cast<Index>(labels.size()) != n) {
    shape_fail("softmax_cross_entropy", std::to_string(labels.size()) + " labels for logits " +
                                            to_string(logits.shape()));
  }
  if (n == 0) shape_fail("softmax_cross_entropy", "empty batch");
  Tensor<Scalar> probs({n, k});
  auto lm = logits.value().matrix(n, k);
  auto pm = probs.matrix(n, k);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) {
      shape_fail("softmax_cross_entropy", "label " + std::to_string(y) + " outside [0, " +
                                              std::to_string(k) + ")");
    }
    const Scalar mx = lm.row(i).maxCoeff();
    pm.row(i) = (lm.row(i).array() - mx).exp().matrix();
    const Scalar z = pm.row(i).sum();
    pm.row(i) /= z;
    total += static_cast<double>(std::log(z) + mx - lm(i, y));
  }
  Tensor<Scalar> out({1});
  out[0] = static_cast<Scalar>(total / static_cast<double>(n));
  std::vector<int> ys(labels.begin(), labels.end());
  auto loss = tape.make_output(std::move(out), {&logits});
  tape.record("softmax_cross_entropy", {logits}, loss,
              [logits, probs = std::move(probs), ys = std::move(ys), n, k](const Tensor<Scalar>& g) mutable {
                auto dl = logits.grad_buffer().matrix(n, k);
                const Scalar scale = g[0] / Scalar(n);
                const auto pm = probs.matrix(n, k);
                for (Index i = 0; i < n; ++i) {
                  dl.row(i) += scale * pm.row(i);
                  dl(i, ys[static_cast<std::size_t>(i)]) -= scale;
                }
              });
  return loss;
}

template <typename Scalar>
DiffTensor<Scalar> mask_weight(Tape<Scalar>& tape, const DiffTensor<Scalar>& theta,
                               const Tensor<Scalar>& mask, const DiffTensor<Scalar>& scores) {
  if (!theta) shape_fail("mask_weight", "theta is empty");
  const bool elementwise = mask.shape() == theta.shape();
  const bool channelwise = !elementwise && mask.rank() == 1 && theta.value().rank() >= 1 &&
                           mask.dim(0) == theta.shape()[0];
  if (!elementwise && !channelwise) {
    shape_fail("mask_weight", "mask " + to_string(mask.shape()) + " does not fit weight " +
                                  to_string(theta.shape()));
  }
  if (scores && scores.shape() != mask.shape()) {
    shape_fail("mask_weight", "scores " + to_string(scores.shape()) + " vs mask " +
                                  to_string(mask.shape()));
  }
  const Index units = elementwise ? theta.size() : mask.dim(0);
  const Index span = elementwise ? 1 : (units == 0 ? 0 : theta.size() / units);
  Tensor<Scalar> out = theta.value();
  for (Index u = 0; u < units; ++u) out.values().segment(u * span, span) *= mask[u];

  auto y = tape.make_output(std::move(out), {&theta, &scores});
  tape.record("mask_weight", {theta, scores}, y,
              [theta, mask, scores, units, span](const Tensor<Scalar>& g) mutable {
                if (theta.requires_grad()) {
                  auto& dt = theta.grad_buffer();
                  for (Index u = 0; u < units; ++u) {
                    dt.values().segment(u * span, span) += mask[u] * g.values().segment(u * span, span);
                  }
                }
                if (scores && scores.requires_grad()) {
                  auto& ds = scores.grad_buffer();
                  const auto& tv = theta.value().values();
                  for (Index u = 0; u < units; ++u) {
                    ds[u] += g.values().segment(u * span, span).dot(tv.segment(u * span, span));
                  }
                }
              });
  return y;
}

template <typename Scalar>
DiffTensor<Scalar> embed(Tape<Scalar>& tape, const DiffTensor<Scalar>& patch, Index rows,
                         Index cols, Index top, Index left) {
  require_rank("embed", "patch", patch, 3);
  const Index c = patch.shape()[0], ph = patch.shape()[1], pw = patch.shape()[2];
  if (top < 0 || left < 0 || top + ph > rows || left + pw > cols) {
    shape_fail("embed", "patch " + to_string(patch.shape()) + " at (" + std::to_string(top) + ", " +
                            std::to_string(left) + ") exceeds canvas " + std::to_string(rows) +
                            "x" + std::to_string(cols));
  }
  Tensor<Scalar> out({c, rows, cols});
  for (Index ch = 0; ch < c; ++ch) {
    for (Index i = 0; i < ph; ++i) {
      for (Index j = 0; j < pw; ++j) {
        out[(ch * rows + top + i) * cols + left + j] = patch.value()[(ch * ph + i) * pw + j];
      }
    }
  }
  auto y = tape.make_output(std::move(out), {&patch});
  tape.record("embed", {patch}, y,
              [patch, c, ph, pw, rows, cols, top, left](const Tensor<Scalar>& g) mutable {
                auto& dp = patch.grad_buffer();
                for (Index ch = 0; ch < c; ++ch) {
                  for (Index i = 0; i < ph; ++i) {
                    for (Index j = 0; j < pw; ++j) {
                      dp[(ch * ph + i) * pw + j] += g[(ch * rows + top + i) * cols + left + j];
                    }
                  }
                }
              });
  return y;
}

#define COSPARSE_INSTANTIATE_OPS(S)                                                                \
  template DiffTensor<S> conv2d(Tape<S>&, const DiffTensor<S>&, const DiffTensor<S>&,               \
                                const DiffTensor<S>&, Conv2dAttrs);                                 \
  template DiffTensor<S> linear(Tape<S>&, const DiffTensor<S>&, const DiffTensor<S>&,               \
                                const DiffTensor<S>&);                                              \
  template DiffTensor<S> relu(Tape<S>&, const DiffTensor<S>&);                                      \
  template DiffTensor<S> maxpool2d(Tape<S>&, const DiffTensor<S>&, Pool2dAttrs);                    \
  template DiffTensor<S> avgpool2d(Tape<S>&, const DiffTensor<S>&, Pool2dAttrs);                    \
  template DiffTensor<S> add(Tape<S>&, const DiffTensor<S>&, const DiffTensor<S>&);                 \
  template DiffTensor<S> mul(Tape<S>&, const DiffTensor<S>&, const DiffTensor<S>&);                 \
  template DiffTensor<S> flatten(Tape<S>&, const DiffTensor<S>&);                                   \
  template DiffTensor<S> sum(Tape<S>&, const DiffTensor<S>&);                                       \
  template DiffTensor<S> softmax_cross_entropy(Tape<S>&, const DiffTensor<S>&, std::span<const int>); \
  template DiffTensor<S> mask_weight(Tape<S>&, const DiffTensor<S>&, const Tensor<S>&,              \
                                     const DiffTensor<S>&);                                         \
  template DiffTensor<S> embed(Tape<S>&, const DiffTensor<S>&, Index, Index, Index, Index);

COSPARSE_INSTANTIATE_OPS(float)
COSPARSE_INSTANTIATE_OPS(double)

#undef COSPARSE_INSTANTIATE_OPS

}  // namespace ops
}  // namespace cosparse
