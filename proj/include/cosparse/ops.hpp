#pragma once

#include "cosparse/autodiff.hpp"

#include <span>

namespace cosparse::ops {

struct Conv2dAttrs {
  Index stride = 1;
  Index pad = 0;
};

struct Pool2dAttrs {
  Index kernel = 2;
  Index stride = 2;
};

/// NCHW input, OIHW kernel, optional bias of length O (pass an empty handle
/// to skip it).
template <typename Scalar>
DiffTensor<Scalar> conv2d(Tape<Scalar>& tape, const DiffTensor<Scalar>& x,
                          const DiffTensor<Scalar>& weight, const DiffTensor<Scalar>& bias,
                          Conv2dAttrs attrs);

/// x: N x in, weight: out x in, bias: out (optional).
template <typename Scalar>
DiffTensor<Scalar> linear(Tape<Scalar>& tape, const DiffTensor<Scalar>& x,
                          const DiffTensor<Scalar>& weight, const DiffTensor<Scalar>& bias);

template <typename Scalar>
DiffTensor<Scalar> relu(Tape<Scalar>& tape, const DiffTensor<Scalar>& x);

template <typename Scalar>
DiffTensor<Scalar> maxpool2d(Tape<Scalar>& tape, const DiffTensor<Scalar>& x, Pool2dAttrs attrs);

template <typename Scalar>
DiffTensor<Scalar> avgpool2d(Tape<Scalar>& tape, const DiffTensor<Scalar>& x, Pool2dAttrs attrs);

/// Elementwise a + b. `b` may also match a trailing suffix of `a`'s shape, in
/// which case it is broadcast over the leading axes.
template <typename Scalar>
DiffTensor<Scalar> add(Tape<Scalar>& tape, const DiffTensor<Scalar>& a, const DiffTensor<Scalar>& b);

/// Elementwise a * b with the same broadcasting rule as add().
template <typename Scalar>
DiffTensor<Scalar> mul(Tape<Scalar>& tape, const DiffTensor<Scalar>& a, const DiffTensor<Scalar>& b);

/// N x ... -> N x rest.
template <typename Scalar>
DiffTensor<Scalar> flatten(Tape<Scalar>& tape, const DiffTensor<Scalar>& x);

template <typename Scalar>
DiffTensor<Scalar> sum(Tape<Scalar>& tape, const DiffTensor<Scalar>& x);

/// Mean over the batch of -log softmax(logits)[label]. logits: N x K.
template <typename Scalar>
DiffTensor<Scalar> softmax_cross_entropy(Tape<Scalar>& tape, const DiffTensor<Scalar>& logits,
                                         std::span<const int> labels);

/// Effective weight theta * mask. `mask` matches theta elementwise or holds
/// one entry per output channel (axis 0), broadcast over the channel's
/// weights. When `scores` is given it receives the straight-through gradient
/// dL/dscore = dL/d(theta*mask) * theta (summed per channel), i.e. the
/// score-to-mask binarization is treated as identity. Pruned entries of
/// theta receive zero gradient.
template <typename Scalar>
DiffTensor<Scalar> mask_weight(Tape<Scalar>& tape, const DiffTensor<Scalar>& theta,
                               const Tensor<Scalar>& mask, const DiffTensor<Scalar>& scores);

/// Writes a C x p x q patch into a zero C x rows x cols canvas at (top, left).
template <typename Scalar>
DiffTensor<Scalar> embed(Tape<Scalar>& tape, const DiffTensor<Scalar>& patch, Index rows,
                         Index cols, Index top, Index left);

}  // namespace cosparse::ops
