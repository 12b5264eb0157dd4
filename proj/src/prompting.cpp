#include "cosparse/prompting.hpp"

#include "cosparse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cosparse {

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::none: return "none";
    case PromptKind::pad: return "pad";
    case PromptKind::fix: return "fix";
    case PromptKind::random: return "random";
  }
  return "?";
}

PromptKind parse_prompt_kind(std::string_view name) {
  if (name == "none") return PromptKind::none;
  if (name == "pad") return PromptKind::pad;
  if (name == "fix") return PromptKind::fix;
  if (name == "random") return PromptKind::random;
  throw std::invalid_argument("unknown prompt kind '" + std::string(name) + "'");
}

void PromptSpec::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("prompt spec: " + why); };
  if (channels < 1) fail("channels must be >= 1");
  if (canvas < 1) fail("canvas must be >= 1");
  if (input_size < 1 || input_size > canvas) {
    fail("input size " + std::to_string(input_size) + " outside [1, " + std::to_string(canvas) + "]");
  }
  if (size < 0) fail("size must be >= 0");
  switch (kind) {
    case PromptKind::none:
      if (size != 0) fail("kind none requires size 0");
      break;
    case PromptKind::pad:
      if (2 * size >= canvas) fail("pad width " + std::to_string(size) + " leaves no frozen centre");
      break;
    case PromptKind::fix:
    case PromptKind::random:
      if (size > canvas) fail("square side exceeds the canvas");
      break;
  }
}

bool PromptSpec::overlaps_image() const {
  const Index lo = (canvas - input_size) / 2;
  const Index hi = lo + input_size;  // image occupies [lo, hi)
  switch (kind) {
    case PromptKind::none: return false;
    case PromptKind::pad: return size > 0 && (size > lo || canvas - size < hi);
    case PromptKind::fix: return size > lo;
    case PromptKind::random: return size > 0;
  }
  return false;
}

TunableCount tunable_count(const PromptSpec& spec) {
  spec.validate();
  Index per = 0;
  switch (spec.kind) {
    case PromptKind::none: per = 0; break;
    case PromptKind::pad: per = 4 * spec.size * (spec.canvas - spec.size); break;
    case PromptKind::fix:
    case PromptKind::random: per = spec.size * spec.size; break;
  }
  return {per, per * spec.channels};
}

Tensorf resize_bilinear(const Tensorf& image, Index out_h, Index out_w) {
  if (image.rank() != 3) throw ShapeError("resize: expected C x h x w, got " + to_string(image.shape()));
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h < 1 || out_w < 1 || h < 1 || w < 1) throw ShapeError("resize: empty geometry");
  Tensorf out({c, out_h, out_w});
  auto source = [](Index dst, Index in, Index out_n, Index& i0, Index& i1, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out_n) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<Index>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    frac = s - static_cast<double>(i0);
  };
  for (Index y = 0; y < out_h; ++y) {
    Index y0, y1;
    double fy;
    source(y, h, out_h, y0, y1, fy);
    for (Index x = 0; x < out_w; ++x) {
      Index x0, x1;
      double fx;
      source(x, w, out_w, x0, x1, fx);
      for (Index ch = 0; ch < c; ++ch) {
        const float* plane = image.data() + ch * h * w;
        const double top = (1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
        const double bot = (1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
        out[(ch * out_h + y) * out_w + x] = static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  }
  return out;
}

Tensorf resize_and_pad(const Tensorf& image, Index input_size, Index canvas) {
  if (input_size < 1 || input_size > canvas) {
    throw std::invalid_argument("resize_and_pad: input size " + std::to_string(input_size) +
                                " exceeds canvas " + std::to_string(canvas));
  }
  const Tensorf resized =
      (image.rank() == 3 && image.dim(1) == input_size && image.dim(2) == input_size)
          ? image
          : resize_bilinear(image, input_size, input_size);
  const Index c = image.dim(0);
  const Index off = (canvas - input_size) / 2;
  Tensorf out({c, canvas, canvas});
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < input_size; ++y) {
      for (Index x = 0; x < input_size; ++x) {
        out[(ch * canvas + off + y) * canvas + off + x] =
            resized[(ch * input_size + y) * input_size + x];
      }
    }
  }
  return out;
}

Tensorf prepare_canvases(const Tensorf& images, Index input_size, Index canvas) {
  if (images.rank() != 4) throw ShapeError("prepare_canvases: expected N x C x h x w");
  const Index n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  Tensorf out({n, c, canvas, canvas});
  const Index in_plane = c * h * w, out_plane = c * canvas * canvas;
  for (Index i = 0; i < n; ++i) {
    Tensorf one({c, h, w}, images.values().segment(i * in_plane, in_plane));
    out.values().segment(i * out_plane, out_plane) = resize_and_pad(one, input_size, canvas).values();
  }
  return out;
}

void PromptState::rebuild_mask() {
  const Index c = spec.channels, s = spec.canvas, p = spec.size;
  tunable_mask = Tensorf::zeros({c, s, s});
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < s; ++y) {
      for (Index x = 0; x < s; ++x) {
        bool on = false;
        switch (spec.kind) {
          case PromptKind::none: break;
          case PromptKind::pad: on = y < p || y >= s - p || x < p || x >= s - p; break;
          case PromptKind::fix: on = y < p && x < p; break;
          case PromptKind::random: on = y >= top_ && y < top_ + p && x >= left_ && x < left_ + p; break;
        }
        if (on) tunable_mask[(ch * s + y) * s + x] = 1.0f;
      }
    }
  }
}

void PromptState::resample_placement() {
  if (spec.kind != PromptKind::random) return;
  std::uniform_int_distribution<Index> pick(0, spec.canvas - spec.size);
  top_ = pick(rng_);
  left_ = pick(rng_);
  ++draws_;
  rebuild_mask();
}

void PromptState::set_placement(Index top, Index left) {
  if (spec.kind != PromptKind::random) throw std::logic_error("placement applies to random prompts only");
  if (top < 0 || left < 0 || top + spec.size > spec.canvas || left + spec.size > spec.canvas) {
    throw std::out_of_range("prompt placement outside the canvas");
  }
  top_ = top;
  left_ = left;
  rebuild_mask();
}

Tensorf PromptState::canvas_delta() const {
  if (spec.kind == PromptKind::random) {
    auto tape = Tape<float>::inference();
    return ops::embed(tape, DiffTensor<float>::constant(delta.value()), spec.canvas, spec.canvas, top_, left_)
        .value();
  }
  Tensorf out = delta.value();
  out.values().array() *= tunable_mask.values().array();
  return out;
}

PromptState make_prompt(const PromptSpec& spec, std::uint64_t seed) {
  spec.validate();
  PromptState state;
  state.spec = spec;
  state.rng_.seed(seed);
  const Shape shape = spec.kind == PromptKind::random ? Shape{spec.channels, spec.size, spec.size}
                                                       : Shape{spec.channels, spec.canvas, spec.canvas};
  state.delta = DiffTensor<float>::parameter(Tensorf::zeros(shape));
  if (spec.kind == PromptKind::random) {
    state.resample_placement();
  } else {
    state.rebuild_mask();
  }
  return state;
}

template <typename Scalar>
DiffTensor<Scalar> add_masked_perturbation(Tape<Scalar>& tape, const DiffTensor<Scalar>& canvases,
                                           const DiffTensor<Scalar>& delta, const Tensor<Scalar>& mask) {
  auto masked = ops::mul(tape, delta, DiffTensor<Scalar>::constant(mask));
  return ops::add(tape, canvases, masked);
}

template DiffTensor<float> add_masked_perturbation(Tape<float>&, const DiffTensor<float>&,
                                                   const DiffTensor<float>&, const Tensor<float>&);
template DiffTensor<double> add_masked_perturbation(Tape<double>&, const DiffTensor<double>&,
                                                    const DiffTensor<double>&, const Tensor<double>&);

DiffTensor<float> apply_prompt(Tape<float>& tape, const DiffTensor<float>& canvases, PromptState& prompt,
                               bool training) {
  const auto& s = canvases.shape();
  if (s.size() != 4 || s[1] != prompt.spec.channels || s[2] != prompt.spec.canvas ||
      s[3] != prompt.spec.canvas) {
    throw ShapeError("apply_prompt: canvas batch " + to_string(s) + " does not match prompt canvas " +
                     std::to_string(prompt.spec.channels) + "x" + std::to_string(prompt.spec.canvas) +
                     "x" + std::to_string(prompt.spec.canvas));
  }
  switch (prompt.spec.kind) {
    case PromptKind::none:
      return canvases;
    case PromptKind::random: {
      if (training) prompt.resample_placement();
      auto placed = ops::embed(tape, prompt.delta, prompt.spec.canvas, prompt.spec.canvas, prompt.top(),
                               prompt.left());
      return ops::add(tape, canvases, placed);
    }
    case PromptKind::pad:
    case PromptKind::fix:
      return add_masked_perturbation(tape, canvases, prompt.delta, prompt.tunable_mask);
  }
  return canvases;
}

}  // namespace cosparse
