#pragma once

#include "cosparse/autodiff.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace cosparse {

enum class PromptKind { none, pad, fix, random };

std::string_view to_string(PromptKind kind);
PromptKind parse_prompt_kind(std::string_view name);

/// Geometry of a visual prompt on an S x S canvas. `size` is the pad width
/// for pad prompts and the square side for fix/random prompts.
struct PromptSpec {
  PromptKind kind = PromptKind::none;
  Index canvas = 32;
  Index input_size = 32;
  Index size = 0;
  Index channels = 1;

  /// Throws std::invalid_argument on an inconsistent spec.
  void validate() const;
  /// True when the tunable region overlaps the resized image.
  bool overlaps_image() const;
  bool operator==(const PromptSpec&) const = default;
};

struct TunableCount {
  Index per_channel = 0;
  Index total = 0;
};

/// pad: 4p(S - p) per channel; fix/random: p^2 per channel; none: 0.
TunableCount tunable_count(const PromptSpec& spec);

/// Bilinear resampling of a C x h x w image (half-pixel centres, edge clamp).
Tensorf resize_bilinear(const Tensorf& image, Index out_h, Index out_w);

/// Resize to input_size x input_size and centre on a zero canvas at offset
/// floor((canvas - input_size) / 2).
Tensorf resize_and_pad(const Tensorf& image, Index input_size, Index canvas);

/// Batched resize_and_pad over N x C x h x w.
Tensorf prepare_canvases(const Tensorf& images, Index input_size, Index canvas);

/// Learnable perturbation plus the binary map of its tunable canvas region.
/// For pad/fix prompts `delta` is the full C x S x S canvas and entries
/// outside the map stay exactly zero; for random prompts `delta` is the
/// C x p x p patch that is pasted at the current placement.
class PromptState {
 public:
  PromptSpec spec;
  DiffTensor<float> delta;
  Tensorf tunable_mask;  // C x S x S, 1 = tunable at the current placement

  Index top() const { return top_; }
  Index left() const { return left_; }
  /// Draws a fresh uniform placement (random prompts only).
  void resample_placement();
  void set_placement(Index top, Index left);
  /// Effective C x S x S perturbation added to the canvas.
  Tensorf canvas_delta() const;
  std::uint64_t placement_draws() const { return draws_; }

 private:
  friend PromptState make_prompt(const PromptSpec& spec, std::uint64_t seed);
  void rebuild_mask();

  std::mt19937_64 rng_;
  Index top_ = 0;
  Index left_ = 0;
  std::uint64_t draws_ = 0;
};

/// Zero-initialised prompt; random prompts seed their placement generator
/// from `seed` and draw an initial placement.
PromptState make_prompt(const PromptSpec& spec, std::uint64_t seed);

/// canvases + delta (*) tunable_mask. In training mode a random prompt first
/// draws a new placement; evaluation reuses the last one. kind=none returns
/// the input handle unchanged.
DiffTensor<float> apply_prompt(Tape<float>& tape, const DiffTensor<float>& canvases, PromptState& prompt,
                               bool training);

/// The scalar-generic core of apply_prompt for pad/fix geometry.
template <typename Scalar>
DiffTensor<Scalar> add_masked_perturbation(Tape<Scalar>& tape, const DiffTensor<Scalar>& canvases,
                                           const DiffTensor<Scalar>& delta, const Tensor<Scalar>& mask);

}  // namespace cosparse
