#pragma once

#include "cosparse/models.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cosparse {

enum class Granularity { element, channel };
enum class ThresholdScope { global, per_layer };

std::string_view to_string(Granularity g);
std::string_view to_string(ThresholdScope s);
Granularity parse_granularity(std::string_view name);
ThresholdScope parse_scope(std::string_view name);

/// Learnable importance scores, one tensor per prunable weight (same shape
/// for element granularity, one entry per output channel otherwise).
struct ScoreSet {
  Granularity granularity = Granularity::element;
  std::vector<std::string> names;  // prunable weight names, model order
  std::vector<DiffTensor<float>> scores;

  std::vector<DiffTensor<float>> parameters() const { return scores; }
  const DiffTensor<float>& at(const std::string& weight) const;
  Index total() const;
};

/// Binary keep-masks (stored as 0.0f / 1.0f) matching a ScoreSet layout.
struct MaskState {
  Granularity granularity = Granularity::element;
  ThresholdScope scope = ThresholdScope::global;
  double sparsity = 0.0;
  std::vector<std::string> names;
  std::vector<Tensorf> masks;

  const Tensorf& at(const std::string& weight) const;
  Index total() const;
  Index kept() const;
};

/// floor((1 - s) * n), guarded against representation error in s.
Index keep_count(double sparsity, Index n);

/// Shape of the score/mask tensor for `weight` under `g`.
Shape unit_shape(const ModelState& model, const std::string& weight, Granularity g);

/// Scores proportional to the pretrained weights (element) or to each output
/// channel's L2 norm (channel), divided by the largest magnitude over all
/// prunable units so max |c| = 1 and the global ranking of |theta| is kept.
ScoreSet scaled_init(const ModelState& theta_pre, Granularity granularity);

/// Keeps exactly keep_count(s, N) units of largest |score| (pooled over all
/// layers for global scope, per layer otherwise). Ties go to the lower
/// (layer, flat index).
MaskState threshold(const ScoreSet& scores, double sparsity, ThresholdScope scope = ThresholdScope::global);

/// Same selection rule on arbitrary keys (largest key kept, no abs()).
MaskState threshold_keys(const std::vector<std::string>& names, const std::vector<Tensorf>& keys,
                         Granularity granularity, double sparsity, ThresholdScope scope);

MaskState identity_mask(const ModelState& model, Granularity granularity);

/// Throws std::invalid_argument unless the mask layout fits the model.
void check_mask(const ModelState& model, const MaskState& mask);

/// Weight map with every prunable weight replaced by theta (*) m. Channel
/// masks also gate the channel's bias so a dead channel emits exactly zero.
/// With `scores`, gradients reach the scores through the straight-through
/// rule; frozen (non-differentiable) theta yields no weight gradient.
template <typename Scalar>
WeightMap<Scalar> masked_weights(Tape<Scalar>& tape, const ModelSpec& spec, const WeightMap<Scalar>& weights,
                                 std::span<const std::string> names, std::span<const Tensor<Scalar>> masks,
                                 Granularity granularity, std::span<const DiffTensor<Scalar>> scores = {});

/// Logits of the masked model on an N x C x S x S batch.
DiffTensor<float> masked_forward(Tape<float>& tape, const ModelState& model, const MaskState& mask,
                                 const ScoreSet* scores, const DiffTensor<float>& batch);

/// Mask expanded to one entry per weight element.
std::vector<Tensorf> expand_to_elements(const ModelState& model, const MaskState& mask);

/// 1 - kept / total over the mask's own units.
double sparsity_of(const MaskState& mask);

/// Pruned parameters / all parameters. Channel masks also count each dead
/// channel's bias and the input slices of downstream layers fed by it.
double memory_reduction(const MaskState& mask, const ModelState& model);
Index pruned_param_count(const MaskState& mask, const ModelState& model);

/// Multiply-accumulate FLOPs (2 * MACs) for one forward pass. A channel mask
/// removes dead output channels and the matching downstream inputs.
std::int64_t flops_count(const ModelState& model, const MaskState* channel_mask = nullptr);

/// flops_count(dense) / flops_count(mask).
double speedup_ratio(const ModelState& model, const MaskState& channel_mask);

/// SHA-256 over the mask layout and bits, hex encoded.
std::string mask_digest(const MaskState& mask);

}  // namespace cosparse
