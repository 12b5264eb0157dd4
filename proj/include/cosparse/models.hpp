#pragma once

#include "cosparse/autodiff.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cosparse {

enum class LayerKind { conv, maxpool, avgpool, linear };

/// One stage of a feed-forward stack. Conv and non-head linear layers are
/// followed by a rectifier; the first linear layer flattens its input.
struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  Index out = 0;  // conv out-channels or linear out-features
  Index kernel = 0;
  Index stride = 1;
  Index pad = 0;
  bool head = false;

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  std::string name;
  Index in_channels = 1;
  Index canvas = 32;
  std::vector<LayerSpec> layers;

  Index num_classes() const;
  const LayerSpec& head() const;
  bool operator==(const ModelSpec&) const = default;
};

/// Input/output activation shape of each layer for a single sample.
struct LayerGeometry {
  Shape in;   // C x H x W for spatial layers, F for linear
  Shape out;
};

/// Shape-checks the layer chain for a canvas x canvas input; throws
/// ShapeError naming the first inconsistent layer.
std::vector<LayerGeometry> trace_geometry(const ModelSpec& spec);

/// Desk-scale reference stacks: "mlp-s", "cnn-s", "cnn-m".
ModelSpec reference_spec(const std::string& name, Index in_channels, Index canvas, Index classes);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);
/// SHA-256 of the canonical JSON rendering of the spec.
std::array<std::uint8_t, 32> spec_digest(const ModelSpec& spec);

template <typename Scalar>
using WeightMap = std::map<std::string, DiffTensor<Scalar>>;

struct NamedParam {
  std::string name;
  DiffTensor<float> tensor;
};

/// Parameters of one model instance plus the names of the weights eligible
/// for pruning (conv/linear weights, never biases or the head).
class ModelState {
 public:
  ModelSpec spec;
  std::vector<NamedParam> params;
  std::vector<std::string> prunable;

  DiffTensor<float>& param(const std::string& name);
  const DiffTensor<float>& param(const std::string& name) const;
  bool has_param(const std::string& name) const;
  bool is_head_param(const std::string& name) const;

  /// Deep copy with fresh nodes; the copy shares no buffers with *this.
  ModelState clone() const;

  /// Name -> tensor view of the parameters. For Scalar = float these alias
  /// the live parameters; for other scalars they are detached casts.
  template <typename Scalar>
  WeightMap<Scalar> weights() const;

  std::vector<DiffTensor<float>> head_params() const;
  std::vector<DiffTensor<float>> all_params() const;
  void zero_grad();
};

std::string weight_name(const LayerSpec& layer);
std::string bias_name(const LayerSpec& layer);

/// Deterministic fan-in scaled uniform init: He bound sqrt(6/fan_in) for
/// hidden layers, 1/sqrt(fan_in) for the head, zero biases.
ModelState build_model(const ModelSpec& spec, std::uint64_t seed);

/// Same body, freshly initialised head for `classes` outputs.
ModelState replace_head(const ModelState& state, Index classes, std::uint64_t seed);

Index param_count(const ModelState& state, bool prunable_only);

/// Logits (N x classes) for an N x C x S x S batch.
template <typename Scalar>
DiffTensor<Scalar> forward(Tape<Scalar>& tape, const ModelSpec& spec, const WeightMap<Scalar>& weights,
                           const DiffTensor<Scalar>& input);

/// Dense-FLOPs of one forward pass (2 * MACs, pooling and activations free).
std::int64_t dense_flops(const ModelSpec& spec);

}  // namespace cosparse
