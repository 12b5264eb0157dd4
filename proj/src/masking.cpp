#include "cosparse/masking.hpp"

#include "cosparse/digest.hpp"
#include "cosparse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cosparse {

std::string_view to_string(Granularity g) { return g == Granularity::element ? "element" : "channel"; }
std::string_view to_string(ThresholdScope s) { return s == ThresholdScope::global ? "global" : "per_layer"; }

Granularity parse_granularity(std::string_view name) {
  if (name == "element") return Granularity::element;
  if (name == "channel") return Granularity::channel;
  throw std::invalid_argument("unknown granularity '" + std::string(name) + "'");
}

ThresholdScope parse_scope(std::string_view name) {
  if (name == "global") return ThresholdScope::global;
  if (name == "per_layer" || name == "per-layer") return ThresholdScope::per_layer;
  throw std::invalid_argument("unknown threshold scope '" + std::string(name) + "'");
}

const DiffTensor<float>& ScoreSet::at(const std::string& weight) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == weight) return scores[i];
  }
  throw std::out_of_range("no scores for '" + weight + "'");
}

Index ScoreSet::total() const {
  Index n = 0;
  for (const auto& s : scores) n += s.size();
  return n;
}

const Tensorf& MaskState::at(const std::string& weight) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == weight) return masks[i];
  }
  throw std::out_of_range("no mask for '" + weight + "'");
}

Index MaskState::total() const {
  Index n = 0;
  for (const auto& m : masks) n += m.size();
  return n;
}

Index MaskState::kept() const {
  Index n = 0;
  for (const auto& m : masks) {
    for (Index i = 0; i < m.size(); ++i) n += m[i] != 0.0f;
  }
  return n;
}

Index keep_count(double sparsity, Index n) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw std::invalid_argument("sparsity " + std::to_string(sparsity) + " outside [0, 1)");
  }
  return static_cast<Index>(std::floor((1.0 - sparsity) * static_cast<double>(n) + 1e-7));
}

Shape unit_shape(const ModelState& model, const std::string& weight, Granularity g) {
  const auto& w = model.param(weight);
  if (g == Granularity::element) return w.shape();
  return {w.shape()[0]};
}

namespace {

std::string bias_of(const std::string& weight) {
  const std::string suffix = ".weight";
  if (weight.size() < suffix.size() || weight.compare(weight.size() - suffix.size(), suffix.size(), suffix)) {
    throw std::invalid_argument("'" + weight + "' is not a weight name");
  }
  return weight.substr(0, weight.size() - suffix.size()) + ".bias";
}

// Magnitude per unit: |w| for elements, L2 norm of the output channel.
Tensorf unit_magnitudes(const Tensorf& w, Granularity g) {
  if (g == Granularity::element) {
    Tensorf out = w;
    out.values() = out.values().cwiseAbs();
    return out;
  }
  const Index units = w.dim(0);
  const Index span = w.size() / units;
  Tensorf out({units});
  for (Index u = 0; u < units; ++u) out[u] = w.values().segment(u * span, span).norm();
  return out;
}

struct Candidate {
  float key;
  std::size_t layer;
  Index index;
};

void keep_top(std::vector<Candidate>& pool, Index k, std::vector<Tensorf>& masks) {
  auto better = [](const Candidate& a, const Candidate& b) {
    if (a.key != b.key) return a.key > b.key;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.index < b.index;
  };
  k = std::min<Index>(k, static_cast<Index>(pool.size()));
  std::partial_sort(pool.begin(), pool.begin() + k, pool.end(), better);
  for (Index i = 0; i < k; ++i) masks[pool[static_cast<std::size_t>(i)].layer][pool[static_cast<std::size_t>(i)].index] = 1.0f;
}

float finite_key(float v) {
  return std::isnan(v) ? -std::numeric_limits<float>::infinity() : v;
}

}  // namespace

ScoreSet scaled_init(const ModelState& theta_pre, Granularity granularity) {
  if (theta_pre.prunable.empty()) throw std::invalid_argument("scaled_init: model has no prunable weights");
  ScoreSet set;
  set.granularity = granularity;
  float global_max = 0.0f;
  std::vector<Tensorf> raw;
  for (const auto& name : theta_pre.prunable) {
    const auto& w = theta_pre.param(name).value();
    Tensorf s = granularity == Granularity::element ? w : unit_magnitudes(w, granularity);
    if (s.size() > 0) global_max = std::max(global_max, s.values().cwiseAbs().maxCoeff());
    raw.push_back(std::move(s));
  }
  const float scale = global_max > 0.0f ? 1.0f / global_max : 1.0f;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i].values() *= scale;
    set.names.push_back(theta_pre.prunable[i]);
    set.scores.push_back(DiffTensor<float>::parameter(std::move(raw[i])));
  }
  return set;
}

MaskState threshold_keys(const std::vector<std::string>& names, const std::vector<Tensorf>& keys,
                         Granularity granularity, double sparsity, ThresholdScope scope) {
  if (names.size() != keys.size()) throw std::invalid_argument("threshold: names/keys length mismatch");
  MaskState mask;
  mask.granularity = granularity;
  mask.scope = scope;
  mask.sparsity = sparsity;
  mask.names = names;
  Index total = 0;
  for (const auto& k : keys) {
    mask.masks.push_back(Tensorf::zeros(k.shape()));
    total += k.size();
  }
  const Index global_keep = keep_count(sparsity, total);
  if (scope == ThresholdScope::global) {
    std::vector<Candidate> pool;
    pool.reserve(static_cast<std::size_t>(total));
    for (std::size_t l = 0; l < keys.size(); ++l) {
      for (Index i = 0; i < keys[l].size(); ++i) pool.push_back({finite_key(keys[l][i]), l, i});
    }
    keep_top(pool, global_keep, mask.masks);
  } else {
    for (std::size_t l = 0; l < keys.size(); ++l) {
      std::vector<Candidate> pool;
      for (Index i = 0; i < keys[l].size(); ++i) pool.push_back({finite_key(keys[l][i]), l, i});
      keep_top(pool, keep_count(sparsity, keys[l].size()), mask.masks);
    }
  }
  return mask;
}

MaskState threshold(const ScoreSet& scores, double sparsity, ThresholdScope scope) {
  std::vector<Tensorf> keys;
  for (const auto& s : scores.scores) {
    Tensorf k = s.value();
    k.values() = k.values().cwiseAbs();
    keys.push_back(std::move(k));
  }
  return threshold_keys(scores.names, keys, scores.granularity, sparsity, scope);
}

MaskState identity_mask(const ModelState& model, Granularity granularity) {
  MaskState mask;
  mask.granularity = granularity;
  mask.names = model.prunable;
  for (const auto& name : model.prunable) mask.masks.push_back(Tensorf::full(unit_shape(model, name, granularity), 1.0f));
  return mask;
}

void check_mask(const ModelState& model, const MaskState& mask) {
  if (mask.names != model.prunable || mask.masks.size() != mask.names.size()) {
    throw std::invalid_argument("mask layout does not match the model's prunable set");
  }
  for (std::size_t i = 0; i < mask.names.size(); ++i) {
    const Shape expected = unit_shape(model, mask.names[i], mask.granularity);
    if (mask.masks[i].shape() != expected) {
      throw std::invalid_argument("mask for '" + mask.names[i] + "' has shape " +
                                  to_string(mask.masks[i].shape()) + ", expected " + to_string(expected));
    }
  }
}

template <typename Scalar>
WeightMap<Scalar> masked_weights(Tape<Scalar>& tape, const ModelSpec& spec, const WeightMap<Scalar>& weights,
                                 std::span<const std::string> names, std::span<const Tensor<Scalar>> masks,
                                 Granularity granularity, std::span<const DiffTensor<Scalar>> scores) {
  (void)spec;
  if (names.size() != masks.size() || (!scores.empty() && scores.size() != names.size())) {
    throw std::invalid_argument("masked_weights: names, masks and scores disagree in length");
  }
  WeightMap<Scalar> out = weights;
  const DiffTensor<Scalar> none;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& score = scores.empty() ? none : scores[i];
    auto it = out.find(names[i]);
    if (it == out.end()) throw std::out_of_range("masked_weights: no weight '" + names[i] + "'");
    it->second = ops::mask_weight(tape, it->second, masks[i], score);
    if (granularity == Granularity::channel) {
      auto bt = out.find(bias_of(names[i]));
      if (bt != out.end()) bt->second = ops::mask_weight(tape, bt->second, masks[i], score);
    }
  }
  return out;
}

template WeightMap<float> masked_weights(Tape<float>&, const ModelSpec&, const WeightMap<float>&,
                                         std::span<const std::string>, std::span<const Tensor<float>>,
                                         Granularity, std::span<const DiffTensor<float>>);
template WeightMap<double> masked_weights(Tape<double>&, const ModelSpec&, const WeightMap<double>&,
                                          std::span<const std::string>, std::span<const Tensor<double>>,
                                          Granularity, std::span<const DiffTensor<double>>);

DiffTensor<float> masked_forward(Tape<float>& tape, const ModelState& model, const MaskState& mask,
                                 const ScoreSet* scores, const DiffTensor<float>& batch) {
  check_mask(model, mask);
  if (scores && (scores->names != mask.names || scores->granularity != mask.granularity)) {
    throw std::invalid_argument("masked_forward: scores do not match the mask layout");
  }
  const auto base = model.weights<float>();
  const std::span<const DiffTensor<float>> score_span =
      scores ? std::span<const DiffTensor<float>>(scores->scores) : std::span<const DiffTensor<float>>();
  auto effective = masked_weights<float>(tape, model.spec, base, mask.names, mask.masks, mask.granularity, score_span);
  return forward(tape, model.spec, effective, batch);
}

std::vector<Tensorf> expand_to_elements(const ModelState& model, const MaskState& mask) {
  check_mask(model, mask);
  std::vector<Tensorf> out;
  for (std::size_t i = 0; i < mask.names.size(); ++i) {
    const auto& w = model.param(mask.names[i]).value();
    if (mask.granularity == Granularity::element) {
      out.push_back(mask.masks[i]);
      continue;
    }
    Tensorf e(w.shape());
    const Index units = w.dim(0);
    const Index span = w.size() / units;
    for (Index u = 0; u < units; ++u) e.values().segment(u * span, span).setConstant(mask.masks[i][u]);
    out.push_back(std::move(e));
  }
  return out;
}

double sparsity_of(const MaskState& mask) {
  const Index total = mask.total();
  if (total == 0) return 0.0;
  return 1.0 - static_cast<double>(mask.kept()) / static_cast<double>(total);
}

namespace {

// Alive output units per layer (index into spec.layers); -1 for layers without
// weights. Layers absent from the mask keep all outputs.
std::vector<Index> alive_outputs(const ModelState& model, const MaskState* mask,
                                 const std::vector<LayerGeometry>& geometry) {
  std::vector<Index> alive(model.spec.layers.size(), -1);
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const auto& l = model.spec.layers[i];
    if (l.kind != LayerKind::conv && l.kind != LayerKind::linear) continue;
    alive[i] = geometry[i].out[0];
    if (mask) {
      const auto name = weight_name(l);
      for (std::size_t k = 0; k < mask->names.size(); ++k) {
        if (mask->names[k] != name) continue;
        const auto& m = mask->masks[k];
        alive[i] = static_cast<Index>((m.values().array() != 0.0f).count());
      }
    }
  }
  return alive;
}

struct LayerCost {
  Index alive_weights;
  Index alive_bias;
  std::int64_t macs;
};

std::vector<LayerCost> structured_costs(const ModelState& model, const MaskState* mask) {
  if (mask) {
    check_mask(model, *mask);
    if (mask->granularity != Granularity::channel) {
      throw std::invalid_argument("structured accounting requires a channel-granular mask");
    }
  }
  const auto geometry = trace_geometry(model.spec);
  const auto alive = alive_outputs(model, mask, geometry);
  std::vector<LayerCost> costs;
  Index live_channels = model.spec.in_channels;  // alive channels of the current activation
  Index spatial = model.spec.canvas * model.spec.canvas;
  bool flat = false;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const auto& l = model.spec.layers[i];
    const auto& g = geometry[i];
    if (l.kind == LayerKind::conv) {
      const Index out_sp = g.out[1] * g.out[2];
      const Index w_alive = alive[i] * live_channels * l.kernel * l.kernel;
      costs.push_back({w_alive, alive[i], static_cast<std::int64_t>(w_alive) * out_sp});
      live_channels = alive[i];
      spatial = out_sp;
    } else if (l.kind == LayerKind::linear) {
      const Index in_alive = flat ? live_channels : live_channels * spatial;
      const Index w_alive = alive[i] * in_alive;
      costs.push_back({w_alive, alive[i], static_cast<std::int64_t>(w_alive)});
      live_channels = alive[i];
      flat = true;
    } else {
      spatial = g.out[1] * g.out[2];
    }
  }
  return costs;
}

}  // namespace

std::int64_t flops_count(const ModelState& model, const MaskState* channel_mask) {
  std::int64_t macs = 0;
  for (const auto& c : structured_costs(model, channel_mask)) macs += c.macs;
  return 2 * macs;
}

double speedup_ratio(const ModelState& model, const MaskState& channel_mask) {
  const auto sub = flops_count(model, &channel_mask);
  if (sub == 0) throw std::domain_error("speedup_ratio: subnetwork has zero FLOPs");
  return static_cast<double>(flops_count(model, nullptr)) / static_cast<double>(sub);
}

Index pruned_param_count(const MaskState& mask, const ModelState& model) {
  check_mask(model, mask);
  if (mask.granularity == Granularity::element) return mask.total() - mask.kept();
  Index alive = 0;
  for (const auto& c : structured_costs(model, &mask)) alive += c.alive_weights + c.alive_bias;
  return param_count(model, false) - alive;
}

double memory_reduction(const MaskState& mask, const ModelState& model) {
  const Index total = param_count(model, false);
  if (total == 0) return 0.0;
  return static_cast<double>(pruned_param_count(mask, model)) / static_cast<double>(total);
}

std::string mask_digest(const MaskState& mask) {
  std::vector<std::uint8_t> bytes;
  auto put = [&](const std::string& s) { bytes.insert(bytes.end(), s.begin(), s.end()); bytes.push_back(0); };
  put(std::string(to_string(mask.granularity)));
  for (std::size_t i = 0; i < mask.names.size(); ++i) {
    put(mask.names[i]);
    put(to_string(mask.masks[i].shape()));
    for (Index k = 0; k < mask.masks[i].size(); ++k) bytes.push_back(mask.masks[i][k] != 0.0f);
  }
  return to_hex(sha256(bytes));
}

}  // namespace cosparse
