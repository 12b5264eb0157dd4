#pragma once

// Brute-force structured accounting: walks every multiply-accumulate and
// every parameter element of a channel-masked model one at a time.

#include "cosparse/masking.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace cosparse::testing {

struct Enumeration {
  std::int64_t flops = 0;  // 2 * live MACs
  Index pruned_params = 0;
  Index total_params = 0;
};

inline Enumeration enumerate_channel_costs(const ModelState& model, const MaskState* mask) {
  const auto geometry = trace_geometry(model.spec);
  Enumeration e;
  // live[c]: channel (or feature) c of the current activation is alive.
  std::vector<bool> live(static_cast<std::size_t>(model.spec.in_channels), true);
  Index h = model.spec.canvas, w = model.spec.canvas;
  bool spatial = true;
  for (std::size_t li = 0; li < model.spec.layers.size(); ++li) {
    const auto& l = model.spec.layers[li];
    if (l.kind == LayerKind::maxpool || l.kind == LayerKind::avgpool) {
      h = geometry[li].out[1];
      w = geometry[li].out[2];
      continue;
    }
    const auto wname = weight_name(l);
    const Tensorf* m = nullptr;
    if (mask) {
      for (std::size_t k = 0; k < mask->names.size(); ++k) {
        if (mask->names[k] == wname) m = &mask->masks[k];
      }
    }
    auto out_alive = [&](Index o) { return m == nullptr || (*m)[o] != 0.0f; };
    const auto& weight = model.param(wname).value();
    const Index outs = weight.dim(0);
    if (l.kind == LayerKind::conv) {
      const Index oh = geometry[li].out[1], ow = geometry[li].out[2];
      const Index ins = weight.dim(1), k = l.kernel;
      for (Index o = 0; o < outs; ++o) {
        for (Index i = 0; i < ins; ++i) {
          for (Index t = 0; t < k * k; ++t) {
            const bool alive = out_alive(o) && live[static_cast<std::size_t>(i)];
            ++e.total_params;
            if (!alive) {
              ++e.pruned_params;
              continue;
            }
            for (Index y = 0; y < oh; ++y) {
              for (Index x = 0; x < ow; ++x) e.flops += 2;
            }
          }
        }
      }
      h = oh;
      w = ow;
    } else {
      const Index ins = weight.dim(1);
      for (Index o = 0; o < outs; ++o) {
        for (Index f = 0; f < ins; ++f) {
          // A flattened feature belongs to channel f / (h * w).
          const Index src = spatial ? f / (h * w) : f;
          const bool alive = out_alive(o) && live[static_cast<std::size_t>(src)];
          ++e.total_params;
          if (alive) {
            e.flops += 2;
          } else {
            ++e.pruned_params;
          }
        }
      }
      spatial = false;
    }
    if (model.has_param(bias_name(l))) {
      for (Index o = 0; o < outs; ++o) {
        ++e.total_params;
        if (!out_alive(o)) ++e.pruned_params;
      }
    }
    live.assign(static_cast<std::size_t>(outs), true);
    for (Index o = 0; o < outs; ++o) live[static_cast<std::size_t>(o)] = out_alive(o);
  }
  return e;
}

/// Random channel mask with at least one live channel per layer.
inline MaskState random_channel_mask(const ModelState& model, double keep, std::mt19937_64& rng) {
  MaskState mask = identity_mask(model, Granularity::channel);
  std::bernoulli_distribution coin(keep);
  for (auto& m : mask.masks) {
    Index live = 0;
    for (Index i = 0; i < m.size(); ++i) live += (m[i] = coin(rng) ? 1.0f : 0.0f) != 0.0f;
    if (live == 0) m[std::uniform_int_distribution<Index>(0, m.size() - 1)(rng)] = 1.0f;
  }
  return mask;
}

}  // namespace cosparse::testing
