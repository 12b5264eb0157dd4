#include "cosparse/models.hpp"

#include "cosparse/digest.hpp"
#include "cosparse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace cosparse {
namespace {

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

LayerKind parse_kind(const std::string& s) {
  if (s == "conv") return LayerKind::conv;
  if (s == "maxpool") return LayerKind::maxpool;
  if (s == "avgpool") return LayerKind::avgpool;
  if (s == "linear") return LayerKind::linear;
  throw std::invalid_argument("unknown layer kind '" + s + "'");
}

bool has_weights(const LayerSpec& l) { return l.kind == LayerKind::conv || l.kind == LayerKind::linear; }

LayerSpec conv(std::string name, Index out) {
  return {LayerKind::conv, std::move(name), out, 3, 2, 1, false};
}

LayerSpec dense(std::string name, Index out, bool head = false) {
  return {LayerKind::linear, std::move(name), out, 0, 1, 0, head};
}

}  // namespace

Index ModelSpec::num_classes() const { return head().out; }

const LayerSpec& ModelSpec::head() const {
  for (const auto& l : layers) {
    if (l.head) return l;
  }
  throw ShapeError("model '" + name + "' has no head layer");
}

std::vector<LayerGeometry> trace_geometry(const ModelSpec& spec) {
  auto fail = [&](const LayerSpec& l, const std::string& why) -> void {
    throw ShapeError("model '" + spec.name + "' layer '" + l.name + "': " + why);
  };
  if (spec.in_channels < 1 || spec.canvas < 1) {
    throw ShapeError("model '" + spec.name + "': channels and canvas must be positive");
  }
  if (spec.layers.empty()) throw ShapeError("model '" + spec.name + "' has no layers");
  const auto heads = std::count_if(spec.layers.begin(), spec.layers.end(),
                                   [](const LayerSpec& l) { return l.head; });
  if (heads != 1) throw ShapeError("model '" + spec.name + "' must have exactly one head");
  const auto& last = spec.layers.back();
  if (!last.head || last.kind != LayerKind::linear) {
    throw ShapeError("model '" + spec.name + "': the final layer must be the linear head");
  }

  std::vector<LayerGeometry> out;
  Shape cur{spec.in_channels, spec.canvas, spec.canvas};
  for (const auto& l : spec.layers) {
    LayerGeometry g{cur, {}};
    switch (l.kind) {
      case LayerKind::conv: {
        if (cur.size() != 3) fail(l, "convolution after a linear layer");
        if (l.out < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0) fail(l, "invalid conv attributes");
        const Index span_h = cur[1] + 2 * l.pad - l.kernel;
        const Index span_w = cur[2] + 2 * l.pad - l.kernel;
        if (span_h < 0 || span_w < 0) fail(l, "kernel larger than padded input " + to_string(cur));
        cur = {l.out, span_h / l.stride + 1, span_w / l.stride + 1};
        break;
      }
      case LayerKind::maxpool:
      case LayerKind::avgpool: {
        if (cur.size() != 3) fail(l, "pooling after a linear layer");
        if (l.kernel < 1 || l.stride < 1 || l.kernel > cur[1] || l.kernel > cur[2]) {
          fail(l, "pool window does not fit " + to_string(cur));
        }
        cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::linear: {
        if (l.out < 1) fail(l, "linear layer needs out >= 1");
        cur = {l.out};
        break;
      }
    }
    if (cur.size() == 3 && (cur[1] < 1 || cur[2] < 1)) fail(l, "activation collapsed to zero size");
    if (g.in.size() == 3 && l.kind == LayerKind::linear) g.in = {numel(g.in)};
    g.out = cur;
    out.push_back(std::move(g));
  }
  return out;
}

ModelSpec reference_spec(const std::string& name, Index in_channels, Index canvas, Index classes) {
  ModelSpec s;
  s.name = name;
  s.in_channels = in_channels;
  s.canvas = canvas;
  if (name == "mlp-s") {
    s.layers = {dense("fc1", 64), dense("fc2", 32), dense("head", classes, true)};
  } else if (name == "cnn-s") {
    s.layers = {conv("conv1", 8), conv("conv2", 16), conv("conv3", 32), dense("head", classes, true)};
  } else if (name == "cnn-m") {
    s.layers = {conv("conv1", 16), conv("conv2", 32), conv("conv3", 64), dense("head", classes, true)};
  } else {
    throw std::invalid_argument("unknown reference model '" + name + "'");
  }
  trace_geometry(s);
  return s;
}

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"kind", kind_name(l.kind)},
                      {"name", l.name},
                      {"out", l.out},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"pad", l.pad},
                      {"head", l.head}});
  }
  return {{"name", spec.name},
          {"in_channels", spec.in_channels},
          {"canvas", spec.canvas},
          {"layers", layers}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.name = j.at("name").get<std::string>();
  s.in_channels = j.at("in_channels").get<Index>();
  s.canvas = j.at("canvas").get<Index>();
  for (const auto& lj : j.at("layers")) {
    LayerSpec l;
    l.kind = parse_kind(lj.at("kind").get<std::string>());
    l.name = lj.at("name").get<std::string>();
    l.out = lj.at("out").get<Index>();
    l.kernel = lj.at("kernel").get<Index>();
    l.stride = lj.at("stride").get<Index>();
    l.pad = lj.at("pad").get<Index>();
    l.head = lj.at("head").get<bool>();
    s.layers.push_back(std::move(l));
  }
  trace_geometry(s);
  return s;
}

std::array<std::uint8_t, 32> spec_digest(const ModelSpec& spec) {
  return sha256(spec_to_json(spec).dump());
}

std::string weight_name(const LayerSpec& layer) { return layer.name + ".weight"; }
std::string bias_name(const LayerSpec& layer) { return layer.name + ".bias"; }

DiffTensor<float>& ModelState::param(const std::string& name) {
  for (auto& p : params) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("model has no parameter '" + name + "'");
}

const DiffTensor<float>& ModelState::param(const std::string& name) const {
  return const_cast<ModelState*>(this)->param(name);
}

bool ModelState::has_param(const std::string& name) const {
  return std::any_of(params.begin(), params.end(), [&](const NamedParam& p) { return p.name == name; });
}

bool ModelState::is_head_param(const std::string& name) const {
  const auto& h = spec.head();
  return name == weight_name(h) || name == bias_name(h);
}

ModelState ModelState::clone() const {
  ModelState out;
  out.spec = spec;
  out.prunable = prunable;
  for (const auto& p : params) out.params.push_back({p.name, p.tensor.detached_copy()});
  return out;
}

template <typename Scalar>
WeightMap<Scalar> ModelState::weights() const {
  WeightMap<Scalar> map;
  for (const auto& p : params) {
    if constexpr (std::is_same_v<Scalar, float>) {
      map.emplace(p.name, p.tensor);
    } else {
      map.emplace(p.name, DiffTensor<Scalar>::constant(p.tensor.value().template cast<Scalar>()));
    }
  }
  return map;
}

template WeightMap<float> ModelState::weights<float>() const;
template WeightMap<double> ModelState::weights<double>() const;

std::vector<DiffTensor<float>> ModelState::head_params() const {
  const auto& h = spec.head();
  return {param(weight_name(h)), param(bias_name(h))};
}

std::vector<DiffTensor<float>> ModelState::all_params() const {
  std::vector<DiffTensor<float>> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void ModelState::zero_grad() {
  for (auto& p : params) p.tensor.zero_grad();
}

namespace {

void init_layer(ModelState& state, const LayerSpec& l, const LayerGeometry& g, std::mt19937_64& rng) {
  Shape wshape;
  Index fan_in = 0;
  if (l.kind == LayerKind::conv) {
    wshape = {l.out, g.in[0], l.kernel, l.kernel};
    fan_in = g.in[0] * l.kernel * l.kernel;
  } else {
    wshape = {l.out, g.in[0]};
    fan_in = g.in[0];
  }
  const double bound = l.head ? 1.0 / std::sqrt(double(fan_in)) : std::sqrt(6.0 / double(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensorf w(wshape);
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<float>(dist(rng));
  state.params.push_back({weight_name(l), DiffTensor<float>::parameter(std::move(w))});
  state.params.push_back({bias_name(l), DiffTensor<float>::parameter(Tensorf::zeros({l.out}))});
  if (!l.head) state.prunable.push_back(weight_name(l));
}

}  // namespace

ModelState build_model(const ModelSpec& spec, std::uint64_t seed) {
  const auto geometry = trace_geometry(spec);
  ModelState state;
  state.spec = spec;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (has_weights(spec.layers[i])) init_layer(state, spec.layers[i], geometry[i], rng);
  }
  return state;
}

ModelState replace_head(const ModelState& state, Index classes, std::uint64_t seed) {
  ModelSpec spec = state.spec;
  auto& head = spec.layers.back();
  head.out = classes;
  const auto geometry = trace_geometry(spec);
  ModelState out;
  out.spec = spec;
  out.prunable = state.prunable;
  for (const auto& p : state.params) {
    if (!state.is_head_param(p.name)) out.params.push_back({p.name, p.tensor.detached_copy()});
  }
  std::mt19937_64 rng(seed);
  init_layer(out, head, geometry.back(), rng);
  return out;
}

Index param_count(const ModelState& state, bool prunable_only) {
  Index n = 0;
  if (prunable_only) {
    for (const auto& name : state.prunable) n += state.param(name).size();
  } else {
    for (const auto& p : state.params) n += p.tensor.size();
  }
  return n;
}

template <typename Scalar>
DiffTensor<Scalar> forward(Tape<Scalar>& tape, const ModelSpec& spec, const WeightMap<Scalar>& weights,
                           const DiffTensor<Scalar>& input) {
  auto lookup = [&](const std::string& name) -> const DiffTensor<Scalar>& {
    auto it = weights.find(name);
    if (it == weights.end()) throw std::out_of_range("forward: missing weight '" + name + "'");
    return it->second;
  };
  if (input.value().rank() != 4 || input.shape()[1] != spec.in_channels ||
      input.shape()[2] != spec.canvas || input.shape()[3] != spec.canvas) {
    throw ShapeError("forward: model '" + spec.name + "' expects N x " +
                     std::to_string(spec.in_channels) + " x " + std::to_string(spec.canvas) + " x " +
                     std::to_string(spec.canvas) + " input, got " + to_string(input.shape()));
  }
  DiffTensor<Scalar> x = input;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::conv:
        x = ops::conv2d(tape, x, lookup(weight_name(l)), lookup(bias_name(l)), {l.stride, l.pad});
        x = ops::relu(tape, x);
        break;
      case LayerKind::maxpool:
        x = ops::maxpool2d(tape, x, {l.kernel, l.stride});
        break;
      case LayerKind::avgpool:
        x = ops::avgpool2d(tape, x, {l.kernel, l.stride});
        break;
      case LayerKind::linear:
        if (x.value().rank() != 2) x = ops::flatten(tape, x);
        x = ops::linear(tape, x, lookup(weight_name(l)), lookup(bias_name(l)));
        if (!l.head) x = ops::relu(tape, x);
        break;
    }
  }
  return x;
}

template DiffTensor<float> forward(Tape<float>&, const ModelSpec&, const WeightMap<float>&,
                                   const DiffTensor<float>&);
template DiffTensor<double> forward(Tape<double>&, const ModelSpec&, const WeightMap<double>&,
                                    const DiffTensor<double>&);

std::int64_t dense_flops(const ModelSpec& spec) {
  const auto geometry = trace_geometry(spec);
  std::int64_t macs = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto& g = geometry[i];
    if (l.kind == LayerKind::conv) {
      macs += g.in[0] * l.kernel * l.kernel * g.out[0] * g.out[1] * g.out[2];
    } else if (l.kind == LayerKind::linear) {
      macs += g.in[0] * g.out[0];
    }
  }
  return 2 * macs;
}

}  // namespace cosparse
