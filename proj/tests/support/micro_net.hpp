#pragma once

// Random micro-networks and per-op finite-difference checks shared by the
// unit tests and the acceptance runner.

#include "gradcheck.hpp"

#include "cosparse/masking.hpp"
#include "cosparse/models.hpp"
#include "cosparse/ops.hpp"
#include "cosparse/prompting.hpp"

#include <map>
#include <random>

namespace cosparse::testing {

inline Tensord random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensord t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

// sum(out * R) for a fixed random R, so every output entry matters.
class ProjectedLoss {
 public:
  explicit ProjectedLoss(std::uint64_t seed) : rng_(seed) {}

  DiffTensor<double> operator()(Tape<double>& tape, const DiffTensor<double>& out) {
    if (!weights_ || weights_.shape() != out.shape()) {
      weights_ = DiffTensor<double>::constant(random_tensor(out.shape(), rng_));
    }
    return ops::sum(tape, ops::mul(tape, out, weights_));
  }

 private:
  std::mt19937_64 rng_;
  DiffTensor<double> weights_;
};

using OpBuilder = std::function<DiffTensor<double>(Tape<double>&, const std::vector<DiffTensor<double>>&)>;

/// Checks d(sum(op(inputs) * R))/d(input) for every input flagged in `differentiable`.
inline std::vector<CheckResult> check_op(const std::string& name, std::vector<Tensord> inputs,
                                         const std::vector<bool>& differentiable, const OpBuilder& op,
                                         std::uint64_t seed) {
  ProjectedLoss project(seed);
  auto run = [&](bool grads, std::vector<Tensord>* out_grads) {
    Tape<double> tape;
    std::vector<DiffTensor<double>> handles;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      handles.push_back(differentiable[i] ? DiffTensor<double>::parameter(inputs[i])
                                          : DiffTensor<double>::constant(inputs[i]));
    }
    auto loss = project(tape, op(tape, handles));
    Evaluation e{loss.value()[0], tape.nonsmooth_digest()};
    if (grads) {
      backward(tape, loss);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        out_grads->push_back(differentiable[i] && handles[i].has_grad() ? handles[i].grad()
                                                                        : Tensord::zeros(inputs[i].shape()));
      }
    }
    return e;
  };
  std::vector<Tensord> grads;
  const auto base = run(true, &grads);
  std::vector<CheckResult> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiable[i]) continue;
    out.push_back(fd_check(name + "/in" + std::to_string(i), inputs[i], grads[i], [&] { return run(false, nullptr); },
                           base.branches));
  }
  return out;
}

/// One randomized instance of every differentiable op.
inline std::vector<CheckResult> op_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  std::vector<CheckResult> all;
  auto add = [&](std::vector<CheckResult> r) { all.insert(all.end(), r.begin(), r.end()); };
  const Index n = pick(1, 3), c = pick(1, 3), h = pick(4, 7), w = pick(4, 7), o = pick(1, 4);
  const Index k = pick(1, 3), stride = pick(1, 2), pad = pick(0, 1);

  add(check_op("conv2d", {random_tensor({n, c, h, w}, rng), random_tensor({o, c, k, k}, rng), random_tensor({o}, rng)},
               {true, true, true},
               [&](Tape<double>& t, const auto& in) { return ops::conv2d(t, in[0], in[1], in[2], {stride, pad}); },
               seed + 1));
  add(check_op("conv2d_nobias", {random_tensor({n, c, h, w}, rng), random_tensor({o, c, k, k}, rng)}, {true, true},
               [&](Tape<double>& t, const auto& in) {
                 return ops::conv2d(t, in[0], in[1], DiffTensor<double>(), {stride, pad});
               },
               seed + 2));
  const Index f = pick(2, 6);
  add(check_op("linear", {random_tensor({n, f}, rng), random_tensor({o, f}, rng), random_tensor({o}, rng)},
               {true, true, true}, [](Tape<double>& t, const auto& in) { return ops::linear(t, in[0], in[1], in[2]); },
               seed + 3));
  add(check_op("relu", {random_tensor({n, c, h, w}, rng)}, {true},
               [](Tape<double>& t, const auto& in) { return ops::relu(t, in[0]); }, seed + 4));
  add(check_op("maxpool2d", {random_tensor({n, c, h, w}, rng)}, {true},
               [](Tape<double>& t, const auto& in) { return ops::maxpool2d(t, in[0], {2, 2}); }, seed + 5));
  add(check_op("avgpool2d", {random_tensor({n, c, h, w}, rng)}, {true},
               [](Tape<double>& t, const auto& in) { return ops::avgpool2d(t, in[0], {2, 1}); }, seed + 6));
  add(check_op("add", {random_tensor({n, c, h, w}, rng), random_tensor({n, c, h, w}, rng)}, {true, true},
               [](Tape<double>& t, const auto& in) { return ops::add(t, in[0], in[1]); }, seed + 7));
  add(check_op("add_broadcast", {random_tensor({n, c, h, w}, rng), random_tensor({c, h, w}, rng)}, {true, true},
               [](Tape<double>& t, const auto& in) { return ops::add(t, in[0], in[1]); }, seed + 8));
  add(check_op("mul_broadcast", {random_tensor({n, f}, rng), random_tensor({f}, rng)}, {true, true},
               [](Tape<double>& t, const auto& in) { return ops::mul(t, in[0], in[1]); }, seed + 9));
  add(check_op("flatten", {random_tensor({n, c, h, w}, rng)}, {true},
               [](Tape<double>& t, const auto& in) { return ops::flatten(t, in[0]); }, seed + 10));
  add(check_op("sum", {random_tensor({n, f}, rng)}, {true},
               [](Tape<double>& t, const auto& in) { return ops::sum(t, in[0]); }, seed + 11));
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& l : labels) l = static_cast<int>(pick(0, f - 1));
  add(check_op("softmax_cross_entropy", {random_tensor({n, f}, rng, 2.0)}, {true},
               [&](Tape<double>& t, const auto& in) { return ops::softmax_cross_entropy(t, in[0], labels); },
               seed + 12));
  const Index ph = pick(1, h), pw = pick(1, w);
  const Index top = pick(0, h - ph), left = pick(0, w - pw);
  add(check_op("embed", {random_tensor({c, ph, pw}, rng)}, {true},
               [&](Tape<double>& t, const auto& in) { return ops::embed(t, in[0], h, w, top, left); }, seed + 13));
  Tensord region({c, h, w});
  for (Index i = 0; i < region.size(); ++i) region[i] = pick(0, 1);
  add(check_op("masked_perturbation", {random_tensor({n, c, h, w}, rng), random_tensor({c, h, w}, rng)}, {true, true},
               [&](Tape<double>& t, const auto& in) { return add_masked_perturbation(t, in[0], in[1], region); },
               seed + 14));

  // mask_weight: theta and the straight-through score gradient. The score
  // gradient is checked against d/dm of the loss with m relaxed to a real.
  for (bool channel : {false, true}) {
    Tensord theta = random_tensor({o, c, k, k}, rng);
    Tensord m(channel ? Shape{o} : theta.shape());
    for (Index i = 0; i < m.size(); ++i) m[i] = pick(0, 3) > 0 ? 1.0 : 0.0;
    const std::string tag = channel ? "mask_weight_channel" : "mask_weight";
    add(check_op(tag + "/theta", {theta}, {true},
                 [&](Tape<double>& t, const auto& in) {
                   return ops::mask_weight(t, in[0], m, DiffTensor<double>());
                 },
                 seed + 15));
    // d/dscore via the surrogate, compared with d/dm numerically.
    ProjectedLoss project(seed + 16);
    auto run = [&](Tensord* score_grad) {
      Tape<double> tape;
      auto th = DiffTensor<double>::constant(theta);
      auto sc = DiffTensor<double>::parameter(random_tensor(m.shape(), rng));
      auto loss = project(tape, ops::mask_weight(tape, th, m, sc));
      if (score_grad) {
        backward(tape, loss);
        *score_grad = sc.grad();
      }
      return Evaluation{loss.value()[0], tape.nonsmooth_digest()};
    };
    Tensord score_grad;
    const auto base = run(&score_grad);
    all.push_back(fd_check(tag + "/score", m, score_grad, [&] { return run(nullptr); }, base.branches));
  }
  return all;
}

// A random conv/pool/linear stack with a prompt, masks and scores: the full
// prompted-masked forward path in double precision.
struct MicroNet {
  ModelSpec spec;
  std::vector<std::string> prunable;
  std::map<std::string, Tensord> params;
  Granularity granularity = Granularity::element;
  std::vector<Tensord> masks;
  std::vector<Tensord> scores;
  PromptSpec prompt;
  Tensord delta;
  Tensord region;  // pad/fix tunable map
  Index top = 0, left = 0;
  Tensord images;
  std::vector<int> labels;

  struct Grads {
    std::map<std::string, Tensord> params;
    std::vector<Tensord> scores;
    Tensord delta;
  };

  Evaluation run(Grads* grads = nullptr) const {
    Tape<double> tape;
    WeightMap<double> w;
    for (const auto& [name, value] : params) w.emplace(name, DiffTensor<double>::parameter(value));
    std::vector<DiffTensor<double>> sc;
    for (const auto& s : scores) sc.push_back(DiffTensor<double>::parameter(s));
    auto x = DiffTensor<double>::constant(images);
    auto d = DiffTensor<double>::parameter(delta);
    switch (prompt.kind) {
      case PromptKind::none: break;
      case PromptKind::pad:
      case PromptKind::fix: x = add_masked_perturbation(tape, x, d, region); break;
      case PromptKind::random:
        x = ops::add(tape, x, ops::embed(tape, d, prompt.canvas, prompt.canvas, top, left));
        break;
    }
    const auto mw = masked_weights<double>(tape, spec, w, prunable, masks, granularity, sc);
    auto loss = ops::softmax_cross_entropy(tape, forward(tape, spec, mw, x), labels);
    Evaluation e{loss.value()[0], tape.nonsmooth_digest()};
    if (grads) {
      backward(tape, loss);
      auto grad_of = [](const DiffTensor<double>& t) { return t.has_grad() ? t.grad() : Tensord::zeros(t.shape()); };
      for (const auto& [name, t] : w) grads->params.emplace(name, grad_of(t));
      for (const auto& s : sc) grads->scores.push_back(grad_of(s));
      grads->delta = grad_of(d);
    }
    return e;
  }

  /// theta, straight-through scores (against d/dm) and delta.
  std::vector<CheckResult> check() {
    Grads g;
    const auto base = run(&g);
    auto eval = [&] { return run(); };
    std::vector<CheckResult> out;
    for (auto& [name, value] : params) out.push_back(fd_check(name, value, g.params.at(name), eval, base.branches));
    for (std::size_t i = 0; i < masks.size(); ++i) {
      out.push_back(fd_check(prunable[i] + "/score", masks[i], g.scores[i], eval, base.branches));
    }
    if (prompt.kind != PromptKind::none) out.push_back(fd_check("delta", delta, g.delta, eval, base.branches));
    return out;
  }
};

inline MicroNet random_micro_net(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng); };
  MicroNet net;
  for (;;) {
    ModelSpec s;
    s.name = "micro";
    s.in_channels = pick(1, 2);
    s.canvas = pick(5, 8);
    const Index convs = pick(0, 2);
    for (Index i = 0; i < convs; ++i) {
      s.layers.push_back({LayerKind::conv, "conv" + std::to_string(i + 1), pick(2, 3), pick(1, 3), pick(1, 2),
                          pick(0, 1), false});
    }
    if (convs > 0 && pick(0, 1)) {
      s.layers.push_back({pick(0, 1) ? LayerKind::maxpool : LayerKind::avgpool, "pool", 0, 2, 2, 0, false});
    }
    if (pick(0, 1)) s.layers.push_back({LayerKind::linear, "fc", pick(3, 4), 0, 1, 0, false});
    s.layers.push_back({LayerKind::linear, "head", pick(2, 3), 0, 1, 0, true});
    try {
      trace_geometry(s);
    } catch (const ShapeError&) {
      continue;
    }
    net.spec = s;
    break;
  }
  const auto model = build_model(net.spec, seed);
  if (model.prunable.empty()) return random_micro_net(seed * 31 + 7);
  for (const auto& p : model.params) net.params.emplace(p.name, p.tensor.value().cast<double>());
  // Non-zero biases keep dead-channel rectifiers away from their kink.
  for (auto& [name, value] : net.params) {
    if (name.ends_with(".bias")) value = random_tensor(value.shape(), rng, 0.3);
  }
  net.prunable = model.prunable;
  net.granularity = pick(0, 1) ? Granularity::channel : Granularity::element;
  for (const auto& name : net.prunable) {
    Tensord m(unit_shape(model, name, net.granularity));
    for (Index i = 0; i < m.size(); ++i) m[i] = pick(0, 3) > 0 ? 1.0 : 0.0;
    net.masks.push_back(m);
    net.scores.push_back(random_tensor(m.shape(), rng));
  }

  const Index S = net.spec.canvas, C = net.spec.in_channels;
  const PromptKind kinds[] = {PromptKind::none, PromptKind::pad, PromptKind::fix, PromptKind::random};
  net.prompt.kind = kinds[pick(0, 3)];
  net.prompt.canvas = S;
  net.prompt.channels = C;
  net.prompt.input_size = pick(S - 2, S);
  net.prompt.size = net.prompt.kind == PromptKind::none ? 0
                    : net.prompt.kind == PromptKind::pad ? pick(1, (S - 1) / 2)
                                                         : pick(1, S - 1);
  if (net.prompt.kind != PromptKind::none) {
    auto state = make_prompt(net.prompt, seed);
    net.region = state.tunable_mask.cast<double>();
    net.top = state.top();
    net.left = state.left();
    net.delta = random_tensor(state.delta.shape(), rng, 0.2);
  } else {
    net.delta = Tensord::zeros({C, S, S});
  }

  const Index n = pick(2, 3);
  Tensorf raw(Shape{n, C, S - 1, S - 1});
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  for (Index i = 0; i < raw.size(); ++i) raw[i] = unit(rng);
  net.images = prepare_canvases(raw, net.prompt.input_size, S).cast<double>();
  const Index classes = net.spec.num_classes();
  for (Index i = 0; i < n; ++i) net.labels.push_back(static_cast<int>(pick(0, classes - 1)));
  return net;
}

}  // namespace cosparse::testing
