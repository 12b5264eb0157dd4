#include "cosparse/pruners.hpp"

#include "cosparse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cosparse {

std::string_view to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::random: return "random";
    case MethodKind::omp: return "omp";
    case MethodKind::imp: return "imp";
    case MethodKind::snip: return "snip";
    case MethodKind::grasp: return "grasp";
    case MethodKind::synflow: return "synflow";
    case MethodKind::hydra: return "hydra";
    case MethodKind::vpns: return "vpns";
  }
  return "?";
}

MethodKind parse_method(std::string_view name) {
  for (auto k : {MethodKind::random, MethodKind::omp, MethodKind::imp, MethodKind::snip, MethodKind::grasp,
                 MethodKind::synflow, MethodKind::hydra, MethodKind::vpns}) {
    if (to_string(k) == name) return k;
  }
  if (name == "lth") return MethodKind::imp;
  throw std::invalid_argument("unknown pruning method '" + std::string(name) + "'");
}

bool has_finding_phase(MethodKind kind) { return kind == MethodKind::hydra || kind == MethodKind::vpns; }

std::string_view to_string(PilotMode mode) { return mode == PilotMode::zero_shot ? "zero_shot" : "after_finetune"; }

PilotMode parse_pilot_mode(std::string_view name) {
  if (name == "zero_shot") return PilotMode::zero_shot;
  if (name == "after_finetune") return PilotMode::after_finetune;
  throw std::invalid_argument("unknown pilot mode '" + std::string(name) + "'");
}

nlohmann::json LogRow::to_json() const {
  return {{"epoch", epoch}, {"phase", phase}, {"loss", loss}, {"train_acc", train_acc}, {"lr", lr}, {"steps", steps}};
}

LogRow LogRow::from_json(const nlohmann::json& j) {
  LogRow r;
  r.epoch = j.at("epoch").get<int>();
  r.phase = j.at("phase").get<std::string>();
  r.loss = j.at("loss").get<double>();
  r.train_acc = j.at("train_acc").get<double>();
  r.lr = j.at("lr").get<double>();
  r.steps = j.at("steps").get<long>();
  return r;
}

PruneMethod PruneMethod::defaults(MethodKind kind, double sparsity) {
  PruneMethod m;
  m.kind = kind;
  m.sparsity = sparsity;
  switch (kind) {
    case MethodKind::vpns:
      m.find_epochs = 10;
      m.tune_epochs = 10;
      m.prompt = PromptSpec{PromptKind::pad, 32, 32, 2, 1};
      break;
    case MethodKind::hydra:
      m.find_epochs = 20;
      m.tune_epochs = 20;
      break;
    default:
      m.find_epochs = 0;
      m.tune_epochs = 40;
      break;
  }
  return m;
}

void PruneMethod::validate() const {
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument(std::string(to_string(kind)) + ": " + why);
  };
  if (!(sparsity >= 0.0 && sparsity < 1.0)) fail("sparsity must lie in [0, 1)");
  if (find_epochs < 0 || tune_epochs < 0 || imp_round_epochs < 0) fail("epoch budgets must be >= 0");
  if (batch_size < 1) fail("batch size must be >= 1");
  if (synflow_iterations < 1) fail("synflow needs at least one iteration");
  const bool saliency = kind == MethodKind::snip || kind == MethodKind::grasp || kind == MethodKind::synflow;
  if (saliency && granularity != Granularity::element) fail("saliency scores are element-granular only");
  if (kind == MethodKind::vpns && prompt.kind == PromptKind::none) fail("needs a prompt; use hydra for none");
  if (prompt.kind != PromptKind::none) prompt.validate();
}

namespace {

std::uint64_t phase_seed(std::uint64_t seed, std::string_view phase) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : phase) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return seed * 0x9E3779B97F4A7C15ULL ^ h;
}

using LogitsFn = std::function<DiffTensor<float>(Tape<float>&, const DiffTensor<float>&)>;

struct Loop {
  std::string phase;
  int epochs = 0;
  Index batch_size = 64;
  std::uint64_t seed = 0;
  std::vector<Optimizer*> optimizers;  // the first one is logged
  LogitsFn logits;
  std::function<void(int)> after_epoch;
  std::vector<double>* step_losses = nullptr;
};

struct LoopStats {
  int epochs = 0;
  long steps = 0;
};

Index count_correct(const Tensorf& logits, std::span<const int> labels) {
  const Index n = logits.dim(0), k = logits.dim(1);
  Index correct = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    logits.matrix(n, k).row(i).maxCoeff(&best);
    correct += best == labels[static_cast<std::size_t>(i)];
  }
  return correct;
}

LoopStats run_loop(const Dataset& ds, const Loop& loop, TrainLog* log) {
  if (loop.optimizers.empty()) throw std::logic_error(loop.phase + ": no optimizer");
  const Index per_epoch = batch_count(ds.size(), loop.batch_size);
  const long total = static_cast<long>(loop.epochs) * per_epoch;
  long step = 0;
  for (int epoch = 0; epoch < loop.epochs; ++epoch) {
    const double lr_start = cosine_lr(step, total, loop.optimizers.front()->config().lr);
    double loss_sum = 0.0;
    Index correct = 0;
    long epoch_steps = 0;
    for (auto& b : batches(ds, loop.batch_size, loop.seed, static_cast<std::uint64_t>(epoch))) {
      for (auto* opt : loop.optimizers) {
        opt->set_lr(cosine_lr(step, total, opt->config().lr));
        opt->zero_grad();
      }
      Tape<float> tape;
      const auto x = DiffTensor<float>::constant(std::move(b.images));
      const auto logits = loop.logits(tape, x);
      const auto loss = ops::softmax_cross_entropy(tape, logits, b.labels);
      backward(tape, loss);
      for (auto* opt : loop.optimizers) opt->step();
      ++step;
      ++epoch_steps;
      const double l = loss.value()[0];
      if (loop.step_losses) loop.step_losses->push_back(l);
      loss_sum += l * static_cast<double>(b.labels.size());
      correct += count_correct(logits.value(), b.labels);
    }
    if (log) {
      const double n = static_cast<double>(std::max<Index>(ds.size(), 1));
      log->push_back({epoch, loop.phase, loss_sum / n, 100.0 * static_cast<double>(correct) / n, lr_start, epoch_steps});
    }
    if (loop.after_epoch) loop.after_epoch(epoch);
  }
  return {loop.epochs, step};
}

void check_canvas(const ModelState& model, const Dataset& ds) {
  if (ds.images.rank() != 4 || ds.channels() != model.spec.in_channels || ds.height() != model.spec.canvas ||
      ds.width() != model.spec.canvas) {
    throw ShapeError("dataset '" + ds.name + "' has shape " + to_string(ds.images.shape()) + ", model expects N x " +
                     std::to_string(model.spec.in_channels) + " x " + std::to_string(model.spec.canvas) + " x " +
                     std::to_string(model.spec.canvas) + " canvases");
  }
}

// Body weights as constant copies, head aliased so it stays trainable.
WeightMap<float> frozen_body(const ModelState& work, bool head_trainable) {
  WeightMap<float> map;
  for (const auto& p : work.params) {
    if (head_trainable && work.is_head_param(p.name)) {
      map.emplace(p.name, p.tensor);
    } else {
      map.emplace(p.name, DiffTensor<float>::constant(p.tensor.value()));
    }
  }
  return map;
}

PromptState fresh_copy(const PromptState& prompt) {
  PromptState out = prompt;
  out.delta = prompt.delta.detached_copy();
  return out;
}

// |w| per element, or the L2 norm of each output channel.
Tensorf unit_magnitude(const Tensorf& w, Granularity g) {
  if (g == Granularity::element) {
    Tensorf out = w;
    out.values() = out.values().cwiseAbs();
    return out;
  }
  const Index units = w.dim(0), span = w.size() / units;
  Tensorf out({units});
  for (Index u = 0; u < units; ++u) out[u] = w.values().segment(u * span, span).norm();
  return out;
}

// Zeroes theta wherever the mask is off, including channel biases.
void apply_mask_in_place(ModelState& model, const MaskState& mask) {
  const auto expanded = expand_to_elements(model, mask);
  for (std::size_t i = 0; i < mask.names.size(); ++i) {
    auto& w = model.param(mask.names[i]).mutable_value();
    w.values().array() *= expanded[i].values().array();
    if (mask.granularity == Granularity::channel) {
      const std::string bias = mask.names[i].substr(0, mask.names[i].size() - 7) + ".bias";
      if (model.has_param(bias)) {
        model.param(bias).mutable_value().values().array() *= mask.masks[i].values().array();
      }
    }
  }
}

std::vector<Tensorf> magnitudes(const ModelState& model, Granularity g) {
  std::vector<Tensorf> keys;
  for (const auto& name : model.prunable) keys.push_back(unit_magnitude(model.param(name).value(), g));
  return keys;
}

}  // namespace

double evaluate(const ModelState& model, const MaskState* mask, const PromptState* prompt, const Dataset& ds,
                Index batch_size) {
  check_canvas(model, ds);
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  if (mask) check_mask(model, *mask);
  const auto weights = model.weights<float>();
  const Index plane = ds.images.size() / ds.size();
  Index correct = 0;
  for (Index start = 0; start < ds.size(); start += batch_size) {
    const Index n = std::min(batch_size, ds.size() - start);
    Shape shape = ds.images.shape();
    shape[0] = n;
    auto tape = Tape<float>::inference();
    DiffTensor<float> x =
        DiffTensor<float>::constant(Tensorf(shape, ds.images.values().segment(start * plane, n * plane)));
    if (prompt && prompt->spec.kind != PromptKind::none) {
      x = ops::add(tape, x, DiffTensor<float>::constant(prompt->canvas_delta()));
    }
    DiffTensor<float> logits;
    if (mask) {
      const auto eff = masked_weights<float>(tape, model.spec, weights, mask->names, mask->masks, mask->granularity);
      logits = forward(tape, model.spec, eff, x);
    } else {
      logits = forward(tape, model.spec, weights, x);
    }
    correct += count_correct(logits.value(), std::span<const int>(ds.labels).subspan(static_cast<std::size_t>(start),
                                                                                     static_cast<std::size_t>(n)));
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

ModelState train_dense(const ModelState& init, const Dataset& train, int epochs, const OptimizerConfig& opt,
                       Index batch_size, std::uint64_t seed, TrainLog* log, const std::string& phase) {
  check_canvas(init, train);
  ModelState work = init.clone();
  Optimizer optimizer(opt);
  optimizer.add_params(work.all_params());
  const auto weights = work.weights<float>();
  Loop loop;
  loop.phase = phase;
  loop.epochs = epochs;
  loop.batch_size = batch_size;
  loop.seed = phase_seed(seed, phase);
  loop.optimizers = {&optimizer};
  loop.logits = [&](Tape<float>& tape, const DiffTensor<float>& x) { return forward(tape, work.spec, weights, x); };
  run_loop(train, loop, log);
  work.zero_grad();
  return work;
}

ModelState adapt_head(const ModelState& upstream, const Dataset& train, int epochs, const OptimizerConfig& opt,
                      Index batch_size, std::uint64_t seed, TrainLog* log) {
  ModelState work = replace_head(upstream, train.num_classes, phase_seed(seed, "head"));
  check_canvas(work, train);
  if (epochs == 0) return work;
  Optimizer optimizer(opt);
  optimizer.add_params(work.head_params());
  const auto weights = frozen_body(work, true);
  Loop loop;
  loop.phase = "head";
  loop.epochs = epochs;
  loop.batch_size = batch_size;
  loop.seed = phase_seed(seed, "head");
  loop.optimizers = {&optimizer};
  loop.logits = [&](Tape<float>& tape, const DiffTensor<float>& x) { return forward(tape, work.spec, weights, x); };
  run_loop(train, loop, log);
  work.zero_grad();
  return work;
}

MaskState prune_random(const ModelState& model, double sparsity, std::uint64_t seed, Granularity granularity) {
  MaskState mask = identity_mask(model, granularity);
  mask.sparsity = sparsity;
  const Index total = mask.total();
  const Index keep = keep_count(sparsity, total);
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(phase_seed(seed, "random"));
  std::shuffle(order.begin(), order.end(), rng);
  for (auto& m : mask.masks) m.set_zero();
  std::vector<Index> offsets;
  Index acc = 0;
  for (const auto& m : mask.masks) {
    offsets.push_back(acc);
    acc += m.size();
  }
  for (Index k = 0; k < keep; ++k) {
    const Index flat = order[static_cast<std::size_t>(k)];
    const auto layer = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
    mask.masks[layer][flat - offsets[layer]] = 1.0f;
  }
  return mask;
}

MaskState prune_omp(const ModelState& model, double sparsity, Granularity granularity, ThresholdScope scope) {
  return threshold_keys(model.prunable, magnitudes(model, granularity), granularity, sparsity, scope);
}

std::vector<Tensorf> snip_scores(const ModelState& model, const Batch& batch) {
  if (batch.labels.empty()) throw std::invalid_argument("snip: empty batch");
  ModelState work = model.clone();
  const auto weights = work.weights<float>();
  Tape<float> tape;
  const auto logits = forward(tape, work.spec, weights, DiffTensor<float>::constant(batch.images));
  backward(tape, ops::softmax_cross_entropy(tape, logits, batch.labels));
  std::vector<Tensorf> scores;
  for (const auto& name : work.prunable) {
    const auto& p = work.param(name);
    Tensorf s = p.grad();
    s.values() = (s.values().array() * p.value().values().array()).abs().matrix();
    scores.push_back(std::move(s));
  }
  return scores;
}

MaskState prune_snip(const ModelState& model, const Batch& batch, double sparsity) {
  return threshold_keys(model.prunable, snip_scores(model, batch), Granularity::element, sparsity,
                        ThresholdScope::global);
}

Eigen::VectorXd fd_hvp(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& v, double eps) {
  if (x.size() != v.size()) throw std::invalid_argument("fd_hvp: point and direction differ in length");
  if (!(eps > 0.0)) throw std::invalid_argument("fd_hvp: eps must be positive");
  const Eigen::VectorXd plus = grad(x + eps * v);
  const Eigen::VectorXd minus = grad(x - eps * v);
  return (plus - minus) / (2.0 * eps);
}

namespace {

// Loss gradient over every parameter of `model` at the flat point `x`, in double.
Eigen::VectorXd flat_loss_grad(const ModelState& model, const Batch& batch, const Eigen::VectorXd& x) {
  WeightMap<double> weights;
  Index offset = 0;
  std::vector<DiffTensor<double>> order;
  for (const auto& p : model.params) {
    const Index n = p.tensor.size();
    auto t = DiffTensor<double>::parameter(Tensord(p.tensor.shape(), x.segment(offset, n)));
    weights.emplace(p.name, t);
    order.push_back(t);
    offset += n;
  }
  Tape<double> tape;
  const Tensord images = batch.images.cast<double>();
  const auto logits = forward(tape, model.spec, weights, DiffTensor<double>::constant(images));
  backward(tape, ops::softmax_cross_entropy(tape, logits, batch.labels));
  Eigen::VectorXd g(x.size());
  offset = 0;
  for (const auto& t : order) {
    g.segment(offset, t.size()) = t.has_grad() ? t.grad().values() : Eigen::VectorXd::Zero(t.size());
    offset += t.size();
  }
  return g;
}

}  // namespace

std::vector<Tensorf> grasp_scores(const ModelState& model, const Batch& batch) {
  if (batch.labels.empty()) throw std::invalid_argument("grasp: empty batch");
  Index total = 0;
  for (const auto& p : model.params) total += p.tensor.size();
  Eigen::VectorXd theta(total);
  Index offset = 0;
  for (const auto& p : model.params) {
    theta.segment(offset, p.tensor.size()) = p.tensor.value().values().cast<double>();
    offset += p.tensor.size();
  }
  auto grad = [&](const Eigen::VectorXd& x) { return flat_loss_grad(model, batch, x); };
  const Eigen::VectorXd g = grad(theta);
  const double norm = g.norm();
  if (!(norm > 0.0)) throw std::domain_error("grasp: loss gradient is zero on this batch");
  const Eigen::VectorXd hg = fd_hvp(grad, theta, g, 1e-2 / norm);

  std::vector<Tensorf> scores;
  for (const auto& name : model.prunable) {
    offset = 0;
    for (const auto& p : model.params) {
      if (p.name == name) break;
      offset += p.tensor.size();
    }
    const auto& w = model.param(name).value();
    Tensorf s(w.shape());
    for (Index i = 0; i < w.size(); ++i) s[i] = static_cast<float>(-theta[offset + i] * hg[offset + i]);
    scores.push_back(std::move(s));
  }
  return scores;
}

MaskState prune_grasp(const ModelState& model, const Batch& batch, double sparsity) {
  auto keys = grasp_scores(model, batch);
  for (auto& k : keys) k.values() = -k.values();
  return threshold_keys(model.prunable, keys, Granularity::element, sparsity, ThresholdScope::global);
}

std::vector<Tensorf> synflow_scores(const ModelState& model, const MaskState& mask) {
  check_mask(model, mask);
  const auto expanded = expand_to_elements(model, mask);
  WeightMap<double> weights;
  std::vector<DiffTensor<double>> prunable;
  for (const auto& p : model.params) {
    Tensord v = p.tensor.value().cast<double>();
    v.values() = v.values().cwiseAbs();
    const auto it = std::find(mask.names.begin(), mask.names.end(), p.name);
    if (it != mask.names.end()) {
      const auto& m = expanded[static_cast<std::size_t>(it - mask.names.begin())];
      v.values().array() *= m.values().cast<double>().array();
      auto t = DiffTensor<double>::parameter(std::move(v));
      weights.emplace(p.name, t);
      prunable.push_back(t);
    } else {
      weights.emplace(p.name, DiffTensor<double>::constant(std::move(v)));
    }
  }
  const auto& spec = model.spec;
  Tape<double> tape;
  const auto ones = DiffTensor<double>::constant(Tensord::full({1, spec.in_channels, spec.canvas, spec.canvas}, 1.0));
  const auto r = ops::sum(tape, forward(tape, spec, weights, ones));
  backward(tape, r);
  std::vector<Tensorf> scores;
  for (const auto& t : prunable) {
    Tensord s = t.grad();
    s.values() = (s.values().array() * t.value().values().array()).abs().matrix();
    scores.push_back(s.cast<float>());
  }
  return scores;
}

MaskState prune_synflow(const ModelState& model, double sparsity, int iterations) {
  if (iterations < 1) throw std::invalid_argument("synflow: iterations must be >= 1");
  MaskState mask = identity_mask(model, Granularity::element);
  if (sparsity == 0.0) return mask;
  for (int k = 1; k <= iterations; ++k) {
    const double target =
        k == iterations ? sparsity : 1.0 - std::pow(1.0 - sparsity, static_cast<double>(k) / iterations);
    auto keys = synflow_scores(model, mask);
    for (std::size_t l = 0; l < keys.size(); ++l) {
      for (Index i = 0; i < keys[l].size(); ++i) {
        if (mask.masks[l][i] == 0.0f) keys[l][i] = -1.0f;
      }
    }
    mask = threshold_keys(model.prunable, keys, Granularity::element, target, ThresholdScope::global);
  }
  return mask;
}

int imp_rounds(double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw std::invalid_argument("imp: final sparsity must lie in [0, 1)");
  if (sparsity == 0.0) return 0;
  return static_cast<int>(std::ceil(std::log(1.0 - sparsity) / std::log(0.8) - 1e-9));
}

ImpResult prune_imp(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method) {
  const int rounds = imp_rounds(method.sparsity);
  ImpResult result;
  result.mask = identity_mask(theta_pre, method.granularity);
  result.mask.scope = method.scope;
  for (int r = 1; r <= rounds; ++r) {
    PruneMethod round = method;
    round.seed = phase_seed(method.seed, "imp" + std::to_string(r));
    auto tuned = tune_subnetwork(theta_pre, result.mask, train, std::nullopt, method.imp_round_epochs, round);
    for (auto& row : tuned.log) {
      row.phase = "imp_round_" + std::to_string(r);
      result.log.push_back(row);
    }
    result.epochs += tuned.epochs;
    result.steps += tuned.steps;
    auto keys = magnitudes(tuned.model, method.granularity);
    for (std::size_t l = 0; l < keys.size(); ++l) {
      for (Index i = 0; i < keys[l].size(); ++i) {
        if (result.mask.masks[l][i] == 0.0f) keys[l][i] = -1.0f;
      }
    }
    const double target = 1.0 - std::pow(0.8, r);
    result.mask = threshold_keys(theta_pre.prunable, keys, method.granularity, target, method.scope);
    result.rounds.push_back(result.mask);
  }
  return result;
}

namespace {

FindResult learn_scores(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method,
                        bool with_prompt) {
  if (method.find_epochs < 0) throw std::invalid_argument("mask finding epochs must be >= 0");
  check_canvas(theta_pre, train);
  FindResult result;
  ModelState work = theta_pre.clone();
  const auto weights = frozen_body(work, true);
  result.scores = scaled_init(theta_pre, method.granularity);
  result.mask = threshold(result.scores, method.sparsity, method.scope);
  result.mask_digests.push_back(mask_digest(result.mask));
  if (with_prompt) result.prompt = make_prompt(method.prompt, phase_seed(method.seed, "prompt"));

  Optimizer score_opt(method.score_opt);
  score_opt.add_params(result.scores.parameters());
  Optimizer head_opt(method.weight_opt);
  head_opt.add_params(work.head_params());
  std::optional<Optimizer> prompt_opt;
  Loop loop;
  loop.phase = "find";
  loop.epochs = method.find_epochs;
  loop.batch_size = method.batch_size;
  loop.seed = phase_seed(method.seed, "find");
  loop.optimizers = {&score_opt, &head_opt};
  if (result.prompt) {
    prompt_opt.emplace(method.prompt_opt);
    prompt_opt->add_param(result.prompt->delta);
    loop.optimizers.push_back(&*prompt_opt);
  }
  loop.step_losses = &result.step_losses;
  loop.logits = [&](Tape<float>& tape, const DiffTensor<float>& x) {
    const auto input = result.prompt ? apply_prompt(tape, x, *result.prompt, true) : x;
    const auto eff = masked_weights<float>(tape, work.spec, weights, result.mask.names, result.mask.masks,
                                           result.mask.granularity, result.scores.scores);
    return forward(tape, work.spec, eff, input);
  };
  loop.after_epoch = [&](int) {
    result.mask = threshold(result.scores, method.sparsity, method.scope);
    result.mask_digests.push_back(mask_digest(result.mask));
  };
  const auto stats = run_loop(train, loop, &result.log);
  result.epochs = stats.epochs;
  result.steps = stats.steps;
  for (auto& s : result.scores.scores) s.zero_grad();
  return result;
}

}  // namespace

FindResult prune_hydra(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method) {
  return learn_scores(theta_pre, train, method, false);
}

FindResult prune_vpns(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method) {
  if (method.prompt.kind == PromptKind::none) {
    throw std::invalid_argument("vpns: prompt kind none has nothing to learn; use hydra");
  }
  method.prompt.validate();
  return learn_scores(theta_pre, train, method, method.prompt_in_finding);
}

TuneResult tune_subnetwork(const ModelState& theta_pre, const MaskState& mask, const Dataset& train,
                           std::optional<PromptState> prompt, int epochs, const PruneMethod& method) {
  check_mask(theta_pre, mask);
  check_canvas(theta_pre, train);
  if (epochs < 0) throw std::invalid_argument("tune: epochs must be >= 0");
  TuneResult result;
  result.model = theta_pre.clone();
  apply_mask_in_place(result.model, mask);
  if (prompt) {
    if (prompt->spec.canvas != theta_pre.spec.canvas || prompt->spec.channels != theta_pre.spec.in_channels) {
      throw std::invalid_argument("tune: prompt canvas does not match the model input");
    }
    result.prompt = fresh_copy(*prompt);
  }
  if (epochs == 0) return result;

  Optimizer weight_opt(method.weight_opt);
  weight_opt.add_params(result.model.all_params());
  std::optional<Optimizer> prompt_opt;
  Loop loop;
  loop.phase = "tune";
  loop.epochs = epochs;
  loop.batch_size = method.batch_size;
  loop.seed = phase_seed(method.seed, "tune");
  loop.optimizers = {&weight_opt};
  if (result.prompt && result.prompt->spec.kind != PromptKind::none) {
    prompt_opt.emplace(method.prompt_opt);
    prompt_opt->add_param(result.prompt->delta);
    loop.optimizers.push_back(&*prompt_opt);
  }
  const auto weights = result.model.weights<float>();
  loop.logits = [&](Tape<float>& tape, const DiffTensor<float>& x) {
    const auto input = result.prompt ? apply_prompt(tape, x, *result.prompt, true) : x;
    const auto eff = masked_weights<float>(tape, result.model.spec, weights, mask.names, mask.masks, mask.granularity);
    return forward(tape, result.model.spec, eff, input);
  };
  const auto stats = run_loop(train, loop, &result.log);
  result.epochs = stats.epochs;
  result.steps = stats.steps;
  result.model.zero_grad();
  if (result.prompt) result.prompt->delta.zero_grad();
  return result;
}

PilotResult post_pruning_prompt(const ModelState& theta_pre, const MaskState& mask, const Dataset& train,
                                const Dataset& test, const PromptSpec& prompt, PilotMode mode, int prompt_epochs,
                                const PruneMethod& method) {
  if (prompt_epochs < 0) throw std::invalid_argument("pilot: prompt epochs must be >= 0");
  check_mask(theta_pre, mask);
  PilotResult result;
  ModelState base = theta_pre.clone();
  apply_mask_in_place(base, mask);
  if (mode == PilotMode::after_finetune) {
    auto tuned = tune_subnetwork(theta_pre, mask, train, std::nullopt, method.tune_epochs, method);
    base = std::move(tuned.model);
    result.log = std::move(tuned.log);
    result.epochs += tuned.epochs;
    result.steps += tuned.steps;
  }
  result.acc_without = evaluate(base, &mask, nullptr, test);
  result.prompt = make_prompt(prompt, phase_seed(method.seed, "pilot_prompt"));
  if (prompt_epochs > 0 && prompt.kind != PromptKind::none) {
    const auto weights = frozen_body(base, false);
    Optimizer prompt_opt(method.prompt_opt);
    prompt_opt.add_param(result.prompt.delta);
    Loop loop;
    loop.phase = "prompt";
    loop.epochs = prompt_epochs;
    loop.batch_size = method.batch_size;
    loop.seed = phase_seed(method.seed, "prompt");
    loop.optimizers = {&prompt_opt};
    loop.logits = [&](Tape<float>& tape, const DiffTensor<float>& x) {
      const auto input = apply_prompt(tape, x, result.prompt, true);
      const auto eff = masked_weights<float>(tape, base.spec, weights, mask.names, mask.masks, mask.granularity);
      return forward(tape, base.spec, eff, input);
    };
    const auto stats = run_loop(train, loop, &result.log);
    result.epochs += stats.epochs;
    result.steps += stats.steps;
    result.prompt.delta.zero_grad();
  }
  result.acc_with = evaluate(base, &mask, &result.prompt, test);
  return result;
}

Batch saliency_batch(const Dataset& train, const PruneMethod& method) {
  if (train.size() == 0) throw std::invalid_argument("saliency batch: empty dataset");
  const auto order = epoch_order(train.size(), phase_seed(method.seed, "saliency"), 0);
  std::vector<Index> idx(order.begin(), order.begin() + std::min(method.batch_size, train.size()));
  Dataset part = train.subset(idx);
  return {std::move(part.images), std::move(part.labels), std::move(idx)};
}

PruneResult find_mask(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method) {
  method.validate();
  PruneResult result;
  result.method = method.kind;
  switch (method.kind) {
    case MethodKind::random:
      result.mask = prune_random(theta_pre, method.sparsity, method.seed, method.granularity);
      break;
    case MethodKind::omp:
      result.mask = prune_omp(theta_pre, method.sparsity, method.granularity, method.scope);
      break;
    case MethodKind::snip:
      result.mask = prune_snip(theta_pre, saliency_batch(train, method), method.sparsity);
      break;
    case MethodKind::grasp:
      result.mask = prune_grasp(theta_pre, saliency_batch(train, method), method.sparsity);
      break;
    case MethodKind::synflow:
      result.mask = prune_synflow(theta_pre, method.sparsity, method.synflow_iterations);
      break;
    case MethodKind::imp: {
      auto imp = prune_imp(theta_pre, train, method);
      result.mask = std::move(imp.mask);
      result.imp_rounds = std::move(imp.rounds);
      result.log = std::move(imp.log);
      result.find_epochs = imp.epochs;
      result.find_steps = imp.steps;
      break;
    }
    case MethodKind::hydra:
    case MethodKind::vpns: {
      auto found = method.kind == MethodKind::hydra ? prune_hydra(theta_pre, train, method)
                                                    : prune_vpns(theta_pre, train, method);
      result.mask = std::move(found.mask);
      result.scores = std::move(found.scores);
      result.find_prompt = std::move(found.prompt);
      result.log = std::move(found.log);
      result.find_epochs = found.epochs;
      result.find_steps = found.steps;
      break;
    }
  }
  result.achieved_sparsity = sparsity_of(result.mask);
  return result;
}

PruneResult run_method(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method) {
  PruneResult result = find_mask(theta_pre, train, method);
  std::optional<PromptState> prompt;
  if (method.tunes_with_prompt()) {
    prompt = result.find_prompt ? fresh_copy(*result.find_prompt)
                                : make_prompt(method.prompt, phase_seed(method.seed, "prompt"));
  }
  auto tuned = tune_subnetwork(theta_pre, result.mask, train, std::move(prompt), method.tune_epochs, method);
  result.tuned = std::move(tuned.model);
  result.prompt = std::move(tuned.prompt);
  result.log.insert(result.log.end(), tuned.log.begin(), tuned.log.end());
  result.tune_epochs = tuned.epochs;
  result.tune_steps = tuned.steps;
  return result;
}

}  // namespace cosparse
