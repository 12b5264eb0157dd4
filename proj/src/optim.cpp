#include "cosparse/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cosparse {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

OptimizerConfig OptimizerConfig::sgd(double lr, double momentum, double weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::sgd;
  c.lr = lr;
  c.momentum = momentum;
  c.weight_decay = weight_decay;
  return c;
}

OptimizerConfig OptimizerConfig::adam(double lr, double weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::adam;
  c.lr = lr;
  c.weight_decay = weight_decay;
  return c;
}

void Optimizer::add_param(DiffTensor<float> param) {
  if (!param || !param.requires_grad()) {
    throw std::invalid_argument("optimizer: only differentiable tensors can be registered");
  }
  for (const auto& p : params_) {
    if (p.same_node(param)) throw std::invalid_argument("optimizer: parameter registered twice");
  }
  first_.push_back(Tensorf::zeros(param.shape()));
  second_.push_back(config_.kind == OptimizerKind::adam ? Tensorf::zeros(param.shape()) : Tensorf());
  params_.push_back(std::move(param));
}

void Optimizer::add_params(const std::vector<DiffTensor<float>>& params) {
  for (const auto& p : params) add_param(p);
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Optimizer::step() {
  for (const auto& p : params_) {
    if (!p.has_grad()) throw std::logic_error("optimizer step: registered parameter has no gradient");
  }
  ++steps_;
  const float lr = static_cast<float>(lr_);
  const float wd = static_cast<float>(config_.weight_decay);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i].mutable_value().values();
    Eigen::VectorXf g = params_[i].grad().values();
    if (wd != 0.0f) g += wd * w;
    if (config_.kind == OptimizerKind::sgd) {
      if (config_.momentum != 0.0) {
        auto& buf = first_[i].values();
        buf = static_cast<float>(config_.momentum) * buf + g;
        w -= lr * buf;
      } else {
        w -= lr * g;
      }
    } else {
      auto& m = first_[i].values();
      auto& v = second_[i].values();
      const float b1 = static_cast<float>(config_.beta1);
      const float b2 = static_cast<float>(config_.beta2);
      m = b1 * m + (1.0f - b1) * g;
      v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
      const auto t = static_cast<double>(steps_);
      const float c1 = static_cast<float>(1.0 - std::pow(config_.beta1, t));
      const float c2 = static_cast<float>(1.0 - std::pow(config_.beta2, t));
      const float eps = static_cast<float>(config_.eps);
      w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
  }
}

double cosine_lr(long step, long total_steps, double lr0) {
  if (total_steps < 1 || step < 0 || step > total_steps) {
    throw std::out_of_range("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
  }
  if (step == total_steps) return 0.0;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(phase));
}

}  // namespace cosparse
