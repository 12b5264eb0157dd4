#pragma once

#include "cosparse/autodiff.hpp"

#include <string_view>
#include <vector>

namespace cosparse {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  double momentum = 0.0;  // sgd only
  double beta1 = 0.9;     // adam only
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Added to the gradient as weight_decay * w at step time.
  double weight_decay = 0.0;

  static OptimizerConfig sgd(double lr, double momentum = 0.0, double weight_decay = 0.0);
  static OptimizerConfig adam(double lr, double weight_decay = 0.0);
};

/// First-order optimizer over a fixed set of registered parameters. Moment
/// buffers are created at registration and mirror each parameter's shape.
/// step() never touches gradients; callers zero them.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config), lr_(config.lr) {}

  void add_param(DiffTensor<float> param);
  void add_params(const std::vector<DiffTensor<float>>& params);

  void step();
  void zero_grad();

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long step_count() const { return steps_; }
  std::size_t num_params() const { return params_.size(); }
  const OptimizerConfig& config() const { return config_; }

  const Tensorf& first_moment(std::size_t i) const { return first_.at(i); }
  const Tensorf& second_moment(std::size_t i) const { return second_.at(i); }

 private:
  OptimizerConfig config_;
  double lr_;
  long steps_ = 0;
  std::vector<DiffTensor<float>> params_;
  std::vector<Tensorf> first_;   // momentum (sgd) or m (adam)
  std::vector<Tensorf> second_;  // v (adam)
};

/// lr0 * 0.5 * (1 + cos(pi * step / total_steps)); throws std::out_of_range
/// unless 0 <= step <= total_steps and total_steps >= 1.
double cosine_lr(long step, long total_steps, double lr0);

}  // namespace cosparse
