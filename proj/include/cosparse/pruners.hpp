#pragma once

#include "cosparse/data.hpp"
#include "cosparse/masking.hpp"
#include "cosparse/optim.hpp"
#include "cosparse/prompting.hpp"

#include <json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cosparse {

enum class MethodKind { random, omp, imp, snip, grasp, synflow, hydra, vpns };

std::string_view to_string(MethodKind kind);
MethodKind parse_method(std::string_view name);
/// hydra and vpns learn scores over a mask-finding phase.
bool has_finding_phase(MethodKind kind);

/// One per-epoch training record.
struct LogRow {
  int epoch = 0;
  std::string phase;
  double loss = 0.0;
  double train_acc = 0.0;  // percent
  double lr = 0.0;         // primary optimizer's lr at the start of the epoch
  long steps = 0;          // optimizer steps taken in this epoch

  nlohmann::json to_json() const;
  static LogRow from_json(const nlohmann::json& j);
};

using TrainLog = std::vector<LogRow>;

struct PruneMethod {
  MethodKind kind = MethodKind::omp;
  Granularity granularity = Granularity::element;
  ThresholdScope scope = ThresholdScope::global;
  double sparsity = 0.0;
  int find_epochs = 0;        // hydra / vpns mask finding
  int tune_epochs = 40;       // subnetwork tuning after the mask is fixed
  int imp_round_epochs = 40;  // tuning inside each IMP round
  int synflow_iterations = 100;
  PromptSpec prompt;          // vpns, or prompt-joint tuning for any method
  bool prompt_in_finding = true;
  bool prompt_in_tuning = true;
  Index batch_size = 32;
  OptimizerConfig score_opt = OptimizerConfig::adam(1e-4, 1e-4);
  OptimizerConfig prompt_opt = OptimizerConfig::adam(1e-2);
  OptimizerConfig weight_opt = OptimizerConfig::sgd(0.01, 0.9, 1e-4);
  std::uint64_t seed = 0;

  /// Epoch budgets: vpns 10+10, hydra 20+20, everything else 40 tuning
  /// epochs (and 40 per IMP round).
  static PruneMethod defaults(MethodKind kind, double sparsity);
  /// Throws std::invalid_argument on an unusable combination.
  void validate() const;
  bool tunes_with_prompt() const { return prompt.kind != PromptKind::none && prompt_in_tuning; }
  bool finds_with_prompt() const {
    return kind == MethodKind::vpns && prompt.kind != PromptKind::none && prompt_in_finding;
  }
};

/// Top-1 accuracy in percent of theta (*) mask on `ds`, with the prompt's
/// current placement when one is given.
double evaluate(const ModelState& model, const MaskState* mask, const PromptState* prompt, const Dataset& ds,
                Index batch_size = 256);

/// Ordinary dense training of every parameter.
ModelState train_dense(const ModelState& init, const Dataset& train, int epochs, const OptimizerConfig& opt,
                       Index batch_size, std::uint64_t seed, TrainLog* log = nullptr,
                       const std::string& phase = "pretrain");

/// Fresh head for `classes` outputs trained with the body frozen (linear
/// probe). The result is the theta_pre every downstream method starts from.
ModelState adapt_head(const ModelState& upstream, const Dataset& train, int epochs, const OptimizerConfig& opt,
                      Index batch_size, std::uint64_t seed, TrainLog* log = nullptr);

MaskState prune_random(const ModelState& model, double sparsity, std::uint64_t seed,
                       Granularity granularity = Granularity::element);

/// Largest |theta| (channel L2 norm under channel granularity).
MaskState prune_omp(const ModelState& model, double sparsity, Granularity granularity = Granularity::element,
                    ThresholdScope scope = ThresholdScope::global);

/// |dL/dtheta (*) theta| on one batch, per prunable weight.
std::vector<Tensorf> snip_scores(const ModelState& model, const Batch& batch);
MaskState prune_snip(const ModelState& model, const Batch& batch, double sparsity);

/// Central-difference Hessian-vector product [grad(x + eps v) - grad(x - eps v)] / (2 eps).
Eigen::VectorXd fd_hvp(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& v, double eps);

/// -theta (*) Hg with g the loss gradient over all parameters and
/// eps = 1e-2 / ||g||. Throws std::domain_error when g = 0.
std::vector<Tensorf> grasp_scores(const ModelState& model, const Batch& batch);
/// Removes the highest scores, i.e. keeps the smallest -theta (*) Hg.
MaskState prune_grasp(const ModelState& model, const Batch& batch, double sparsity);

/// |theta (*) dR/dtheta| with R = sum of logits for an all-ones input on the
/// absolute-valued network, under the current mask.
std::vector<Tensorf> synflow_scores(const ModelState& model, const MaskState& mask);
/// Iterative data-free pruning on the exponential schedule
/// 1 - (1 - s)^(k / iterations), k = 1..iterations.
MaskState prune_synflow(const ModelState& model, double sparsity, int iterations = 100);

struct ImpResult {
  MaskState mask;
  std::vector<MaskState> rounds;  // mask after each round
  TrainLog log;
  int epochs = 0;
  long steps = 0;
};

/// Number of 20% rounds needed to reach `sparsity`.
int imp_rounds(double sparsity);

/// Each round: tune from theta_pre under the current mask, drop 20% of the
/// remaining units with the smallest tuned magnitude, rewind to theta_pre.
ImpResult prune_imp(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method);

struct FindResult {
  MaskState mask;
  ScoreSet scores;
  std::optional<PromptState> prompt;
  TrainLog log;
  std::vector<std::string> mask_digests;  // after init, then after each epoch
  std::vector<double> step_losses;
  int epochs = 0;
  long steps = 0;
};

/// Score learning with theta frozen (no prompt).
FindResult prune_hydra(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method);
/// Joint prompt + score learning with theta frozen.
FindResult prune_vpns(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method);

struct TuneResult {
  ModelState model;  // pruned entries hold exact zeros
  std::optional<PromptState> prompt;
  TrainLog log;
  int epochs = 0;
  long steps = 0;
};

/// SGD over theta with the mask fixed (starting from theta_pre) and, when a
/// prompt is given, Adam over its delta jointly.
TuneResult tune_subnetwork(const ModelState& theta_pre, const MaskState& mask, const Dataset& train,
                           std::optional<PromptState> prompt, int epochs, const PruneMethod& method);

enum class PilotMode { zero_shot, after_finetune };

std::string_view to_string(PilotMode mode);
PilotMode parse_pilot_mode(std::string_view name);

struct PilotResult {
  PromptState prompt;
  double acc_without = 0.0;
  double acc_with = 0.0;
  TrainLog log;
  int epochs = 0;
  long steps = 0;
};

/// Trains only delta on top of a fixed subnetwork: theta_pre (*) m for
/// zero_shot, or the prompt-free tuned subnetwork for after_finetune.
/// `train`/`test` must already be canvases at prompt.canvas.
PilotResult post_pruning_prompt(const ModelState& theta_pre, const MaskState& mask, const Dataset& train,
                                const Dataset& test, const PromptSpec& prompt, PilotMode mode, int prompt_epochs,
                                const PruneMethod& method);

struct PruneResult {
  MethodKind method = MethodKind::omp;
  MaskState mask;
  std::optional<ScoreSet> scores;
  std::optional<PromptState> find_prompt;  // delta_s after mask finding
  std::optional<PromptState> prompt;       // delta after tuning, used at evaluation
  ModelState tuned;
  TrainLog log;
  std::vector<MaskState> imp_rounds;
  double achieved_sparsity = 0.0;
  int find_epochs = 0;
  int tune_epochs = 0;
  long find_steps = 0;
  long tune_steps = 0;
};

/// The one labelled batch the saliency methods score on.
Batch saliency_batch(const Dataset& train, const PruneMethod& method);

/// Mask by `method`, then tune_subnetwork (prompt-joint iff the method
/// carries a prompt). `train` must already hold canvases.
PruneResult run_method(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method);

/// Mask only (no tuning) for any method; IMP runs its rounds.
PruneResult find_mask(const ModelState& theta_pre, const Dataset& train, const PruneMethod& method);

}  // namespace cosparse
