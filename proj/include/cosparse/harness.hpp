#pragma once

#include "cosparse/checkpoint.hpp"
#include "cosparse/pruners.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cosparse {

/// Invalid or unreadable experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataKind { synthetic, idx, csv };

/// Where a train/test pair comes from.
struct DataSource {
  DataKind kind = DataKind::synthetic;
  SyntheticSpec synth;
  std::filesystem::path train_images, train_labels, test_images, test_labels;  // idx
  std::filesystem::path train_csv, test_csv;                                   // csv

  DatasetPair load() const;
  std::string describe() const;
};

/// A method entry of the sweep; "+vp" entries tune their base mask jointly
/// with the configured prompt.
struct MethodEntry {
  MethodKind kind = MethodKind::omp;
  bool with_prompt = false;

  std::string name() const;
  static MethodEntry parse(std::string_view text);
  bool operator==(const MethodEntry&) const = default;
};

struct Budgets {
  int vpns_find = 10;
  int vpns_tune = 10;
  int hydra_find = 20;
  int hydra_tune = 20;
  int oneshot_tune = 40;
  int imp_round = 40;
};

struct PilotConfig {
  std::vector<MethodEntry> methods{{MethodKind::omp, false}, {MethodKind::random, false}};
  std::vector<double> sparsities{0.2, 0.59, 0.8926, 0.956};
  std::vector<PilotMode> modes{PilotMode::zero_shot, PilotMode::after_finetune};
  int prompt_epochs = 10;
};

struct AblationConfig {
  double sparsity = 0.9;
  std::vector<Index> input_sizes;  // empty: scaled from 128..224
  std::vector<Index> pad_sizes;    // empty: scaled from 16, 32, 64
  std::vector<PromptKind> kinds{PromptKind::pad, PromptKind::fix, PromptKind::random};
  bool matched = true;
  double match_tolerance = 0.10;  // relative tunable-count mismatch allowed
  std::vector<std::string> phases{"both", "finding", "tuning"};
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string model = "cnn-s";
  Index canvas = 32;
  Index channels = 1;
  DataSource upstream;
  DataSource downstream;
  std::optional<DataSource> target;  // transfer target; downstream when absent
  std::vector<MethodEntry> methods;
  std::vector<double> sparsities{0.2, 0.59, 0.8926, 0.956};
  Granularity granularity = Granularity::element;
  ThresholdScope scope = ThresholdScope::global;
  Budgets budgets;
  PruneMethod base;  // shared optimizer / batch / prompt settings
  int pretrain_epochs = 10;
  OptimizerConfig pretrain_opt = OptimizerConfig::sgd(0.05, 0.9, 1e-4);
  std::string pretrain_checkpoint;  // optional; "{seed}" is substituted
  int head_epochs = 5;
  OptimizerConfig head_opt = OptimizerConfig::sgd(0.01, 0.9, 1e-4);
  PilotConfig pilot;
  AblationConfig ablation;
  std::filesystem::path out_dir = "runs";
  int threads = 0;  // 0: hardware concurrency

  /// Throws ConfigError naming the offending key.
  void validate() const;
  /// Fully resolved per-cell method settings.
  PruneMethod method_for(const MethodEntry& entry, double sparsity, std::uint64_t seed) const;
  ModelSpec model_spec(Index classes) const;
  std::filesystem::path run_root() const { return out_dir / name; }
};

/// Reference desk-scale experiment: shapes-K4 upstream, textures-K4
/// downstream, "cnn-s", 3 seeds, all methods.
ExperimentConfig default_config();

/// INI-style text: "[section]" headers and "key = value" lines, '#' or ';'
/// comments. Unset keys keep default_config() values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Pad sizes 16/32/64 and input sizes 128..224 rescaled to the canvas.
std::vector<Index> default_pad_grid(Index canvas);
std::vector<Index> default_input_grid(Index canvas);

struct RunRow {
  std::string method;
  double sparsity = 0.0;  // requested target
  std::uint64_t seed = 0;
  bool transfer = false;
  std::string variant;
  double dense_acc = 0.0;
  double subnet_acc = 0.0;
  double acc_without_prompt = 0.0;
  double acc_with_prompt = 0.0;
  double achieved_sparsity = 0.0;
  double flops_speedup = 1.0;
  double memory_reduction = 0.0;
  Index prompt_param_count = 0;
  int find_epochs = 0;
  int tune_epochs = 0;
  int epochs_used = 0;
  long find_steps = 0;
  long tune_steps = 0;
  long steps_used = 0;
  std::string mask_digest;
  std::string run_dir;
  double wall_time = 0.0;
  std::string error;

  nlohmann::json to_json() const;
};

struct RunReport {
  std::vector<RunRow> rows;

  /// Order-stable: method, sparsity, seed, transfer, variant.
  void sort();
};

/// CSV column order of emit_report.
const std::vector<std::string>& report_columns();

RunReport run_experiment(const ExperimentConfig& cfg);
/// Masks (and delta_s) found on `source`, tuned on `target` with a fresh head.
RunReport run_transfer(const ExperimentConfig& cfg, const DataSource& source, const DataSource& target);
RunReport run_pilot(const ExperimentConfig& cfg);
RunReport run_ablation(const ExperimentConfig& cfg);
/// Mask finding only; subnet_acc is theta_pre (*) m without tuning.
RunReport run_prune(const ExperimentConfig& cfg);
/// Tunes a saved mask on the downstream task for each seed.
RunReport run_tune_mask(const ExperimentConfig& cfg, const std::filesystem::path& mask_file);

/// Upstream model for `seed`: loaded from cfg.pretrain_checkpoint when it
/// exists, otherwise trained and written to `<run_root>/pretrain_seed<k>.ckpt`.
ModelState pretrained_model(const ExperimentConfig& cfg, std::uint64_t seed);

enum class ReportFormat { csv, jsonl };

/// Throws std::invalid_argument (and writes nothing) for an empty report.
void emit_report(const RunReport& report, const std::filesystem::path& path, ReportFormat format);
RunReport read_report_csv(const std::filesystem::path& path);

struct CurvePoint {
  std::string method;
  std::string variant;
  bool transfer = false;
  double sparsity = 0.0;
  int n = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // sample standard deviation, 0 for n = 1
};

/// Seed aggregates of subnet_acc over rows without errors.
std::vector<CurvePoint> curves(const RunReport& report);
void emit_curves(const RunReport& report, const std::filesystem::path& path);

/// Writes all three report files for `kind` under the run root.
void write_reports(const ExperimentConfig& cfg, const std::string& kind, const RunReport& report);

/// Sweep parallelism: hardware threads, capped by cfg.threads and by the
/// COSPARSE_THREADS environment variable.
int sweep_threads(const ExperimentConfig& cfg);

// Run-directory artifacts.
void save_mask(const MaskState& mask, const ModelSpec& spec, const std::filesystem::path& path);
MaskState load_mask(const std::filesystem::path& path);
void save_scores(const ScoreSet& scores, const ModelSpec& spec, const std::filesystem::path& path);
void save_prompt(const PromptState& prompt, const std::filesystem::path& path);
PromptState load_prompt(const std::filesystem::path& path);
void write_log(const TrainLog& log, const std::filesystem::path& path);
TrainLog read_log(const std::filesystem::path& path);

}  // namespace cosparse
