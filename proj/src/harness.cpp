#include "cosparse/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

namespace cosparse {

int sweep_threads(const ExperimentConfig& cfg) {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (cfg.threads > 0) n = std::min(n, cfg.threads);
  if (const char* env = std::getenv("COSPARSE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

namespace {

namespace fs = std::filesystem;

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

std::string sparsity_tag(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", s);
  return buf;
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (c == '+' || c == '=' || c == '/' || c == ' ') c = '-';
  }
  return s;
}

fs::path cell_dir(const ExperimentConfig& cfg, const std::string& kind, const std::string& method, double s,
                  std::uint64_t seed, const std::string& variant) {
  std::string leaf = safe_name(method) + "_s" + sparsity_tag(s) + "_seed" + std::to_string(seed);
  if (!variant.empty()) leaf += "_" + safe_name(variant);
  return cfg.run_root() / kind / leaf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PromptSpec vp_spec(const ExperimentConfig& cfg) {
  PromptSpec spec = cfg.base.prompt;
  if (spec.kind == PromptKind::none) {
    spec = PromptSpec{PromptKind::pad, cfg.canvas, cfg.canvas, default_pad_grid(cfg.canvas).front(), cfg.channels};
  }
  return spec;
}

DatasetPair to_canvases(const DatasetPair& raw, Index input, Index canvas) {
  DatasetPair out = raw;
  out.train.images = prepare_canvases(raw.train.images, input, canvas);
  out.test.images = prepare_canvases(raw.test.images, input, canvas);
  return out;
}

ModelState pretrain(const ExperimentConfig& cfg, const DatasetPair& upstream, std::uint64_t seed) {
  const auto spec = cfg.model_spec(upstream.train.num_classes);
  if (!cfg.pretrain_checkpoint.empty()) {
    std::string path = cfg.pretrain_checkpoint;
    if (auto at = path.find("{seed}"); at != std::string::npos) path.replace(at, 6, std::to_string(seed));
    if (fs::exists(path)) return load_checkpoint(path, spec);
  }
  if (cfg.pretrain_epochs == 0) throw ConfigError("no upstream checkpoint and pretrain.epochs = 0");
  auto model = train_dense(build_model(spec, seed), upstream.train, cfg.pretrain_epochs, cfg.pretrain_opt,
                           cfg.base.batch_size, seed);
  const double acc = evaluate(model, nullptr, nullptr, upstream.test);
  save_checkpoint(model, cfg.run_root() / ("pretrain_seed" + std::to_string(seed) + ".ckpt"),
                  {{"seed", seed}, {"upstream", cfg.upstream.describe()}, {"test_acc", acc}});
  return model;
}

// One downstream task: raw data, canvases per input size, and per-seed
// theta_pre (probed head) with its dense fine-tuned accuracy.
struct Task {
  DatasetPair raw;
  std::map<Index, DatasetPair> canvases;
  std::map<std::uint64_t, ModelState> theta_pre;
  std::map<std::uint64_t, double> dense_acc;

  const DatasetPair& at(Index input) const { return canvases.at(input); }
};

class Workspace {
 public:
  explicit Workspace(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    fs::create_directories(cfg.run_root());
    const auto up = cfg.upstream.load();
    const auto canvas = to_canvases(up, cfg.canvas, cfg.canvas);
    std::vector<ModelState> models(cfg.seeds.size());
    parallel_for(cfg.seeds.size(), sweep_threads(cfg),
                 [&](std::size_t i) { models[i] = pretrain(cfg, canvas, cfg.seeds[i]); });
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) pretrained_.emplace(cfg.seeds[i], std::move(models[i]));
  }

  Task task(const DataSource& source, std::vector<Index> inputs, bool dense) const {
    Task t;
    t.raw = source.load();
    inputs.push_back(cfg_.canvas);
    for (Index i : inputs) {
      if (!t.canvases.contains(i)) t.canvases.emplace(i, to_canvases(t.raw, i, cfg_.canvas));
    }
    const auto& data = t.at(cfg_.canvas);
    const auto& seeds = cfg_.seeds;
    std::vector<ModelState> probed(seeds.size());
    std::vector<double> acc(seeds.size(), 0.0);
    parallel_for(seeds.size(), sweep_threads(cfg_), [&](std::size_t i) {
      probed[i] = adapt_head(pretrained_.at(seeds[i]), data.train, cfg_.head_epochs, cfg_.head_opt,
                             cfg_.base.batch_size, seeds[i]);
      if (dense) {
        // Dense fine-tuning is the s = 0 omp cell: same seeds, same schedule.
        const auto method = cfg_.method_for({MethodKind::omp, false}, 0.0, seeds[i]);
        const auto mask = identity_mask(probed[i], cfg_.granularity);
        const auto tuned = tune_subnetwork(probed[i], mask, data.train, std::nullopt, method.tune_epochs, method);
        acc[i] = evaluate(tuned.model, &mask, nullptr, data.test);
      }
    });
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      t.theta_pre.emplace(seeds[i], std::move(probed[i]));
      t.dense_acc.emplace(seeds[i], acc[i]);
    }
    return t;
  }

  const ExperimentConfig& cfg() const { return cfg_; }

 private:
  const ExperimentConfig& cfg_;
  std::map<std::uint64_t, ModelState> pretrained_;
};

Index input_size_of(const ExperimentConfig& cfg, const PruneMethod& method) {
  return method.prompt.kind == PromptKind::none ? cfg.canvas : method.prompt.input_size;
}

// Recomputes the row's mask and prompt figures from the files in `dir`.
void fill_from_artifacts(RunRow& row, const fs::path& dir, const ModelState& model) {
  const auto mask = load_mask(dir / "mask.ckpt");
  check_mask(model, mask);
  row.achieved_sparsity = sparsity_of(mask);
  row.mask_digest = mask_digest(mask);
  row.memory_reduction = memory_reduction(mask, model);
  row.flops_speedup = mask.granularity == Granularity::channel ? speedup_ratio(model, mask) : 1.0;
  row.prompt_param_count = 0;
  for (const char* name : {"prompt.ckpt", "prompt.find.ckpt"}) {
    if (!fs::exists(dir / name)) continue;
    const auto prompt = load_prompt(dir / name);
    if (prompt.spec.kind == PromptKind::random) {
      row.prompt_param_count = prompt.delta.size();
    } else {
      Index n = 0;
      for (Index i = 0; i < prompt.tunable_mask.size(); ++i) n += prompt.tunable_mask[i] != 0.0f;
      row.prompt_param_count = n;
    }
    break;
  }
}

void set_budget(RunRow& row, int find_epochs, long find_steps, int tune_epochs, long tune_steps) {
  row.find_epochs = find_epochs;
  row.find_steps = find_steps;
  row.tune_epochs = tune_epochs;
  row.tune_steps = tune_steps;
  row.epochs_used = find_epochs + tune_epochs;
  row.steps_used = find_steps + tune_steps;
}

void write_found(const PruneResult& res, const ModelSpec& spec, const fs::path& dir) {
  fs::create_directories(dir);
  save_mask(res.mask, spec, dir / "mask.ckpt");
  if (res.scores) save_scores(*res.scores, spec, dir / "scores.ckpt");
  if (res.find_prompt) save_prompt(*res.find_prompt, dir / "prompt.find.ckpt");
}

void write_tuned(const PruneResult& res, const fs::path& dir) {
  if (res.prompt) save_prompt(*res.prompt, dir / "prompt.ckpt");
  save_checkpoint(res.tuned, dir / "tuned.ckpt");
  write_log(res.log, dir / "log.jsonl");
}

// Sweep driver: runs cells in parallel, streams finished rows to
// partial.jsonl, turns exceptions into error rows and returns sorted rows.
struct Cell {
  RunRow row;  // identity fields pre-filled
  std::function<void(RunRow&)> body;
};

RunReport run_cells(const ExperimentConfig& cfg, const std::string& kind, std::vector<Cell> cells) {
  const auto dir = cfg.run_root() / kind;
  fs::create_directories(dir);
  std::ofstream partial(dir / "partial.jsonl", std::ios::trunc);
  std::mutex flush;
  parallel_for(cells.size(), sweep_threads(cfg), [&](std::size_t i) {
    auto& cell = cells[i];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cell.body(cell.row);
    } catch (const std::exception& e) {
      cell.row.error = e.what();
    }
    cell.row.wall_time = seconds_since(t0);
    std::lock_guard lock(flush);
    partial << cell.row.to_json().dump() << '\n' << std::flush;
  });
  RunReport report;
  for (auto& c : cells) report.rows.push_back(std::move(c.row));
  report.sort();
  return report;
}

RunRow identity(const std::string& method, double s, std::uint64_t seed, const std::string& variant,
                const fs::path& dir) {
  RunRow row;
  row.method = method;
  row.sparsity = s;
  row.seed = seed;
  row.variant = variant;
  row.run_dir = dir.string();
  return row;
}

// Prune, tune and evaluate one (method settings, data) combination.
void full_cell(RunRow& row, const ModelState& theta_pre, const DatasetPair& data, const PruneMethod& method,
               double dense_acc) {
  const fs::path dir = row.run_dir;
  auto res = run_method(theta_pre, data.train, method);
  write_found(res, theta_pre.spec, dir);
  write_tuned(res, dir);
  row.dense_acc = dense_acc;
  row.acc_without_prompt = evaluate(res.tuned, &res.mask, nullptr, data.test);
  row.acc_with_prompt = res.prompt ? evaluate(res.tuned, &res.mask, &*res.prompt, data.test) : row.acc_without_prompt;
  row.subnet_acc = res.prompt ? row.acc_with_prompt : row.acc_without_prompt;
  set_budget(row, res.find_epochs, res.find_steps, res.tune_epochs, res.tune_steps);
  fill_from_artifacts(row, dir, theta_pre);
}

}  // namespace

ModelState pretrained_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  fs::create_directories(cfg.run_root());
  const auto up = cfg.upstream.load();
  return pretrain(cfg, to_canvases(up, cfg.canvas, cfg.canvas), seed);
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  Workspace ws(cfg);
  std::vector<Index> inputs;
  for (const auto& e : cfg.methods) inputs.push_back(input_size_of(cfg, cfg.method_for(e, 0.5, 0)));
  const Task task = ws.task(cfg.downstream, inputs, true);

  std::vector<Cell> cells;
  for (const auto& entry : cfg.methods) {
    for (double s : cfg.sparsities) {
      for (auto seed : cfg.seeds) {
        const auto dir = cell_dir(cfg, "experiment", entry.name(), s, seed, "");
        cells.push_back({identity(entry.name(), s, seed, "", dir), [&, entry, s, seed](RunRow& row) {
                           const auto method = cfg.method_for(entry, s, seed);
                           full_cell(row, task.theta_pre.at(seed), task.at(input_size_of(cfg, method)), method,
                                     task.dense_acc.at(seed));
                         }});
      }
    }
  }
  return run_cells(cfg, "experiment", std::move(cells));
}

RunReport run_prune(const ExperimentConfig& cfg) {
  Workspace ws(cfg);
  std::vector<Index> inputs;
  for (const auto& e : cfg.methods) inputs.push_back(input_size_of(cfg, cfg.method_for(e, 0.5, 0)));
  const Task task = ws.task(cfg.downstream, inputs, false);

  std::vector<Cell> cells;
  for (const auto& entry : cfg.methods) {
    for (double s : cfg.sparsities) {
      for (auto seed : cfg.seeds) {
        const auto dir = cell_dir(cfg, "prune", entry.name(), s, seed, "");
        cells.push_back({identity(entry.name(), s, seed, "", dir), [&, entry, s, seed](RunRow& row) {
                           const auto method = cfg.method_for(entry, s, seed);
                           const auto& theta = task.theta_pre.at(seed);
                           const auto& data = task.at(input_size_of(cfg, method));
                           auto res = find_mask(theta, data.train, method);
                           const fs::path dir = row.run_dir;
                           write_found(res, theta.spec, dir);
                           write_log(res.log, dir / "log.jsonl");
                           const PromptState* p = res.find_prompt ? &*res.find_prompt : nullptr;
                           row.acc_without_prompt = evaluate(theta, &res.mask, nullptr, data.test);
                           row.acc_with_prompt = p ? evaluate(theta, &res.mask, p, data.test) : row.acc_without_prompt;
                           row.subnet_acc = row.acc_with_prompt;
                           set_budget(row, res.find_epochs, res.find_steps, 0, 0);
                           fill_from_artifacts(row, dir, theta);
                         }});
      }
    }
  }
  return run_cells(cfg, "prune", std::move(cells));
}

RunReport run_tune_mask(const ExperimentConfig& cfg, const std::filesystem::path& mask_file) {
  const MaskState mask = load_mask(mask_file);
  const auto prompt_file = mask_file.parent_path() / "prompt.find.ckpt";
  std::optional<PromptState> found;
  if (fs::exists(prompt_file)) found = load_prompt(prompt_file);
  Workspace ws(cfg);
  const Index input = found ? found->spec.input_size : cfg.canvas;
  const Task task = ws.task(cfg.downstream, {input}, true);
  const std::string name = "mask:" + mask_file.parent_path().filename().string();

  std::vector<Cell> cells;
  for (auto seed : cfg.seeds) {
    const auto dir = cell_dir(cfg, "tune", mask_file.parent_path().filename().string(), mask.sparsity, seed, "");
    cells.push_back({identity(name, mask.sparsity, seed, "", dir), [&, seed](RunRow& row) {
                       const auto& theta = task.theta_pre.at(seed);
                       check_mask(theta, mask);
                       auto method = cfg.method_for({MethodKind::omp, found.has_value()}, mask.sparsity, seed);
                       method.granularity = mask.granularity;
                       if (found) method.prompt = found->spec;
                       std::optional<PromptState> prompt;
                       if (found) prompt = load_prompt(prompt_file);
                       const auto& data = task.at(input);
                       auto tuned = tune_subnetwork(theta, mask, data.train, std::move(prompt), method.tune_epochs,
                                                    method);
                       PruneResult res;
                       res.mask = mask;
                       res.tuned = std::move(tuned.model);
                       res.prompt = std::move(tuned.prompt);
                       res.log = std::move(tuned.log);
                       const fs::path dir = row.run_dir;
                       write_found(res, theta.spec, dir);
                       write_tuned(res, dir);
                       row.dense_acc = task.dense_acc.at(seed);
                       row.acc_without_prompt = evaluate(res.tuned, &mask, nullptr, data.test);
                       row.acc_with_prompt =
                           res.prompt ? evaluate(res.tuned, &mask, &*res.prompt, data.test) : row.acc_without_prompt;
                       row.subnet_acc = row.acc_with_prompt;
                       set_budget(row, 0, 0, tuned.epochs, tuned.steps);
                       fill_from_artifacts(row, dir, theta);
                     }});
  }
  return run_cells(cfg, "tune", std::move(cells));
}

RunReport run_transfer(const ExperimentConfig& cfg, const DataSource& source, const DataSource& target) {
  Workspace ws(cfg);
  std::vector<Index> inputs;
  for (const auto& e : cfg.methods) inputs.push_back(input_size_of(cfg, cfg.method_for(e, 0.5, 0)));
  const Task src = ws.task(source, inputs, false);
  const Task dst = ws.task(target, inputs, true);

  std::vector<Cell> cells;
  for (const auto& entry : cfg.methods) {
    for (double s : cfg.sparsities) {
      for (auto seed : cfg.seeds) {
        const auto dir = cell_dir(cfg, "transfer", entry.name(), s, seed, "");
        RunRow row = identity(entry.name(), s, seed, "", dir);
        row.transfer = true;
        cells.push_back({row, [&, entry, s, seed](RunRow& row) {
                           const auto method = cfg.method_for(entry, s, seed);
                           const Index input = input_size_of(cfg, method);
                           const fs::path dir = row.run_dir;
                           const auto found = find_mask(src.theta_pre.at(seed), src.at(input).train, method);
                           write_found(found, src.theta_pre.at(seed).spec, dir / "source");
                           write_log(found.log, dir / "source" / "log.jsonl");

                           // The target run consumes only the files written by the source run.
                           const auto mask = load_mask(dir / "source" / "mask.ckpt");
                           if (mask_digest(mask) != mask_digest(found.mask)) {
                             throw std::runtime_error("transfer: mask file digest differs from the found mask");
                           }
                           std::optional<PromptState> prompt;
                           if (method.tunes_with_prompt()) {
                             prompt = fs::exists(dir / "source" / "prompt.find.ckpt")
                                          ? load_prompt(dir / "source" / "prompt.find.ckpt")
                                          : make_prompt(method.prompt, seed);
                           }
                           const auto& theta = dst.theta_pre.at(seed);
                           const auto& data = dst.at(input);
                           auto tuned =
                               tune_subnetwork(theta, mask, data.train, std::move(prompt), method.tune_epochs, method);
                           PruneResult res;
                           res.mask = mask;
                           res.tuned = std::move(tuned.model);
                           res.prompt = std::move(tuned.prompt);
                           res.log = found.log;
                           res.log.insert(res.log.end(), tuned.log.begin(), tuned.log.end());
                           save_mask(mask, theta.spec, dir / "mask.ckpt");
                           write_tuned(res, dir);
                           row.dense_acc = dst.dense_acc.at(seed);
                           row.acc_without_prompt = evaluate(res.tuned, &mask, nullptr, data.test);
                           row.acc_with_prompt = res.prompt ? evaluate(res.tuned, &mask, &*res.prompt, data.test)
                                                            : row.acc_without_prompt;
                           row.subnet_acc = row.acc_with_prompt;
                           set_budget(row, found.find_epochs, found.find_steps, tuned.epochs, tuned.steps);
                           fill_from_artifacts(row, dir, theta);
                           if (row.mask_digest != mask_digest(found.mask)) {
                             throw std::runtime_error("transfer: tuned mask digest differs from the source mask");
                           }
                         }});
      }
    }
  }
  return run_cells(cfg, "transfer", std::move(cells));
}

RunReport run_pilot(const ExperimentConfig& cfg) {
  Workspace ws(cfg);
  const PromptSpec vp = vp_spec(cfg);
  const Task task = ws.task(cfg.downstream, {vp.input_size}, true);

  std::vector<Cell> cells;
  for (const auto& entry : cfg.pilot.methods) {
    for (double s : cfg.pilot.sparsities) {
      for (auto seed : cfg.seeds) {
        for (auto mode : cfg.pilot.modes) {
          const std::string variant(to_string(mode));
          const auto dir = cell_dir(cfg, "pilot", entry.name(), s, seed, variant);
          cells.push_back({identity(entry.name(), s, seed, variant, dir), [&, entry, s, seed, mode](RunRow& row) {
                             auto method = cfg.method_for(entry, s, seed);
                             const auto& theta = task.theta_pre.at(seed);
                             const auto& data = task.at(vp.input_size);
                             const auto found = find_mask(theta, data.train, method);
                             const fs::path dir = row.run_dir;
                             write_found(found, theta.spec, dir);
                             auto pilot = post_pruning_prompt(theta, found.mask, data.train, data.test, vp, mode,
                                                              cfg.pilot.prompt_epochs, method);
                             save_prompt(pilot.prompt, dir / "prompt.ckpt");
                             TrainLog log = found.log;
                             log.insert(log.end(), pilot.log.begin(), pilot.log.end());
                             write_log(log, dir / "log.jsonl");
                             row.dense_acc = task.dense_acc.at(seed);
                             row.acc_without_prompt = pilot.acc_without;
                             row.acc_with_prompt = pilot.acc_with;
                             row.subnet_acc = pilot.acc_with;
                             set_budget(row, found.find_epochs, found.find_steps, pilot.epochs, pilot.steps);
                             fill_from_artifacts(row, dir, theta);
                           }});
        }
      }
    }
  }
  return run_cells(cfg, "pilot", std::move(cells));
}

RunReport run_ablation(const ExperimentConfig& cfg) {
  const PromptSpec vp = vp_spec(cfg);
  const auto& ab = cfg.ablation;
  const auto inputs = ab.input_sizes.empty() ? default_input_grid(cfg.canvas) : ab.input_sizes;
  const auto pads = ab.pad_sizes.empty() ? default_pad_grid(cfg.canvas) : ab.pad_sizes;

  struct Variant {
    std::string name;
    PromptSpec prompt;
    bool in_finding = true;
    bool in_tuning = true;
  };
  std::vector<Variant> variants;
  for (Index i : inputs) {
    PromptSpec p = vp;
    p.input_size = i;
    variants.push_back({"input=" + std::to_string(i), p});
  }
  for (Index s : pads) {
    PromptSpec p = vp;
    p.kind = PromptKind::pad;
    p.input_size = cfg.canvas;
    p.size = s;
    variants.push_back({"pad=" + std::to_string(s), p});
  }
  // Prompt kinds share the pad prompt's tunable-parameter budget.
  PromptSpec pad_ref = vp;
  pad_ref.kind = PromptKind::pad;
  const Index budget = tunable_count(pad_ref).per_channel;
  for (auto kind : ab.kinds) {
    PromptSpec p = pad_ref;
    p.kind = kind;
    if (kind == PromptKind::fix || kind == PromptKind::random) {
      p.size = std::min<Index>(cfg.canvas, std::lround(std::sqrt(static_cast<double>(budget))));
    } else if (kind == PromptKind::none) {
      throw ConfigError("ablation.kinds: 'none' is not a prompt kind for the ablation");
    }
    if (ab.matched) {
      const Index got = tunable_count(p).per_channel;
      const double gap = std::abs(static_cast<double>(got - budget)) / static_cast<double>(budget);
      if (gap > ab.match_tolerance) {
        throw ConfigError("ablation: " + std::string(to_string(kind)) + " prompt has " + std::to_string(got) +
                          " tunable entries per channel against " + std::to_string(budget));
      }
    }
    variants.push_back({"kind=" + std::string(to_string(kind)), p});
  }
  for (const auto& phase : ab.phases) {
    variants.push_back({"phase=" + phase, vp, phase != "tuning", phase != "finding"});
  }

  Workspace ws(cfg);
  std::vector<Index> sizes;
  for (const auto& v : variants) sizes.push_back(v.prompt.input_size);
  const Task task = ws.task(cfg.downstream, sizes, true);

  std::vector<Cell> cells;
  const MethodEntry vpns{MethodKind::vpns, false};
  for (const auto& v : variants) {
    for (auto seed : cfg.seeds) {
      const auto dir = cell_dir(cfg, "ablation", vpns.name(), ab.sparsity, seed, v.name);
      cells.push_back({identity(vpns.name(), ab.sparsity, seed, v.name, dir), [&, v, seed](RunRow& row) {
                         auto method = cfg.method_for(vpns, ab.sparsity, seed);
                         method.prompt = v.prompt;
                         method.prompt_in_finding = v.in_finding;
                         method.prompt_in_tuning = v.in_tuning;
                         full_cell(row, task.theta_pre.at(seed), task.at(v.prompt.input_size), method,
                                   task.dense_acc.at(seed));
                       }});
    }
  }
  return run_cells(cfg, "ablation", std::move(cells));
}

}  // namespace cosparse
