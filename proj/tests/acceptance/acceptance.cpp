// Acceptance run: one line per criterion, nonzero exit when any fails.
//
//   cosparse_acceptance [--out DIR] [id ...]

#include "support/micro_net.hpp"
#include "support/saliency_oracle.hpp"
#include "support/structured_oracle.hpp"

#include "cosparse/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

using namespace cosparse;
using namespace cosparse::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_root = fs::temp_directory_path() / "cosparse_acceptance";

// The reference setup: shapes-K4 upstream, textures-K4 downstream, cnn-s.
ExperimentConfig reference_config() {
  auto cfg = default_config();
  cfg.name = "reference";
  cfg.out_dir = g_root;
  cfg.pretrain_checkpoint = (g_root / "reference" / "pretrain_seed{seed}.ckpt").string();
  return cfg;
}

const DatasetPair& reference_downstream() {
  static const DatasetPair d = reference_config().downstream.load();
  return d;
}

const ModelState& reference_theta_pre(std::uint64_t seed) {
  static std::map<std::uint64_t, ModelState> cache;
  if (auto it = cache.find(seed); it != cache.end()) return it->second;
  const auto cfg = reference_config();
  const auto up = pretrained_model(cfg, seed);
  const auto& down = reference_downstream();
  return cache[seed] = adapt_head(up, down.train, cfg.head_epochs, cfg.head_opt, cfg.base.batch_size, seed);
}

const RunReport& reference_experiment() {
  static const RunReport report = [] {
    auto cfg = reference_config();
    cfg.methods = {{MethodKind::omp, false}, {MethodKind::hydra, false}, {MethodKind::vpns, false}};
    cfg.sparsities = {0.9};
    auto r = run_experiment(cfg);
    write_reports(cfg, "experiment", r);
    return r;
  }();
  return report;
}

double mean_of(const RunReport& report, const std::string& method, double RunRow::*field) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : report.rows) {
    if (r.method != method || !r.error.empty()) continue;
    sum += r.*field;
    ++n;
  }
  if (n == 0) throw std::runtime_error("no rows for " + method);
  return sum / n;
}

std::string first_error(const RunReport& report) {
  for (const auto& r : report.rows) {
    if (!r.error.empty()) return r.method + ": " + r.error;
  }
  return {};
}

bool nested(const MaskState& inner, const MaskState& outer) {
  for (std::size_t l = 0; l < inner.masks.size(); ++l) {
    if (inner.masks[l].values().cwiseProduct(outer.masks[l].values()) != inner.masks[l].values()) return false;
  }
  return true;
}

// --- 1 ---------------------------------------------------------------------

Outcome prompt_arithmetic() {
  const auto n = tunable_count({PromptKind::pad, 224, 224, 16, 1}).per_channel;
  const Index oracle = 4 * 16 * (224 - 16);
  return {n == 13312 && n == oracle, fmt("tunable_count(pad, 224, 16) = %lld", static_cast<long long>(n))};
}

// --- 2 ---------------------------------------------------------------------

Outcome mask_cardinality() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<Index> layers(1, 4), width(1, 2000);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<float> normal;
  int bad_count = 0, bad_set = 0, bad_scale = 0;
  for (int trial = 0; trial < 200; ++trial) {
    ScoreSet scores;
    const Index L = layers(rng);
    std::vector<std::pair<float, std::pair<Index, Index>>> all;
    for (Index l = 0; l < L; ++l) {
      Tensorf t({width(rng)});
      for (Index i = 0; i < t.size(); ++i) {
        t[i] = normal(rng);
        all.push_back({std::abs(t[i]), {l, i}});
      }
      scores.names.push_back("w" + std::to_string(l));
      scores.scores.push_back(DiffTensor<float>::parameter(t));
    }
    const Index n = static_cast<Index>(all.size());
    const double s = unit(rng);
    const auto mask = threshold(scores, s);
    const auto expected = static_cast<Index>(std::floor((1.0L - static_cast<long double>(s)) * n));
    bad_count += mask.kept() != expected;

    // Oracle selection: sort by |score| descending, ties to lower (layer, index).
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::set<std::pair<Index, Index>> keep;
    for (Index i = 0; i < expected; ++i) keep.insert(all[static_cast<std::size_t>(i)].second);
    for (Index l = 0; l < L; ++l) {
      for (Index i = 0; i < mask.masks[l].size(); ++i) {
        if ((mask.masks[l][i] != 0.0f) != keep.contains({l, i})) {
          ++bad_set;
          l = L;
          break;
        }
      }
    }

    const auto digest = mask_digest(mask);
    for (float lambda : {0.01f, 1.0f, 100.0f}) {
      ScoreSet scaled = scores;
      scaled.scores.clear();
      for (const auto& t : scores.scores) {
        Tensorf v = t.value();
        v.values() *= lambda;
        scaled.scores.push_back(DiffTensor<float>::parameter(v));
      }
      bad_scale += mask_digest(threshold(scaled, s)) != digest;
    }
  }
  return {bad_count == 0 && bad_set == 0 && bad_scale == 0,
          fmt("200 pairs: %d count mismatches, %d selection mismatches, %d scale-variant masks", bad_count, bad_set,
              bad_scale)};
}

// --- 3 ---------------------------------------------------------------------

Outcome imp_schedule() {
  const auto cfg = reference_config();
  const auto method = cfg.method_for({MethodKind::imp, false}, 0.8926, 0);
  const auto result = prune_imp(reference_theta_pre(0), reference_downstream().train, method);
  const double pct = 100.0 * sparsity_of(result.mask);
  bool nest = true;
  for (std::size_t r = 1; r < result.rounds.size(); ++r) nest = nest && nested(result.rounds[r], result.rounds[r - 1]);
  const bool ok = result.rounds.size() == 10 && std::abs(pct - 89.26) <= 0.01 && nest;
  return {ok, fmt("%zu rounds of %d epochs, sparsity %.4f%%, masks %s", result.rounds.size(), method.imp_round_epochs,
                  pct, nest ? "nested" : "NOT nested")};
}

// --- 4 ---------------------------------------------------------------------

Outcome gradient_correctness() {
  double worst = 0.0;
  std::string where;
  Index checked = 0, skipped = 0;
  auto take = [&](const std::vector<CheckResult>& results, const std::string& tag) {
    for (const auto& r : results) {
      checked += r.checked;
      skipped += r.skipped;
      if (r.error > worst) {
        worst = r.error;
        where = tag + "/" + r.name;
      }
    }
  };
  for (std::uint64_t seed = 0; seed < 5; ++seed) take(op_suite(seed), "ops");
  int nets = 0;
  for (std::uint64_t seed = 1000; seed < 1120; ++seed, ++nets) {
    auto net = random_micro_net(seed);
    take(net.check(), "net" + std::to_string(seed));
  }
  return {worst <= 1e-3 && nets >= 100 && checked > 0,
          fmt("op suite + %d micro-nets, %lld coordinates (%lld at kinks skipped), max rel err %.2e at %s", nets,
              static_cast<long long>(checked), static_cast<long long>(skipped), worst, where.c_str())};
}

// --- 5 ---------------------------------------------------------------------

Outcome saliency_oracles() {
  const auto model = build_model(twenty_weight_spec(), 2);
  const auto batch = random_batch(8, 1, 2, 3, 5);
  auto fd = fd_mask_gradient(model, batch);
  for (auto& t : fd) t.values() = t.values().cwiseAbs();
  std::vector<Tensord> snip;
  for (const auto& t : snip_scores(model, batch)) snip.push_back(t.cast<double>());
  const double snip_err = relative_error(snip, fd);

  const Quadratic q(20, 9);
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(20, -1.0, 1.0);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(20, 0.5, -0.3);
  const Eigen::VectorXd hv = fd_hvp([&](const Eigen::VectorXd& y) { return q.grad(y); }, x, v, 1e-2);
  const double hvp_err = (hv - q.a * v).norm() / (q.a * v).norm();

  // prune_synflow takes no dataset; all-ones input only.
  const auto cnn = build_model(reference_spec("cnn-s", 1, 32, 4), 0);
  const auto mask = prune_synflow(cnn, 0.9);
  Index min_kept = std::numeric_limits<Index>::max();
  for (const auto& m : mask.masks) min_kept = std::min(min_kept, static_cast<Index>(m.values().sum()));
  const bool ok = snip_err <= 1e-2 && hvp_err <= 1e-2 && min_kept > 0 && mask.kept() == keep_count(0.9, mask.total());
  return {ok, fmt("snip rel err %.2e, grasp hvp rel err %.2e, synflow min kept per layer %lld", snip_err, hvp_err,
                  static_cast<long long>(min_kept))};
}

// --- 6 ---------------------------------------------------------------------

Outcome reduction_to_hydra() {
  const auto cfg = reference_config();
  auto vp = cfg.method_for({MethodKind::vpns, false}, 0.9, 0);
  vp.prompt.size = 0;
  auto hy = cfg.method_for({MethodKind::hydra, false}, 0.9, 0);
  hy.find_epochs = vp.find_epochs;
  const auto& theta = reference_theta_pre(0);
  const auto a = prune_vpns(theta, reference_downstream().train, vp);
  const auto b = prune_hydra(theta, reference_downstream().train, hy);
  std::size_t first_diff = a.step_losses.size();
  for (std::size_t i = 0; i < std::min(a.step_losses.size(), b.step_losses.size()); ++i) {
    if (std::memcmp(&a.step_losses[i], &b.step_losses[i], sizeof(double)) != 0) {
      first_diff = i;
      break;
    }
  }
  const bool ok = a.step_losses.size() == b.step_losses.size() && first_diff == a.step_losses.size() &&
                  a.mask_digests == b.mask_digests && !a.step_losses.empty();
  return {ok, fmt("%zu vs %zu steps, first differing step %zu, %zu mask digests %s", a.step_losses.size(),
                  b.step_losses.size(), first_diff, a.mask_digests.size(),
                  a.mask_digests == b.mask_digests ? "equal" : "differ")};
}

// --- 7 ---------------------------------------------------------------------

Outcome headline() {
  const auto& report = reference_experiment();
  if (auto e = first_error(report); !e.empty()) return {false, e};
  const double vp = mean_of(report, "vpns", &RunRow::subnet_acc);
  const double hy = mean_of(report, "hydra", &RunRow::subnet_acc);
  const double omp = mean_of(report, "omp", &RunRow::subnet_acc);
  const double dense = mean_of(report, "vpns", &RunRow::dense_acc);
  const bool ok = report.rows.size() == 9 && vp >= hy - 0.5 && vp >= omp - 0.5 && dense - vp <= 3.0;
  return {ok, fmt("s=0.9, 3 seeds: vpns %.2f, hydra %.2f, omp %.2f, dense %.2f", vp, hy, omp, dense)};
}

// --- 8 ---------------------------------------------------------------------

Outcome pilot() {
  auto cfg = reference_config();
  cfg.pilot.methods = {{MethodKind::omp, false}};
  const auto report = run_pilot(cfg);
  write_reports(cfg, "pilot", report);
  if (auto e = first_error(report); !e.empty()) return {false, e};
  const double top = *std::max_element(cfg.pilot.sparsities.begin(), cfg.pilot.sparsities.end());
  int improved = 0;
  std::map<double, std::vector<double>> after;
  for (const auto& r : report.rows) {
    if (r.variant == "zero_shot" && r.sparsity == top) improved += r.acc_with_prompt > r.acc_without_prompt;
    if (r.variant == "after_finetune") after[r.sparsity].push_back(r.acc_with_prompt - r.acc_without_prompt);
  }
  double worst = 0.0;
  std::string shifts;
  for (const auto& [s, d] : after) {
    const double m = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    worst = std::max(worst, std::abs(m));
    shifts += fmt(" %.4f:%+.2f", s, m);
  }
  return {improved >= 2 && worst <= 1.5 && !after.empty(),
          fmt("zero-shot improves %d/3 seeds at s=%.4f; after-finetune mean shift%s", improved, top, shifts.c_str())};
}

// --- 9 ---------------------------------------------------------------------

Outcome structured_accounting() {
  std::mt19937_64 rng(9);
  int mismatches = 0, cases = 0;
  for (const auto& spec : {reference_spec("cnn-s", 1, 12, 3), reference_spec("mlp-s", 2, 6, 3),
                           reference_spec("cnn-m", 2, 10, 5), reference_spec("cnn-s", 3, 16, 4)}) {
    const auto model = build_model(spec, 3);
    mismatches += speedup_ratio(model, identity_mask(model, Granularity::channel)) != 1.0;
    for (double keep : {0.3, 0.6, 0.9}) {
      for (int t = 0; t < 10; ++t, ++cases) {
        const auto mask = random_channel_mask(model, keep, rng);
        const auto oracle = enumerate_channel_costs(model, &mask);
        mismatches += flops_count(model, &mask) != oracle.flops;
        mismatches += memory_reduction(mask, model) !=
                      static_cast<double>(oracle.pruned_params) / static_cast<double>(oracle.total_params);
      }
    }
  }
  const auto cnn = build_model(reference_spec("cnn-s", 1, 32, 4), 0);
  const auto mask = prune_omp(cnn, 0.2, Granularity::channel);
  const double reported = speedup_ratio(cnn, mask);
  const double oracle = static_cast<double>(enumerate_channel_costs(cnn, nullptr).flops) /
                        static_cast<double>(enumerate_channel_costs(cnn, &mask).flops);
  const bool ok = mismatches == 0 && std::abs(reported - oracle) < 5e-7;
  return {ok, fmt("%d toy masks, %d mismatches; cnn-s 20%% channels: speedup %.6f vs oracle %.6f", cases, mismatches,
                  reported, oracle)};
}

// --- 10 --------------------------------------------------------------------

std::string csv_without_wall_time(const fs::path& path) {
  std::ifstream in(path);
  std::string line, out;
  std::optional<std::size_t> col;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (!col) col = std::find(cells.begin(), cells.end(), "wall_time") - cells.begin();
    if (*col < cells.size()) cells.erase(cells.begin() + static_cast<std::ptrdiff_t>(*col));
    for (const auto& c : cells) out += c + ",";
    out += "\n";
  }
  return out;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  for (int shift : {24, 16, 8, 0}) out.put(static_cast<char>((v >> shift) & 0xff));
}

void write_idx(const fs::path& img, const fs::path& lbl, std::uint32_t magic, std::uint32_t n,
               std::uint32_t labels, std::uint32_t pixels) {
  std::ofstream a(img, std::ios::binary), b(lbl, std::ios::binary);
  put_be32(a, magic);
  put_be32(a, n);
  put_be32(a, 4);
  put_be32(a, 4);
  for (std::uint32_t i = 0; i < pixels; ++i) a.put(static_cast<char>(i * 7));
  put_be32(b, 0x801);
  put_be32(b, labels);
  for (std::uint32_t i = 0; i < labels; ++i) b.put(static_cast<char>(i % 3));
}

Outcome determinism_and_formats() {
  auto cfg = reference_config();
  cfg.name = "determinism";
  cfg.pretrain_checkpoint.clear();
  cfg.seeds = {0};
  cfg.sparsities = {0.5, 0.9};
  cfg.upstream.synth.per_class = 60;
  cfg.downstream.synth.per_class = 60;
  cfg.pretrain_epochs = 3;
  cfg.head_epochs = 1;
  cfg.budgets = {2, 2, 4, 4, 4, 1};
  cfg.base.synflow_iterations = 10;
  std::vector<std::string> csv;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(cfg.run_root());
    const auto report = run_experiment(cfg);
    if (auto e = first_error(report); !e.empty()) return {false, e};
    write_reports(cfg, "experiment", report);
    csv.push_back(csv_without_wall_time(cfg.run_root() / "experiment" / "report.csv"));
  }
  const bool same_csv = csv[0] == csv[1] && !csv[0].empty();

  const auto model = build_model(reference_spec("cnn-s", 1, 32, 4), 5);
  const auto ckpt = g_root / "roundtrip.ckpt";
  save_checkpoint(model, ckpt);
  const auto back = load_checkpoint(ckpt, model.spec);
  bool exact = true;
  for (const auto& p : model.params) {
    const auto& a = p.tensor.value();
    const auto& b = back.param(p.name).value();
    exact = exact && a.shape() == b.shape() &&
            std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
  }
  const auto ckpt2 = g_root / "roundtrip2.ckpt";
  save_checkpoint(back, ckpt2);
  std::ifstream f1(ckpt, std::ios::binary), f2(ckpt2, std::ios::binary);
  exact = exact && std::string(std::istreambuf_iterator<char>(f1), {}) == std::string(std::istreambuf_iterator<char>(f2), {});

  const auto img = g_root / "images.idx", lbl = g_root / "labels.idx";
  int idx_ok = 0;
  write_idx(img, lbl, 0x803, 5, 5, 80);
  try {
    const auto ds = load_idx(img, lbl);
    idx_ok += ds.size() == 5 && ds.images.shape() == Shape{5, 1, 4, 4} && ds.images[1] == 7.0f / 255.0f;
  } catch (const DataError&) {
  }
  struct Bad {
    std::uint32_t magic, n, labels, pixels;
  };
  for (const Bad& b : {Bad{0x802, 5, 5, 80}, Bad{0x803, 5, 4, 80}, Bad{0x803, 5, 5, 79}, Bad{0x803, 5, 5, 81}}) {
    write_idx(img, lbl, b.magic, b.n, b.labels, b.pixels);
    try {
      load_idx(img, lbl);
    } catch (const DataError&) {
      ++idx_ok;
    }
  }
  return {same_csv && exact && idx_ok == 5,
          fmt("re-run CSV %s (%zu bytes), checkpoint round-trip %s, IDX %d/5 accept/reject cases",
              same_csv ? "identical" : "DIFFERS", csv[0].size(), exact ? "bit-exact" : "NOT exact", idx_ok)};
}

// --- 11 --------------------------------------------------------------------

Outcome budget_accounting() {
  const auto cfg = reference_config();
  const auto vp = cfg.method_for({MethodKind::vpns, false}, 0.9, 0);
  const auto hy = cfg.method_for({MethodKind::hydra, false}, 0.9, 0);
  const auto& report = reference_experiment();
  if (auto e = first_error(report); !e.empty()) return {false, e};
  const Index batches = batch_count(reference_downstream().train.size(), cfg.base.batch_size);
  int bad = 0;
  std::map<std::string, int> find;
  for (const auto& r : report.rows) {
    long logged = 0;
    int epochs = 0;
    for (const auto& row : read_log(fs::path(r.run_dir) / "log.jsonl")) {
      logged += row.steps;
      ++epochs;
    }
    bad += logged != r.steps_used || epochs != r.epochs_used || r.steps_used != r.epochs_used * batches;
    find[r.method] = r.find_epochs;
  }
  const bool ok = bad == 0 && 2 * vp.find_epochs == hy.find_epochs && 2 * find["vpns"] == find["hydra"];
  return {ok, fmt("find epochs vpns %d / hydra %d; %zu rows, %d with steps_used != logged = epochs x %lld batches",
                  find["vpns"], find["hydra"], report.rows.size(), bad, static_cast<long long>(batches))};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--out") == 0 && i + 1 < argc) {
      g_root = argv[++i];
    } else {
      only.insert(std::atoi(argv[i]));
    }
  }
  for (const char* stale : {"reference", "determinism"}) fs::remove_all(g_root / stale);
  fs::create_directories(g_root);

  const std::vector<Criterion> criteria = {
      {1, "prompt arithmetic", prompt_arithmetic},
      {2, "mask cardinality", mask_cardinality},
      {3, "IMP schedule", imp_schedule},
      {4, "gradient correctness", gradient_correctness},
      {5, "saliency oracles", saliency_oracles},
      {6, "reduction to hydra", reduction_to_hydra},
      {7, "desk-scale headline", headline},
      {8, "pilot reproduction", pilot},
      {9, "structured accounting", structured_accounting},
      {10, "determinism and formats", determinism_and_formats},
      {11, "budget accounting", budget_accounting},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << " (" << fmt("%.1f s", secs)
              << "): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
