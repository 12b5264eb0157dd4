#include "cosparse/harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace cosparse {

DatasetPair DataSource::load() const {
  DatasetPair pair;
  switch (kind) {
    case DataKind::synthetic:
      pair = synth_generate(synth);
      break;
    case DataKind::idx:
      pair.train = load_idx(train_images, train_labels, Split::train);
      pair.test = load_idx(test_images, test_labels, Split::test);
      break;
    case DataKind::csv:
      pair.train = load_csv(train_csv, Split::train);
      pair.test = load_csv(test_csv, Split::test);
      break;
  }
  pair.train.validate();
  pair.test.validate();
  if (pair.train.num_classes != pair.test.num_classes) {
    const int k = std::max(pair.train.num_classes, pair.test.num_classes);
    pair.train.num_classes = pair.test.num_classes = k;
  }
  return pair;
}

std::string DataSource::describe() const {
  switch (kind) {
    case DataKind::synthetic: return synth.tag();
    case DataKind::idx: return "idx:" + train_images.string();
    case DataKind::csv: return "csv:" + train_csv.string();
  }
  return "?";
}

std::string MethodEntry::name() const {
  return std::string(to_string(kind)) + (with_prompt ? "+vp" : "");
}

MethodEntry MethodEntry::parse(std::string_view text) {
  MethodEntry e;
  constexpr std::string_view suffix = "+vp";
  if (text.size() > suffix.size() && text.substr(text.size() - suffix.size()) == suffix) {
    e.with_prompt = true;
    text.remove_suffix(suffix.size());
  }
  e.kind = parse_method(text);
  if (e.kind == MethodKind::vpns) e.with_prompt = false;  // vpns always carries its prompt
  return e;
}

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.upstream.synth = SyntheticSpec{Generator::shapes, 4, 500, 32, 1, 0.1, 1001};
  cfg.downstream.synth = SyntheticSpec{Generator::textures, 4, 500, 32, 1, 0.1, 2002};
  for (auto k : {MethodKind::random, MethodKind::omp, MethodKind::imp, MethodKind::snip, MethodKind::grasp,
                 MethodKind::synflow, MethodKind::hydra, MethodKind::vpns}) {
    cfg.methods.push_back({k, false});
  }
  cfg.base.prompt = PromptSpec{PromptKind::pad, 32, 32, 2, 1};
  return cfg;
}

std::vector<Index> default_pad_grid(Index canvas) {
  std::vector<Index> out;
  for (Index p : {16, 32, 64}) {
    out.push_back(std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(p * canvas) / 224.0))));
  }
  return out;
}

std::vector<Index> default_input_grid(Index canvas) {
  std::vector<Index> out;
  for (Index i : {128, 160, 192, 224}) {
    out.push_back(std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(i * canvas) / 224.0))));
  }
  return out;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError(why); };
  if (name.empty() || name.find('/') != std::string::npos) fail("experiment.name must be a plain non-empty name");
  if (seeds.empty()) fail("experiment.seeds must not be empty");
  if (methods.empty()) fail("experiment.methods must not be empty");
  for (double s : sparsities) {
    if (!(s >= 0.0 && s < 1.0)) fail("experiment.sparsities: " + std::to_string(s) + " outside [0, 1)");
  }
  for (double s : pilot.sparsities) {
    if (!(s >= 0.0 && s < 1.0)) fail("pilot.sparsities: " + std::to_string(s) + " outside [0, 1)");
  }
  if (!(ablation.sparsity >= 0.0 && ablation.sparsity < 1.0)) fail("ablation.sparsity outside [0, 1)");
  if (canvas < 4) fail("experiment.canvas must be >= 4");
  if (channels < 1) fail("experiment.channels must be >= 1");
  if (pretrain_epochs < 0 || head_epochs < 0) fail("epoch counts must be >= 0");
  if (threads < 0) fail("experiment.threads must be >= 0");
  const Budgets& b = budgets;
  for (int v : {b.vpns_find, b.vpns_tune, b.hydra_find, b.hydra_tune, b.oneshot_tune, b.imp_round}) {
    if (v < 0) fail("budgets must be >= 0");
  }
  if (base.batch_size < 1) fail("pruning.batch_size must be >= 1");
  try {
    if (base.prompt.kind != PromptKind::none) base.prompt.validate();
  } catch (const std::invalid_argument& e) {
    fail(std::string("prompt: ") + e.what());
  }
  if (base.prompt.canvas != canvas || base.prompt.channels != channels) {
    fail("prompt canvas/channels must match experiment.canvas/channels");
  }
  for (const auto* src : {&upstream, &downstream}) {
    if (src->kind != DataKind::synthetic) continue;
    try {
      src->synth.validate();
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    if (src->synth.image_size > canvas) fail("synthetic image_size exceeds the canvas");
    if (src->synth.channels != channels) fail("synthetic channels must match experiment.channels");
  }
  for (Index i : ablation.input_sizes) {
    if (i < 1 || i > canvas) fail("ablation.input_sizes: " + std::to_string(i) + " outside [1, canvas]");
  }
  for (Index p : ablation.pad_sizes) {
    if (p < 0 || 2 * p >= canvas) fail("ablation.pad_sizes: " + std::to_string(p) + " leaves no frozen centre");
  }
  for (const auto& ph : ablation.phases) {
    if (ph != "both" && ph != "finding" && ph != "tuning") fail("ablation.phases: unknown phase '" + ph + "'");
  }
  try {
    reference_spec(model, channels, canvas, 2);
  } catch (const std::exception& e) {
    fail(std::string("experiment.model: ") + e.what());
  }
}

ModelSpec ExperimentConfig::model_spec(Index classes) const { return reference_spec(model, channels, canvas, classes); }

PruneMethod ExperimentConfig::method_for(const MethodEntry& entry, double sparsity, std::uint64_t seed) const {
  PruneMethod m = base;
  m.kind = entry.kind;
  m.sparsity = sparsity;
  m.seed = seed;
  m.granularity = granularity;
  m.scope = scope;
  switch (entry.kind) {
    case MethodKind::vpns:
      m.find_epochs = budgets.vpns_find;
      m.tune_epochs = budgets.vpns_tune;
      break;
    case MethodKind::hydra:
      m.find_epochs = budgets.hydra_find;
      m.tune_epochs = budgets.hydra_tune;
      break;
    default:
      m.find_epochs = 0;
      m.tune_epochs = budgets.oneshot_tune;
      break;
  }
  m.imp_round_epochs = budgets.imp_round;
  if (entry.kind != MethodKind::vpns && !entry.with_prompt) m.prompt.kind = PromptKind::none, m.prompt.size = 0;
  if (entry.kind != MethodKind::vpns && entry.with_prompt) m.prompt_in_finding = false;
  return m;
}

namespace {

namespace pt = boost::property_tree;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) throw ConfigError("key '" + section + "' outside any [section]");
      for (const auto& kv : body) unused_.insert(section + "." + kv.first);
    }
  }

  std::optional<std::string> raw(const std::string& key) {
    const auto v = tree_.get_optional<std::string>(pt::ptree::path_type(key, '.'));
    if (!v) return std::nullopt;
    unused_.erase(key);
    return *v;
  }

  bool has_section(const std::string& section) const { return tree_.find(section) != tree_.not_found(); }

  void string(const std::string& key, std::string& out) {
    if (auto v = raw(key)) out = *v;
  }

  template <typename T>
  void number(const std::string& key, T& out) {
    auto v = raw(key);
    if (!v) return;
    std::istringstream is(*v);
    T parsed{};
    is >> parsed;
    if (!is || !(is >> std::ws).eof()) throw ConfigError(key + ": expected a number, got '" + *v + "'");
    out = parsed;
  }

  void flag(const std::string& key, bool& out) {
    auto v = raw(key);
    if (!v) return;
    if (*v == "true" || *v == "1" || *v == "yes") {
      out = true;
    } else if (*v == "false" || *v == "0" || *v == "no") {
      out = false;
    } else {
      throw ConfigError(key + ": expected true/false, got '" + *v + "'");
    }
  }

  template <typename T, typename Parse>
  void list(const std::string& key, std::vector<T>& out, Parse parse) {
    auto v = raw(key);
    if (!v) return;
    out.clear();
    for (const auto& item : split_list(*v)) {
      try {
        out.push_back(parse(item));
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(key + ": bad entry '" + item + "' (" + e.what() + ")");
      }
    }
  }

  template <typename E, typename Parse>
  void choice(const std::string& key, E& out, Parse parse) {
    auto v = raw(key);
    if (!v) return;
    try {
      out = parse(*v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

  void finish() const {
    if (!unused_.empty()) throw ConfigError("unknown config key '" + *unused_.begin() + "'");
  }

 private:
  const pt::ptree& tree_;
  std::set<std::string> unused_;
};

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

Index parse_index(const std::string& s) {
  std::size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return static_cast<Index>(v);
}

void read_source(Reader& r, const std::string& section, DataSource& src) {
  std::string kind;
  r.string(section + ".source", kind);
  if (!kind.empty()) {
    if (kind == "synthetic") src.kind = DataKind::synthetic;
    else if (kind == "idx") src.kind = DataKind::idx;
    else if (kind == "csv") src.kind = DataKind::csv;
    else throw ConfigError(section + ".source: unknown data source '" + kind + "'");
  }
  r.choice(section + ".generator", src.synth.kind, parse_generator);
  r.number(section + ".classes", src.synth.classes);
  r.number(section + ".per_class", src.synth.per_class);
  r.number(section + ".image_size", src.synth.image_size);
  r.number(section + ".noise", src.synth.noise);
  r.number(section + ".seed", src.synth.seed);
  std::string path;
  auto file = [&](const char* key, std::filesystem::path& out) {
    path.clear();
    r.string(section + "." + key, path);
    if (!path.empty()) out = path;
  };
  file("train_images", src.train_images);
  file("train_labels", src.train_labels);
  file("test_images", src.test_images);
  file("test_labels", src.test_labels);
  file("train_csv", src.train_csv);
  file("test_csv", src.test_csv);
  if (src.kind == DataKind::idx &&
      (src.train_images.empty() || src.train_labels.empty() || src.test_images.empty() || src.test_labels.empty())) {
    throw ConfigError(section + ": idx source needs train_images, train_labels, test_images, test_labels");
  }
  if (src.kind == DataKind::csv && (src.train_csv.empty() || src.test_csv.empty())) {
    throw ConfigError(section + ": csv source needs train_csv and test_csv");
  }
}

void read_optimizer(Reader& r, const std::string& prefix, OptimizerConfig& opt) {
  r.number(prefix + "lr", opt.lr);
  r.number(prefix + "momentum", opt.momentum);
  r.number(prefix + "weight_decay", opt.weight_decay);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig cfg = default_config();
  Reader r(tree);

  r.string("experiment.name", cfg.name);
  r.list("experiment.seeds", cfg.seeds, [](const std::string& s) {
    const Index v = parse_index(s);
    if (v < 0) throw std::invalid_argument("negative seed");
    return static_cast<std::uint64_t>(v);
  });
  r.string("experiment.model", cfg.model);
  r.number("experiment.canvas", cfg.canvas);
  r.number("experiment.channels", cfg.channels);
  r.list("experiment.methods", cfg.methods, [](const std::string& s) { return MethodEntry::parse(s); });
  r.list("experiment.sparsities", cfg.sparsities, parse_double);
  r.choice("experiment.granularity", cfg.granularity, parse_granularity);
  r.choice("experiment.scope", cfg.scope, parse_scope);
  std::string out;
  r.string("experiment.out", out);
  if (!out.empty()) cfg.out_dir = out;
  r.number("experiment.threads", cfg.threads);

  read_source(r, "upstream", cfg.upstream);
  read_source(r, "downstream", cfg.downstream);
  if (r.has_section("target")) {
    DataSource t = cfg.downstream;
    read_source(r, "target", t);
    cfg.target = t;
  }

  r.number("pretrain.epochs", cfg.pretrain_epochs);
  read_optimizer(r, "pretrain.", cfg.pretrain_opt);
  r.string("pretrain.checkpoint", cfg.pretrain_checkpoint);
  r.number("head.epochs", cfg.head_epochs);
  read_optimizer(r, "head.", cfg.head_opt);

  PruneMethod& b = cfg.base;
  r.number("pruning.batch_size", b.batch_size);
  r.number("pruning.score_lr", b.score_opt.lr);
  r.number("pruning.score_weight_decay", b.score_opt.weight_decay);
  r.number("pruning.prompt_lr", b.prompt_opt.lr);
  r.number("pruning.prompt_weight_decay", b.prompt_opt.weight_decay);
  r.number("pruning.weight_lr", b.weight_opt.lr);
  r.number("pruning.weight_momentum", b.weight_opt.momentum);
  r.number("pruning.weight_decay", b.weight_opt.weight_decay);
  r.number("pruning.synflow_iterations", b.synflow_iterations);
  r.flag("pruning.prompt_in_finding", b.prompt_in_finding);
  r.flag("pruning.prompt_in_tuning", b.prompt_in_tuning);

  Budgets& bud = cfg.budgets;
  r.number("budgets.vpns_find", bud.vpns_find);
  r.number("budgets.vpns_tune", bud.vpns_tune);
  r.number("budgets.hydra_find", bud.hydra_find);
  r.number("budgets.hydra_tune", bud.hydra_tune);
  r.number("budgets.oneshot_tune", bud.oneshot_tune);
  r.number("budgets.imp_round", bud.imp_round);

  b.prompt.canvas = cfg.canvas;
  b.prompt.channels = cfg.channels;
  b.prompt.input_size = cfg.canvas;
  r.choice("prompt.kind", b.prompt.kind, parse_prompt_kind);
  r.number("prompt.size", b.prompt.size);
  r.number("prompt.input_size", b.prompt.input_size);
  if (b.prompt.kind == PromptKind::none) b.prompt.size = 0;

  r.list("pilot.methods", cfg.pilot.methods, [](const std::string& s) { return MethodEntry::parse(s); });
  r.list("pilot.sparsities", cfg.pilot.sparsities, parse_double);
  r.list("pilot.modes", cfg.pilot.modes, [](const std::string& s) { return parse_pilot_mode(s); });
  r.number("pilot.prompt_epochs", cfg.pilot.prompt_epochs);

  r.number("ablation.sparsity", cfg.ablation.sparsity);
  r.list("ablation.input_sizes", cfg.ablation.input_sizes, parse_index);
  r.list("ablation.pad_sizes", cfg.ablation.pad_sizes, parse_index);
  r.list("ablation.kinds", cfg.ablation.kinds, [](const std::string& s) { return parse_prompt_kind(s); });
  r.flag("ablation.matched", cfg.ablation.matched);
  r.number("ablation.match_tolerance", cfg.ablation.match_tolerance);
  r.list("ablation.phases", cfg.ablation.phases, [](const std::string& s) { return s; });

  r.finish();
  if (cfg.upstream.kind == DataKind::synthetic) cfg.upstream.synth.channels = cfg.channels;
  if (cfg.downstream.kind == DataKind::synthetic) cfg.downstream.synth.channels = cfg.channels;
  if (cfg.target && cfg.target->kind == DataKind::synthetic) cfg.target->synth.channels = cfg.channels;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str());
  // Relative data paths resolve against the config file's directory.
  const auto base = path.parent_path();
  auto fix = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  for (DataSource* src : {&cfg.upstream, &cfg.downstream}) {
    fix(src->train_images), fix(src->train_labels), fix(src->test_images), fix(src->test_labels);
    fix(src->train_csv), fix(src->test_csv);
  }
  if (cfg.target) {
    fix(cfg.target->train_images), fix(cfg.target->train_labels), fix(cfg.target->test_images);
    fix(cfg.target->test_labels), fix(cfg.target->train_csv), fix(cfg.target->test_csv);
  }
  return cfg;
}

}  // namespace cosparse
