#include "cosparse/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace cosparse {

nlohmann::json RunRow::to_json() const {
  return {{"method", method},
          {"sparsity", sparsity},
          {"seed", seed},
          {"transfer", transfer},
          {"variant", variant},
          {"dense_acc", dense_acc},
          {"subnet_acc", subnet_acc},
          {"acc_without_prompt", acc_without_prompt},
          {"acc_with_prompt", acc_with_prompt},
          {"achieved_sparsity", achieved_sparsity},
          {"flops_speedup", flops_speedup},
          {"memory_reduction", memory_reduction},
          {"prompt_param_count", prompt_param_count},
          {"find_epochs", find_epochs},
          {"tune_epochs", tune_epochs},
          {"epochs_used", epochs_used},
          {"find_steps", find_steps},
          {"tune_steps", tune_steps},
          {"steps_used", steps_used},
          {"mask_digest", mask_digest},
          {"run_dir", run_dir},
          {"wall_time", wall_time},
          {"error", error}};
}

void RunReport::sort() {
  std::stable_sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
    return std::tie(a.method, a.sparsity, a.seed, a.transfer, a.variant) <
           std::tie(b.method, b.sparsity, b.seed, b.transfer, b.variant);
  });
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "method",          "sparsity",     "seed",         "transfer",           "variant",
      "dense_acc",       "subnet_acc",   "acc_without_prompt", "acc_with_prompt", "achieved_sparsity",
      "flops_speedup",   "memory_reduction", "prompt_param_count", "find_epochs", "tune_epochs",
      "epochs_used",     "find_steps",   "tune_steps",   "steps_used",         "mask_digest",
      "run_dir",         "wall_time",    "error"};
  return cols;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> csv_values(const RunRow& r) {
  return {csv_quote(r.method),
          fixed6(r.sparsity),
          std::to_string(r.seed),
          r.transfer ? "1" : "0",
          csv_quote(r.variant),
          fixed6(r.dense_acc),
          fixed6(r.subnet_acc),
          fixed6(r.acc_without_prompt),
          fixed6(r.acc_with_prompt),
          fixed6(r.achieved_sparsity),
          fixed6(r.flops_speedup),
          fixed6(r.memory_reduction),
          std::to_string(r.prompt_param_count),
          std::to_string(r.find_epochs),
          std::to_string(r.tune_epochs),
          std::to_string(r.epochs_used),
          std::to_string(r.find_steps),
          std::to_string(r.tune_steps),
          std::to_string(r.steps_used),
          r.mask_digest,
          csv_quote(r.run_dir),
          fixed6(r.wall_time),
          csv_quote(r.error)};
}

void write_atomically(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << body;
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void emit_report(const RunReport& report, const std::filesystem::path& path, ReportFormat format) {
  if (report.rows.empty()) throw std::invalid_argument("emit_report: empty report");
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    const auto& cols = report_columns();
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
    out << '\n';
    for (const auto& r : report.rows) {
      const auto vals = csv_values(r);
      for (std::size_t i = 0; i < vals.size(); ++i) out << (i ? "," : "") << vals[i];
      out << '\n';
    }
  } else {
    for (const auto& r : report.rows) out << r.to_json().dump() << '\n';
  }
  write_atomically(path, out.str());
}

RunReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read report " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("report " + path.string() + " has no header");
  const auto header = csv_fields(line);
  if (header != report_columns()) throw std::runtime_error("report " + path.string() + ": unexpected columns");
  RunReport report;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = csv_fields(line);
    if (f.size() != header.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " fields");
    }
    RunRow r;
    std::size_t i = 0;
    r.method = f[i++];
    r.sparsity = std::stod(f[i++]);
    r.seed = std::stoull(f[i++]);
    r.transfer = f[i++] == "1";
    r.variant = f[i++];
    r.dense_acc = std::stod(f[i++]);
    r.subnet_acc = std::stod(f[i++]);
    r.acc_without_prompt = std::stod(f[i++]);
    r.acc_with_prompt = std::stod(f[i++]);
    r.achieved_sparsity = std::stod(f[i++]);
    r.flops_speedup = std::stod(f[i++]);
    r.memory_reduction = std::stod(f[i++]);
    r.prompt_param_count = std::stoll(f[i++]);
    r.find_epochs = std::stoi(f[i++]);
    r.tune_epochs = std::stoi(f[i++]);
    r.epochs_used = std::stoi(f[i++]);
    r.find_steps = std::stol(f[i++]);
    r.tune_steps = std::stol(f[i++]);
    r.steps_used = std::stol(f[i++]);
    r.mask_digest = f[i++];
    r.run_dir = f[i++];
    r.wall_time = std::stod(f[i++]);
    r.error = f[i++];
    report.rows.push_back(std::move(r));
  }
  return report;
}

std::vector<CurvePoint> curves(const RunReport& report) {
  using Key = std::tuple<std::string, std::string, bool, double>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : report.rows) {
    if (!r.error.empty()) continue;
    groups[{r.method, r.variant, r.transfer, r.sparsity}].push_back(r.subnet_acc);
  }
  std::vector<CurvePoint> out;
  for (const auto& [key, accs] : groups) {
    CurvePoint p;
    std::tie(p.method, p.variant, p.transfer, p.sparsity) = key;
    p.n = static_cast<int>(accs.size());
    double sum = 0.0;
    for (double a : accs) sum += a;
    p.mean_acc = sum / p.n;
    if (p.n > 1) {
      double ss = 0.0;
      for (double a : accs) ss += (a - p.mean_acc) * (a - p.mean_acc);
      p.std_acc = std::sqrt(ss / (p.n - 1));
    }
    out.push_back(std::move(p));
  }
  return out;
}

void emit_curves(const RunReport& report, const std::filesystem::path& path) {
  if (report.rows.empty()) throw std::invalid_argument("emit_curves: empty report");
  std::ostringstream out;
  out << "method,variant,transfer,sparsity,n,mean_acc,std_acc\n";
  for (const auto& p : curves(report)) {
    out << csv_quote(p.method) << ',' << csv_quote(p.variant) << ',' << (p.transfer ? 1 : 0) << ','
        << fixed6(p.sparsity) << ',' << p.n << ',' << fixed6(p.mean_acc) << ',' << fixed6(p.std_acc) << '\n';
  }
  write_atomically(path, out.str());
}

void write_reports(const ExperimentConfig& cfg, const std::string& kind, const RunReport& report) {
  const auto dir = cfg.run_root() / kind;
  emit_report(report, dir / "report.csv", ReportFormat::csv);
  emit_report(report, dir / "report.jsonl", ReportFormat::jsonl);
  emit_curves(report, dir / "curves.csv");
}

// Artifacts

namespace {

nlohmann::json::array_t name_list(const std::vector<std::string>& names) {
  return nlohmann::json::array_t(names.begin(), names.end());
}

}  // namespace

void save_mask(const MaskState& mask, const ModelSpec& spec, const std::filesystem::path& path) {
  CheckpointFile file;
  file.spec_digest = spec_digest(spec);
  for (std::size_t i = 0; i < mask.names.size(); ++i) file.tensors.push_back({mask.names[i], mask.masks[i]});
  file.metadata = {{"kind", "mask"},
                   {"granularity", std::string(to_string(mask.granularity))},
                   {"scope", std::string(to_string(mask.scope))},
                   {"sparsity", mask.sparsity},
                   {"names", name_list(mask.names)},
                   {"spec", spec_to_json(spec)},
                   {"digest", mask_digest(mask)}};
  write_checkpoint(path, file);
}

MaskState load_mask(const std::filesystem::path& path) {
  const auto file = read_checkpoint(path);
  const auto& meta = file.metadata;
  if (meta.value("kind", "") != "mask") throw CheckpointError(path.string() + ": not a mask checkpoint");
  MaskState mask;
  try {
    mask.granularity = parse_granularity(meta.at("granularity").get<std::string>());
    mask.scope = parse_scope(meta.at("scope").get<std::string>());
    mask.sparsity = meta.at("sparsity").get<double>();
    mask.names = meta.at("names").get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": bad mask metadata (" + e.what() + ")");
  }
  for (const auto& name : mask.names) {
    const auto& t = file.tensor(name);
    for (Index i = 0; i < t.size(); ++i) {
      if (t[i] != 0.0f && t[i] != 1.0f) throw CheckpointError(path.string() + ": non-binary mask entry in " + name);
    }
    mask.masks.push_back(t);
  }
  if (meta.contains("digest") && meta["digest"].get<std::string>() != mask_digest(mask)) {
    throw CheckpointError(path.string() + ": mask digest mismatch");
  }
  return mask;
}

void save_scores(const ScoreSet& scores, const ModelSpec& spec, const std::filesystem::path& path) {
  CheckpointFile file;
  file.spec_digest = spec_digest(spec);
  for (std::size_t i = 0; i < scores.names.size(); ++i) {
    file.tensors.push_back({scores.names[i], scores.scores[i].value()});
  }
  file.metadata = {{"kind", "scores"},
                   {"granularity", std::string(to_string(scores.granularity))},
                   {"names", name_list(scores.names)}};
  write_checkpoint(path, file);
}

void save_prompt(const PromptState& prompt, const std::filesystem::path& path) {
  CheckpointFile file;
  file.tensors.push_back({"delta", prompt.delta.value()});
  file.tensors.push_back({"tunable_mask", prompt.tunable_mask});
  const auto& s = prompt.spec;
  file.metadata = {{"kind", "prompt"},
                   {"prompt_kind", std::string(to_string(s.kind))},
                   {"canvas", s.canvas},
                   {"input_size", s.input_size},
                   {"size", s.size},
                   {"channels", s.channels},
                   {"top", prompt.top()},
                   {"left", prompt.left()}};
  write_checkpoint(path, file);
}

PromptState load_prompt(const std::filesystem::path& path) {
  const auto file = read_checkpoint(path);
  const auto& meta = file.metadata;
  if (meta.value("kind", "") != "prompt") throw CheckpointError(path.string() + ": not a prompt checkpoint");
  PromptSpec spec;
  try {
    spec.kind = parse_prompt_kind(meta.at("prompt_kind").get<std::string>());
    spec.canvas = meta.at("canvas").get<Index>();
    spec.input_size = meta.at("input_size").get<Index>();
    spec.size = meta.at("size").get<Index>();
    spec.channels = meta.at("channels").get<Index>();
    spec.validate();
  } catch (const std::exception& e) {
    throw CheckpointError(path.string() + ": bad prompt metadata (" + e.what() + ")");
  }
  PromptState prompt = make_prompt(spec, 0);
  if (spec.kind == PromptKind::random) prompt.set_placement(meta.at("top").get<Index>(), meta.at("left").get<Index>());
  const auto& delta = file.tensor("delta");
  if (delta.shape() != prompt.delta.shape()) throw CheckpointError(path.string() + ": delta shape mismatch");
  prompt.delta.mutable_value() = delta;
  return prompt;
}

void write_log(const TrainLog& log, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& row : log) out << row.to_json().dump() << '\n';
  write_atomically(path, out.str());
}

TrainLog read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read log " + path.string());
  TrainLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) log.push_back(LogRow::from_json(nlohmann::json::parse(line)));
  }
  return log;
}

}  // namespace cosparse
