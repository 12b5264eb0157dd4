#include "cosparse/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace cosparse {

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

std::string_view to_string(Generator g) { return g == Generator::shapes ? "shapes" : "textures"; }

Generator parse_generator(std::string_view name) {
  if (name == "shapes") return Generator::shapes;
  if (name == "textures") return Generator::textures;
  throw std::invalid_argument("unknown generator '" + std::string(name) + "'");
}

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError(name + ": images must be N x C x h x w, got " + to_string(images.shape()));
  if (images.dim(0) != size()) {
    throw DataError(name + ": " + std::to_string(images.dim(0)) + " images but " + std::to_string(size()) +
                    " labels");
  }
  if (num_classes < 1) throw DataError(name + ": class count must be positive");
  for (Index i = 0; i < size(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes) {
      throw DataError(name + ": label " + std::to_string(y) + " at row " + std::to_string(i) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
  }
  for (Index i = 0; i < images.size(); ++i) {
    const float v = images[i];
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw DataError(name + ": pixel " + std::to_string(i) + " = " + std::to_string(v) + " outside [0, 1]");
    }
  }
}

Dataset Dataset::subset(const std::vector<Index>& indices) const {
  Dataset out;
  out.name = name;
  out.num_classes = num_classes;
  out.split = split;
  const Index plane = images.size() / std::max<Index>(size(), 1);
  Shape shape = images.shape();
  shape[0] = static_cast<Index>(indices.size());
  out.images = Tensorf(shape);
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Index i = indices[k];
    if (i < 0 || i >= size()) throw std::out_of_range("subset index " + std::to_string(i));
    out.images.values().segment(static_cast<Index>(k) * plane, plane) = images.values().segment(i * plane, plane);
    out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  }
  return out;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw std::invalid_argument("synthetic spec: need at least 2 classes, got " + std::to_string(classes));
  if (kind == Generator::shapes && classes > kShapeKinds) {
    throw std::invalid_argument("synthetic spec: shapes generator draws at most " + std::to_string(kShapeKinds) +
                                " classes");
  }
  if (per_class < 1) throw std::invalid_argument("synthetic spec: per_class must be >= 1");
  if (image_size < 4) throw std::invalid_argument("synthetic spec: image_size must be >= 4");
  if (channels < 1) throw std::invalid_argument("synthetic spec: channels must be >= 1");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("synthetic spec: noise must be >= 0");
}

std::string SyntheticSpec::tag() const {
  std::ostringstream os;
  os << to_string(kind) << "-K" << classes << "-s" << noise;
  return os.str();
}

namespace {

struct ShapeParams {
  double cx, cy, radius, angle, intensity;
};

// Point test in the shape's own frame, coordinates scaled so radius = 1.
bool inside_shape(int kind, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  switch (kind) {
    case 0: return u * u + v * v <= 1.0;                         // disk
    case 1: return au <= 0.8 && av <= 0.8;                       // square
    case 2: return v <= 0.6 && v >= 1.8 * au - 1.0;              // triangle, apex up
    case 3: { const double r2 = u * u + v * v; return r2 <= 1.0 && r2 >= 0.36; }  // ring
    case 4: return (au <= 1.0 && av <= 0.3) || (av <= 1.0 && au <= 0.3);  // plus
    case 5: return au + av <= 1.0;                               // diamond
    case 6: return au <= 1.0 && av <= 0.35;                      // bar
    case 7: return au <= 0.85 && av <= 0.85 && (au >= 0.5 || av >= 0.5);  // frame
  }
  return false;
}

// 2x2 supersampled coverage.
double shape_coverage(int kind, const ShapeParams& p, double x, double y) {
  const double c = std::cos(p.angle), s = std::sin(p.angle);
  int hits = 0;
  for (double oy : {0.25, 0.75}) {
    for (double ox : {0.25, 0.75}) {
      const double dx = x + ox - p.cx, dy = y + oy - p.cy;
      const double u = (c * dx + s * dy) / p.radius;
      const double v = (-s * dx + c * dy) / p.radius;
      hits += inside_shape(kind, u, v);
    }
  }
  return hits / 4.0;
}

void render(const SyntheticSpec& spec, int label, std::mt19937_64& rng, float* out) {
  const Index n = spec.image_size;
  const double size = static_cast<double>(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> plane(static_cast<std::size_t>(n * n));
  if (spec.kind == Generator::shapes) {
    ShapeParams p;
    p.cx = size / 2 + (unit(rng) - 0.5) * 0.3 * size;
    p.cy = size / 2 + (unit(rng) - 0.5) * 0.3 * size;
    p.radius = (0.25 + 0.15 * unit(rng)) * size;
    p.angle = (unit(rng) - 0.5) * 0.5;
    p.intensity = 0.6 + 0.4 * unit(rng);
    for (Index y = 0; y < n; ++y) {
      for (Index x = 0; x < n; ++x) {
        plane[static_cast<std::size_t>(y * n + x)] =
            p.intensity * shape_coverage(label, p, static_cast<double>(x), static_cast<double>(y));
      }
    }
  } else {
    const double theta = std::numbers::pi * label / spec.classes + (unit(rng) - 0.5) * 0.2;
    const double freq = 0.12 + 0.1 * unit(rng);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double contrast = 0.3 + 0.2 * unit(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (Index y = 0; y < n; ++y) {
      for (Index x = 0; x < n; ++x) {
        const double t = static_cast<double>(x) * ct + static_cast<double>(y) * st;
        plane[static_cast<std::size_t>(y * n + x)] =
            0.5 + contrast * std::sin(2.0 * std::numbers::pi * freq * t + phase);
      }
    }
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index ch = 0; ch < spec.channels; ++ch) {
    for (Index k = 0; k < n * n; ++k) {
      double v = plane[static_cast<std::size_t>(k)];
      if (spec.noise > 0.0) v += spec.noise * gauss(rng);
      out[ch * n * n + k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
}

}  // namespace

DatasetPair synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  const std::uint64_t salt = spec.kind == Generator::shapes ? 0x5348415045ULL : 0x54455854ULL;
  std::mt19937_64 rng(spec.seed ^ (salt * 0x9E3779B97F4A7C15ULL));
  const Index plane = spec.channels * spec.image_size * spec.image_size;
  const Index total = spec.per_class * spec.classes;

  std::vector<float> pixels(static_cast<std::size_t>(total * plane));
  std::vector<int> labels;
  std::vector<bool> is_test;
  for (Index r = 0; r < spec.per_class; ++r) {
    for (int k = 0; k < spec.classes; ++k) {
      render(spec, k, rng, pixels.data() + static_cast<Index>(labels.size()) * plane);
      labels.push_back(k);
      is_test.push_back(r % 5 == 4);
    }
  }

  auto take = [&](bool test) {
    Dataset ds;
    ds.name = spec.tag();
    ds.num_classes = spec.classes;
    ds.split = test ? Split::test : Split::train;
    const Index count = std::count(is_test.begin(), is_test.end(), test);
    ds.images = Tensorf({count, spec.channels, spec.image_size, spec.image_size});
    Index row = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (is_test[i] != test) continue;
      std::copy_n(pixels.data() + static_cast<Index>(i) * plane, plane, ds.images.data() + row * plane);
      ds.labels.push_back(labels[i]);
      ++row;
    }
    return ds;
  };
  return {take(false), take(true)};
}

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::string& what) {
  if (at + 4 > b.size()) throw DataError(what + ": truncated header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, Split split) {
  const auto ib = read_all(images);
  const auto lb = read_all(labels);
  const std::string iname = images.filename().string(), lname = labels.filename().string();

  const auto imagic = be32(ib, 0, iname);
  if (imagic != 0x00000803u) {
    throw DataError(iname + ": bad image magic 0x" + [&] { std::ostringstream os; os << std::hex << imagic; return os.str(); }());
  }
  const auto lmagic = be32(lb, 0, lname);
  if (lmagic != 0x00000801u) {
    throw DataError(lname + ": bad label magic 0x" + [&] { std::ostringstream os; os << std::hex << lmagic; return os.str(); }());
  }
  const Index n = be32(ib, 4, iname), rows = be32(ib, 8, iname), cols = be32(ib, 12, iname);
  const Index nl = be32(lb, 4, lname);
  if (n != nl) {
    throw DataError("image/label count mismatch: " + std::to_string(n) + " images, " + std::to_string(nl) + " labels");
  }
  if (static_cast<Index>(ib.size()) - 16 != n * rows * cols) {
    throw DataError(iname + ": expected " + std::to_string(n * rows * cols) + " pixel bytes, found " +
                    std::to_string(static_cast<Index>(ib.size()) - 16));
  }
  if (static_cast<Index>(lb.size()) - 8 != n) {
    throw DataError(lname + ": expected " + std::to_string(n) + " label bytes, found " +
                    std::to_string(static_cast<Index>(lb.size()) - 8));
  }

  Dataset ds;
  ds.name = images.stem().string();
  ds.split = split;
  ds.images = Tensorf({n, 1, rows, cols});
  for (Index i = 0; i < n * rows * cols; ++i) ds.images[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  int max_label = 0;
  for (Index i = 0; i < n; ++i) {
    ds.labels.push_back(lb[8 + i]);
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.num_classes = max_label + 1;
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, Split split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string fname = path.filename().string();

  auto fields = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
  };
  auto number = [&](const std::string& f, Index line_no) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(f, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0) throw DataError(fname + ":" + std::to_string(line_no) + ": not a number '" + f + "'");
    return v;
  };

  std::string line;
  if (!std::getline(in, line)) throw DataError(fname + ": missing header line");
  const auto header = fields(line);
  if (header.size() != 4) throw DataError(fname + ": header must be h,w,c,K");
  std::array<Index, 4> dims{};
  for (std::size_t k = 0; k < 4; ++k) {
    const double v = number(header[k], 1);
    if (v < 1 || v != std::floor(v)) throw DataError(fname + ": header field " + header[k] + " is not a positive integer");
    dims[k] = static_cast<Index>(v);
  }
  const auto [h, w, c, classes] = dims;
  const Index plane = h * w * c;

  std::vector<float> pixels;
  std::vector<int> labels;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto row = fields(line);
    if (static_cast<Index>(row.size()) != plane + 1) {
      throw DataError(fname + ":" + std::to_string(line_no) + ": expected " + std::to_string(plane + 1) +
                      " fields, found " + std::to_string(row.size()));
    }
    const double y = number(row[0], line_no);
    if (y != std::floor(y) || y < 0 || y >= static_cast<double>(classes)) {
      throw DataError(fname + ":" + std::to_string(line_no) + ": label " + row[0] + " outside [0, K)");
    }
    labels.push_back(static_cast<int>(y));
    for (Index k = 1; k <= plane; ++k) {
      const double v = number(row[static_cast<std::size_t>(k)], line_no);
      if (!(v >= 0.0 && v <= 255.0)) {
        throw DataError(fname + ":" + std::to_string(line_no) + ": pixel " + row[static_cast<std::size_t>(k)] +
                        " outside [0, 255]");
      }
      pixels.push_back(static_cast<float>(v / 255.0));
    }
  }

  Dataset ds;
  ds.name = path.stem().string();
  ds.split = split;
  ds.num_classes = static_cast<int>(classes);
  const Index n = static_cast<Index>(labels.size());
  ds.images = Tensorf({n, c, h, w}, Eigen::Map<const Eigen::VectorXf>(pixels.data(), static_cast<Index>(pixels.size())));
  ds.labels = std::move(labels);
  return ds;
}

Index batch_count(Index n, Index batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  return (n + batch_size - 1) / batch_size;
}

std::vector<Index> epoch_order(Index n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0xB47C4u};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<Batch> batches(const Dataset& ds, Index batch_size, std::uint64_t seed, std::uint64_t epoch) {
  const Index n = ds.size();
  const Index count = batch_count(n, batch_size);
  const auto order = epoch_order(n, seed, epoch);
  std::vector<Batch> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index b = 0; b < count; ++b) {
    const auto first = order.begin() + b * batch_size;
    const auto last = order.begin() + std::min(n, (b + 1) * batch_size);
    std::vector<Index> idx(first, last);
    Dataset part = ds.subset(idx);
    out.push_back({std::move(part.images), std::move(part.labels), std::move(idx)});
  }
  return out;
}

}  // namespace cosparse
