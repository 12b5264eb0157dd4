#include "cosparse/checkpoint.hpp"

#include "cosparse/digest.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cosparse {
namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'C', 'S', 'P', 'K'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
    }
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    if (n > in_.size() - pos_) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T le(const char* what) {
    auto b = bytes(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<T>(v);
  }
  float f32(const char* what) { return std::bit_cast<float>(le<std::uint32_t>(what)); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensorf& CheckpointFile::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

bool CheckpointFile::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.le<std::uint32_t>(kCheckpointVersion);
  w.bytes(file.spec_digest.data(), file.spec_digest.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.le<std::uint8_t>(kDtypeF32);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.value.rank()));
    for (Index d : t.value.shape()) w.le<std::uint64_t>(static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.value.size(); ++i) w.f32(t.value[i]);
  }
  const std::string meta = file.metadata.dump();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  return w.take();
}

CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) {
    throw CheckpointError("not a checkpoint: bad magic bytes");
  }
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  CheckpointFile file;
  auto digest = r.bytes(32, "spec digest");
  std::copy(digest.begin(), digest.end(), file.spec_digest.begin());
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = r.le<std::uint32_t>("name length");
    auto name_bytes = r.bytes(name_len, "tensor name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) {
      throw CheckpointError("tensor '" + name + "' has unsupported dtype tag " + std::to_string(dtype));
    }
    const auto rank = r.le<std::uint32_t>("rank");
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.le<std::uint64_t>("dims");
      if (dim != 0 && n > r.remaining() / dim) {
        throw CheckpointError("checkpoint truncated inside tensor '" + name + "'");
      }
      n *= dim;
      shape.push_back(static_cast<Index>(dim));
    }
    if (n * 4 > r.remaining()) {
      throw CheckpointError("checkpoint truncated inside tensor '" + name + "'");
    }
    Tensorf value(shape);
    for (Index i = 0; i < value.size(); ++i) value[i] = r.f32("values");
    file.tensors.push_back({std::move(name), std::move(value)});
  }
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  auto meta = r.bytes(meta_len, "metadata");
  if (r.remaining() != 0) throw CheckpointError("trailing bytes after checkpoint metadata");
  try {
    file.metadata = nlohmann::json::parse(meta.begin(), meta.end());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  return file;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  const auto bytes = encode_checkpoint(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write to '" + path.string() + "' failed");
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  CheckpointFile file;
  file.spec_digest = spec_digest(state.spec);
  for (const auto& p : state.params) file.tensors.push_back({p.name, p.tensor.value()});
  file.metadata = metadata.is_object() ? metadata : nlohmann::json::object();
  file.metadata["spec"] = spec_to_json(state.spec);
  file.metadata["prunable"] = state.prunable;
  write_checkpoint(path, file);
}

namespace {

ModelState model_from_file(const CheckpointFile& file) {
  if (!file.metadata.contains("spec")) throw CheckpointError("checkpoint carries no model spec");
  ModelSpec spec;
  try {
    spec = spec_from_json(file.metadata.at("spec"));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint model spec is malformed: ") + e.what());
  }
  if (spec_digest(spec) != file.spec_digest) {
    throw CheckpointError("checkpoint spec digest does not match its embedded spec");
  }
  // Rebuild the parameter layout from the spec and require a 1:1 match.
  ModelState state = build_model(spec, 0);
  if (state.params.size() != file.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(file.tensors.size()) +
                          " tensors, spec expects " + std::to_string(state.params.size()));
  }
  for (auto& p : state.params) {
    const Tensorf& t = file.tensor(p.name);
    if (t.shape() != p.tensor.shape()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + to_string(t.shape()) +
                            ", spec expects " + to_string(p.tensor.shape()));
    }
    p.tensor.mutable_value() = t;
  }
  return state;
}

}  // namespace

ModelState load_checkpoint(const std::filesystem::path& path) {
  return model_from_file(read_checkpoint(path));
}

ModelState load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  auto file = read_checkpoint(path);
  if (file.spec_digest != spec_digest(expected)) {
    throw CheckpointError("checkpoint '" + path.string() + "' was written for a different model (" +
                          to_hex(file.spec_digest) + " vs " + to_hex(spec_digest(expected)) + ")");
  }
  return model_from_file(file);
}

}  // namespace cosparse
