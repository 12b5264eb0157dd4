#pragma once

#include "cosparse/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cosparse {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Split { train, test };

std::string_view to_string(Split split);

/// Labelled images, N x C x h x w with values in [0, 1].
struct Dataset {
  std::string name;
  Tensorf images;
  std::vector<int> labels;
  int num_classes = 0;
  Split split = Split::train;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index channels() const { return images.dim(1); }
  Index height() const { return images.dim(2); }
  Index width() const { return images.dim(3); }

  /// Throws DataError on out-of-range labels, non-finite or out-of-[0,1]
  /// values, or an image/label count mismatch.
  void validate() const;
  /// Rows `indices` in the given order.
  Dataset subset(const std::vector<Index>& indices) const;
};

enum class Generator { shapes, textures };

std::string_view to_string(Generator g);
Generator parse_generator(std::string_view name);

struct SyntheticSpec {
  Generator kind = Generator::shapes;
  int classes = 4;
  Index per_class = 100;
  Index image_size = 32;
  Index channels = 1;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  /// e.g. "shapes-K4-s0.1".
  std::string tag() const;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// Renders `per_class` samples per class. Samples are generated in class
/// round-robin order; every fifth sample goes to the test split, so both
/// splits are exactly balanced whenever per_class is a multiple of 5.
DatasetPair synth_generate(const SyntheticSpec& spec);

/// Number of shape classes the shapes generator can draw.
inline constexpr int kShapeKinds = 8;

/// IDX (MNIST layout): images magic 0x00000803 with dims n, rows, cols;
/// labels magic 0x00000801 with dim n. Bytes are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split = Split::train);

/// Header line "h,w,c,K" then one "label,pixel,..." row per sample with
/// h*w*c pixels in channel-major order, each in [0, 255].
Dataset load_csv(const std::filesystem::path& path, Split split = Split::train);

struct Batch {
  Tensorf images;
  std::vector<int> labels;
  std::vector<Index> indices;
};

/// ceil(n / batch_size); throws std::invalid_argument for batch_size < 1.
Index batch_count(Index n, Index batch_size);

/// Shuffled mini-batches keyed by (seed, epoch); the last batch may be short.
std::vector<Batch> batches(const Dataset& ds, Index batch_size, std::uint64_t seed, std::uint64_t epoch);

/// Permutation used by batches().
std::vector<Index> epoch_order(Index n, std::uint64_t seed, std::uint64_t epoch);

}  // namespace cosparse
