#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mdcpc/params.hpp"
#include "mdcpc/tensor.hpp"

namespace mdcpc {

// Square RGB image, pixels stored row-major as (y, x, channel).
struct ImageSample {
  int size = 0;
  std::vector<std::uint8_t> pixels;
  std::optional<int> label;
  std::string id;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c];
  }
  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * size + x) * 3 + c];
  }
};

struct DatasetMetadata {
  int image_size = 0;
  std::vector<std::string> class_names;
  std::string source;
};

struct DatasetStore {
  std::vector<ImageSample> train;
  std::vector<ImageSample> valid;
  std::vector<ImageSample> test;
  DatasetMetadata metadata;

  // name is one of "train", "valid", "test".
  const std::vector<ImageSample>& split(std::string_view name) const;
  std::vector<ImageSample>& split(std::string_view name);
  std::size_t total() const { return train.size() + valid.size() + test.size(); }

  // Checks square/size/label invariants and id disjointness across splits.
  void validate(bool require_labels = false) const;
};

// Published PatchCamelyon split sizes.
inline constexpr std::size_t kPcamTrainSize = 262'144;
inline constexpr std::size_t kPcamValidSize = 32'768;
inline constexpr std::size_t kPcamTestSize = 32'768;
inline constexpr int kPcamImageSize = 96;

// Name of one of the six PCam HDF5 files, e.g. ("test", 'y') ->
// camelyonpatch_level_2_split_test_y.h5
std::string pcam_file_name(std::string_view split, char kind);

// Reads the PCam HDF5 sextet from dir. Throws IngestionError naming the first
// missing or unreadable file and FormatError on shape mismatches.
DatasetStore load_pcam(const std::filesystem::path& dir);

// Two-class texture dataset: each image is a sum of sinusoidal gratings with
// uniformly random orientation and phase, whose spatial frequency is drawn
// from a class-specific band. Split 60/20/20 per class.
DatasetStore generate_synthetic(int n_per_class, int image_size, std::uint64_t seed);

// Element of the dihedral group of the square: element % 4 clockwise quarter
// turns, followed by a horizontal flip when element >= 4.
ImageSample apply_dihedral(const ImageSample& image, int element);
inline constexpr int kDihedralElements = 8;

int draw_dihedral_element(Rng& rng);
ImageSample augment(const ImageSample& image, std::uint64_t seed);
ImageSample augment(const ImageSample& image, Rng& rng);

// Stratified draw without replacement from the train split. Class counts
// differ by at most one whenever both classes hold enough samples.
std::vector<std::string> sample_label_subset(const DatasetStore& store, int n, std::uint64_t seed);

// Carves round(fraction * |train|) samples out of train into valid. Any
// existing valid split is replaced.
DatasetStore split_train_val(const DatasetStore& store, double fraction, std::uint64_t seed);

// Directory of PNG files plus manifest.csv with columns id,split,label.
void export_png_dataset(const DatasetStore& store, const std::filesystem::path& dir);
DatasetStore import_png_dataset(const std::filesystem::path& dir);

// Dispatches on directory contents: PCam sextet or PNG manifest.
DatasetStore load_dataset(const std::filesystem::path& dir);

// Stacks images into an [N,H,W,3] tensor scaled to [0,1].
Tensor images_to_tensor(const std::vector<const ImageSample*>& images);

// PNG helpers.
void write_png(const std::filesystem::path& path, const ImageSample& image);
ImageSample read_png(const std::filesystem::path& path);

}  // namespace mdcpc
