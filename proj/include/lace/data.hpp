#pragma once

// Dataset ingestion: IDX image files, CIFAR-10 binary batches, a synthetic
// Gaussian blob generator, plus stratified splits, train-statistics
// normalization, and the CIFAR crop/flip augmentation recipe.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lace/linalg.hpp"
#include "lace/rng.hpp"

namespace lace {

// Malformed file contents (bad magic, truncation, invalid label bytes).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AugmentKind { none, cifar };

struct Dataset {
  Matrix features;  // N x D, image rows flattened channel-major (C,H,W)
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::size_t img_c = 0, img_h = 0, img_w = 0;  // zero for flat data
  AugmentKind augment = AugmentKind::none;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

// IDX (FashionMNIST distribution format): big-endian headers, magic
// 0x00000803 for images and 0x00000801 for labels, pixels mapped to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::uint8_t>& pixels,
               const std::vector<std::uint8_t>& labels,
               std::size_t rows, std::size_t cols);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes.
Dataset load_cifar10_bin(const std::vector<std::string>& batch_paths);
void write_cifar10_bin(const std::string& path,
                       const std::vector<std::uint8_t>& records);

struct BlobSpec {
  std::size_t classes = 0;
  std::size_t dim = 0;
  std::size_t per_class = 0;
  Matrix means;  // classes x dim
  Matrix cov;    // dim x dim, SPD, shared across classes
  std::uint64_t seed = 0;
};

// Class c sampled from N(mean_c, cov) via the Cholesky factor; deterministic
// per seed. Throws std::invalid_argument when cov is not SPD.
Dataset make_blobs(const BlobSpec& spec);

struct SplitIndices {
  std::vector<std::size_t> train, val;
};

// Per-class proportional holdout, seeded. Every class needs >= 2 samples.
SplitIndices stratified_split(const std::vector<int>& labels, std::size_t num_classes,
                              double val_fraction, std::uint64_t seed);

struct ChannelStats {
  std::vector<double> mean, stdev;  // per image channel, or one entry for flat data
};

ChannelStats compute_channel_stats(const Dataset& ds,
                                   const std::vector<std::size_t>& indices);
void apply_channel_stats(Dataset& ds, const ChannelStats& stats);

// Ready-to-train split: stratified train/val rows, normalized by statistics
// of the train rows only. Apply `stats` to the test set before evaluating.
struct SplitDataset {
  Matrix train_x;
  std::vector<int> train_y;
  Matrix val_x;
  std::vector<int> val_y;
  std::size_t num_classes = 0;
  std::size_t img_c = 0, img_h = 0, img_w = 0;
  AugmentKind augment = AugmentKind::none;
  ChannelStats stats;
};

SplitDataset split_and_prepare(const Dataset& train, double val_fraction,
                               std::uint64_t seed);

// In-place horizontal mirror of one (C,H,W) image.
void flip_horizontal(double* img, std::size_t c, std::size_t h, std::size_t w);

// Gather training rows; under AugmentKind::cifar each image gets a pad-4
// reflect + random 32x32 crop + coin-flip horizontal mirror.
Matrix assemble_batch(const SplitDataset& split, const std::vector<std::size_t>& rows,
                      Rng& rng, bool augment_enabled);

// CSV with header "label,f0,...": the export format for embeddings and blobs.
void write_labeled_csv(const std::string& path, const Matrix& points,
                       const std::vector<int>& labels);
struct LabeledCsv {
  Matrix points;
  std::vector<int> labels;
};
LabeledCsv read_labeled_csv(const std::string& path);

// FNV-1a over the dataset tensors; recorded in run manifests.
std::uint64_t dataset_digest(const Dataset& ds);

}  // namespace lace
