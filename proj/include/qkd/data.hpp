#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qkd/tensor.hpp"

namespace qkd {

struct Dataset {
  Tensor inputs;  // N x dim or N x C x H x W
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_numel() const { return size() ? inputs.size() / size() : 0; }
  Tensor gather(const std::vector<std::size_t>& indices) const;
  std::vector<int> gather_labels(const std::vector<std::size_t>& indices) const;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

enum class DatasetKind { IdxImages, CifarBinary, SyntheticGaussianClusters };
enum class Normalization { None, MeanStd, MinMax };

struct DatasetDescriptor {
  DatasetKind kind = DatasetKind::SyntheticGaussianClusters;
  int num_classes = 10;

  // idx-images / cifar-binary file paths
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::string> train_batches, test_batches;

  // synthetic-gaussian-clusters generator parameters; the dataset has its
  // own seed so every run of an ablation shares one problem instance
  int train_samples = 4000;
  int test_samples = 2000;
  int dim = 16;
  double spread = 0.28;
  std::uint64_t data_seed = 42;

  // Normalization; constants are computed from the training split on load
  // and written back here so a run's config records them.
  Normalization norm = Normalization::MinMax;
  double norm_a = 0.0;  // mean or min
  double norm_b = 1.0;  // std or max
};

// IDX (big-endian dims, unsigned-byte payload). Pixels are scaled to [0,1].
Tensor load_idx_images(const std::string& path);
std::vector<int> load_idx_labels(const std::string& path);

// CIFAR binary: records of 1 label byte + 3072 pixel bytes (RGB planes,
// 32x32 row-major). Pixels scaled to [0,1].
Dataset load_cifar_binary(const std::vector<std::string>& paths, int num_classes);

// Gaussian clusters, one per class, deterministic per seed. Train and test
// are disjoint draws from the same class-conditional distributions.
DatasetPair gen_synthetic(const DatasetDescriptor& desc, std::uint64_t seed);

// Loads per descriptor, computes normalization constants from the train
// split (writing them back into `desc`), and applies them to both splits.
// Synthetic data uses desc.data_seed, never a run seed.
DatasetPair load_dataset(DatasetDescriptor& desc);

std::string to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(const std::string& s);
std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

}  // namespace qkd
