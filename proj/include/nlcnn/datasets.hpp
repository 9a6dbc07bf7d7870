#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nlcnn/tensor.hpp"

namespace nlcnn {

// Images scaled to [0, 1] with integer class labels.
struct LabeledSet {
    Tensor4<float> images;
    std::vector<int> labels;
    std::size_t num_classes = 10;
    std::string name;

    std::size_t size() const noexcept { return labels.size(); }

    // First `count` samples (or all of them when count is 0 or too large).
    LabeledSet head(std::size_t count) const;

    // Gathers the given samples into a new batch tensor.
    Tensor4<float> gather(std::span<const std::size_t> indices) const;
};

enum class DatasetKind { idx, cifar10 };
enum class Split { train, test };

LabeledSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

LabeledSet load_cifar10(std::span<const std::filesystem::path> batch_paths);

// Standard file names inside `dir`: train-images-idx3-ubyte / t10k-* for IDX,
// data_batch_{1..5}.bin / test_batch.bin for CIFAR-10.
LabeledSet load_split(DatasetKind kind, const std::filesystem::path& dir, Split split);

// (n, 1, 1, num_classes) rows with a single 1.
Tensor4<float> one_hot(std::span<const int> labels, std::size_t num_classes);

// Byte-exact encoders (pixels are written as round(v * 255)).
std::vector<std::uint8_t> encode_idx_images(const LabeledSet& set);
std::vector<std::uint8_t> encode_idx_labels(const LabeledSet& set);
std::vector<std::uint8_t> encode_cifar10(const LabeledSet& set);

}  // namespace nlcnn
