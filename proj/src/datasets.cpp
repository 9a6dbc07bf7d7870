#include "nlcnn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "nlcnn/error.hpp"

namespace nlcnn {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string(), 0);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& what) {
    if (offset + 4 > buf.size()) throw FormatError(what + ": truncated header", buf.size());
    return (std::uint32_t(buf[offset]) << 24) | (std::uint32_t(buf[offset + 1]) << 16) |
           (std::uint32_t(buf[offset + 2]) << 8) | std::uint32_t(buf[offset + 3]);
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v >> 24));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v));
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

LabeledSet LabeledSet::head(std::size_t count) const {
    if (count == 0 || count >= size()) return *this;
    const Shape4 s = images.shape();
    std::vector<float> data(images.data(), images.data() + count * s.sample_size());
    return {Tensor4<float>(Shape4{count, s.h, s.w, s.c}, std::move(data)),
            std::vector<int>(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(count)), num_classes, name};
}

Tensor4<float> LabeledSet::gather(std::span<const std::size_t> indices) const {
    const Shape4 s = images.shape();
    Tensor4<float> out(Shape4{indices.size(), s.h, s.w, s.c});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto src = images.sample(indices[i]);
        std::copy(src.begin(), src.end(), out.sample(i).begin());
    }
    return out;
}

LabeledSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto img = read_file(images_path);
    const auto lab = read_file(labels_path);
    const std::string img_name = images_path.filename().string();
    const std::string lab_name = labels_path.filename().string();

    if (const auto magic = read_be32(img, 0, img_name); magic != kIdxImagesMagic)
        throw FormatError(img_name + ": bad IDX image magic " + std::to_string(magic), 0);
    const std::size_t n = read_be32(img, 4, img_name);
    const std::size_t h = read_be32(img, 8, img_name);
    const std::size_t w = read_be32(img, 12, img_name);
    if (n == 0 || h == 0 || w == 0) throw FormatError(img_name + ": zero dimension in IDX header", 4);
    const std::size_t payload = n * h * w;
    if (img.size() < 16 + payload)
        throw FormatError(img_name + ": truncated payload, expected " + std::to_string(payload) + " pixel bytes",
                          img.size());
    if (img.size() > 16 + payload) throw FormatError(img_name + ": trailing bytes after payload", 16 + payload);

    if (const auto magic = read_be32(lab, 0, lab_name); magic != kIdxLabelsMagic)
        throw FormatError(lab_name + ": bad IDX label magic " + std::to_string(magic), 0);
    const std::size_t n_labels = read_be32(lab, 4, lab_name);
    if (n_labels != n)
        throw FormatError(lab_name + ": " + std::to_string(n_labels) + " labels for " + std::to_string(n) + " images",
                          4);
    if (lab.size() < 8 + n) throw FormatError(lab_name + ": truncated label payload", lab.size());
    if (lab.size() > 8 + n) throw FormatError(lab_name + ": trailing bytes after payload", 8 + n);

    LabeledSet set{Tensor4<float>(n, h, w, 1), std::vector<int>(n), 10, img_name};
    for (std::size_t i = 0; i < payload; ++i) set.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
    for (std::size_t i = 0; i < n; ++i) {
        set.labels[i] = lab[8 + i];
        if (lab[8 + i] >= set.num_classes)
            throw FormatError(lab_name + ": label " + std::to_string(lab[8 + i]) + " out of range", 8 + i);
    }
    return set;
}

LabeledSet load_cifar10(std::span<const std::filesystem::path> batch_paths) {
    std::vector<std::vector<std::uint8_t>> files;
    std::size_t n = 0;
    for (const auto& path : batch_paths) {
        files.push_back(read_file(path));
        const std::size_t bytes = files.back().size();
        if (bytes % kCifarRecord != 0)
            throw FormatError(path.filename().string() + ": length " + std::to_string(bytes) +
                                  " is not a multiple of " + std::to_string(kCifarRecord),
                              bytes - bytes % kCifarRecord);
        n += bytes / kCifarRecord;
    }
    if (n == 0) throw ConfigError("CIFAR-10 input contains no records");

    constexpr std::size_t plane = kCifarSide * kCifarSide;
    LabeledSet set{Tensor4<float>(n, kCifarSide, kCifarSide, 3), std::vector<int>(n), 10, "cifar10"};
    std::size_t b = 0;
    for (std::size_t f = 0; f < files.size(); ++f) {
        const auto& buf = files[f];
        for (std::size_t off = 0; off < buf.size(); off += kCifarRecord, ++b) {
            if (buf[off] >= 10)
                throw FormatError(batch_paths[f].filename().string() + ": label " + std::to_string(buf[off]) +
                                      " out of range",
                                  off);
            set.labels[b] = buf[off];
            float* dst = set.images.sample(b).data();
            for (std::size_t ch = 0; ch < 3; ++ch)
                for (std::size_t p = 0; p < plane; ++p)
                    dst[p * 3 + ch] = static_cast<float>(buf[off + 1 + ch * plane + p]) / 255.0f;
        }
    }
    return set;
}

LabeledSet load_split(DatasetKind kind, const std::filesystem::path& dir, Split split) {
    if (!std::filesystem::is_directory(dir)) throw FormatError("data directory " + dir.string() + " not found", 0);
    if (kind == DatasetKind::idx) {
        const std::string prefix = split == Split::train ? "train" : "t10k";
        auto set = load_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
        set.name = dir.filename().string() + "/" + prefix;
        return set;
    }
    std::vector<std::filesystem::path> paths;
    if (split == Split::train)
        for (int i = 1; i <= 5; ++i) paths.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    else
        paths.push_back(dir / "test_batch.bin");
    auto set = load_cifar10(paths);
    set.name = split == Split::train ? "cifar10/train" : "cifar10/test";
    return set;
}

Tensor4<float> one_hot(std::span<const int> labels, std::size_t num_classes) {
    Tensor4<float> out(labels.size(), 1, 1, num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw InvalidInput("one_hot: label " + std::to_string(labels[i]) + " out of range");
        out(i, 0, 0, static_cast<std::size_t>(labels[i])) = 1.0f;
    }
    return out;
}

std::vector<std::uint8_t> encode_idx_images(const LabeledSet& set) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + set.images.size());
    put_be32(out, kIdxImagesMagic);
    put_be32(out, static_cast<std::uint32_t>(set.images.n()));
    put_be32(out, static_cast<std::uint32_t>(set.images.h()));
    put_be32(out, static_cast<std::uint32_t>(set.images.w()));
    for (float v : set.images.values()) out.push_back(to_byte(v));
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(const LabeledSet& set) {
    std::vector<std::uint8_t> out;
    put_be32(out, kIdxLabelsMagic);
    put_be32(out, static_cast<std::uint32_t>(set.labels.size()));
    for (int l : set.labels) out.push_back(static_cast<std::uint8_t>(l));
    return out;
}

std::vector<std::uint8_t> encode_cifar10(const LabeledSet& set) {
    constexpr std::size_t plane = kCifarSide * kCifarSide;
    std::vector<std::uint8_t> out;
    out.reserve(set.size() * kCifarRecord);
    for (std::size_t b = 0; b < set.size(); ++b) {
        out.push_back(static_cast<std::uint8_t>(set.labels[b]));
        const float* src = set.images.sample(b).data();
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t p = 0; p < plane; ++p) out.push_back(to_byte(src[p * 3 + ch]));
    }
    return out;
}

}  // namespace nlcnn
