#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "nlcnn/tensor.hpp"

namespace nlcnn {

struct InputShape {
    std::size_t h = 28;
    std::size_t w = 28;
    std::size_t c = 1;

    friend bool operator==(const InputShape&, const InputShape&) = default;
};

// The NL-CNN knobs: filter expansion k, first-layer width, cascade depths of
// the first two macro-layers, separable convolutions, flatten vs global
// average head, and an optional fourth macro-layer.
struct HyperParams {
    InputShape input_shape;
    std::size_t num_classes = 10;
    double k = 1.5;
    std::size_t width = 80;
    std::size_t nl1 = 2;
    std::size_t nl2 = 2;
    bool separ = false;
    bool flat = false;
    bool add_layer = false;

    friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

enum class ConvKind { normal, separable };
enum class Head { flatten, gap };
enum class BatchNormPlacement { after_pool, before_pool };
enum class LayerKind { conv, sepconv, relu, maxpool, batchnorm, flatten, gap, dense, softmax };

const char* to_string(LayerKind kind) noexcept;

struct LayerSpec {
    LayerKind kind;
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    // Index of the owning macro-layer, or -1 for the head.
    int macro = -1;
    // Per-sample output shape (n = 1).
    Shape4 out_shape;
};

struct MacroLayer {
    std::size_t filters;
    std::size_t conv_count;
    ConvKind conv_kind;
    // Input and output spatial extents.
    std::size_t in_h, in_w, out_h, out_w;
};

struct ModelPlan {
    HyperParams hp;
    BatchNormPlacement bn_placement = BatchNormPlacement::after_pool;
    std::vector<MacroLayer> macro_layers;
    Head head = Head::flatten;
    std::vector<LayerSpec> layers;

    std::vector<std::size_t> filters() const;
    std::size_t dense_inputs() const;
};

struct ParamRow {
    std::string layer;
    LayerKind kind;
    Shape4 out_shape;
    std::size_t params = 0;
    std::size_t trainable = 0;
};

struct ParamReport {
    std::vector<ParamRow> rows;
    std::size_t trainable = 0;
    std::size_t non_trainable = 0;
    std::size_t total = 0;
    std::uint64_t macs = 0;
};

// Checks the HyperParams invariants; throws ConfigError.
void validate(const HyperParams& hp);

// f_0 = width, f_{i+1} = floor(k * f_i), for 3 (+1 with add_layer) macro-layers.
std::vector<std::size_t> filter_schedule(const HyperParams& hp);

ModelPlan build_plan(const HyperParams& hp, BatchNormPlacement placement = BatchNormPlacement::after_pool);

ParamReport count_params(const ModelPlan& plan);

std::uint64_t estimate_macs(const ModelPlan& plan);

// Side of the square input neighbourhood seen by one macro-layer output pixel.
constexpr std::size_t receptive_field(std::size_t nl) noexcept { return 3 + 2 * (nl - 1); }

std::string format_report_text(const ModelPlan& plan, const ParamReport& report);
std::string format_report_csv(const ParamReport& report);

}  // namespace nlcnn
