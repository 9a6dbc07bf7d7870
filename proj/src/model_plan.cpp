#include "nlcnn/model_plan.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "nlcnn/kernels.hpp"

namespace nlcnn {

const char* to_string(LayerKind kind) noexcept {
    switch (kind) {
        case LayerKind::conv: return "conv2d";
        case LayerKind::sepconv: return "separable_conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool4x4s2";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::flatten: return "flatten";
        case LayerKind::gap: return "global_avg_pool";
        case LayerKind::dense: return "dense";
        case LayerKind::softmax: return "softmax";
    }
    return "?";
}

std::vector<std::size_t> ModelPlan::filters() const {
    std::vector<std::size_t> f;
    for (const auto& m : macro_layers) f.push_back(m.filters);
    return f;
}

std::size_t ModelPlan::dense_inputs() const {
    const MacroLayer& last = macro_layers.back();
    return head == Head::flatten ? last.filters * last.out_h * last.out_w : last.filters;
}

std::vector<std::size_t> filter_schedule(const HyperParams& hp) {
    const std::size_t count = hp.add_layer ? 4 : 3;
    std::vector<std::size_t> f{hp.width};
    for (std::size_t i = 1; i < count; ++i) {
        const double next = std::floor(hp.k * static_cast<double>(f.back()));
        f.push_back(next < 1.0 ? 0 : static_cast<std::size_t>(next));
    }
    return f;
}

void validate(const HyperParams& hp) {
    if (!(hp.k > 0.0) || !std::isfinite(hp.k)) throw ConfigError("k must be a positive finite number");
    if (hp.width < 1) throw ConfigError("width must be >= 1");
    if (hp.nl1 < 1 || hp.nl2 < 1) throw ConfigError("nl entries must be >= 1");
    if (hp.num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (hp.input_shape.c < 1) throw ConfigError("input must have at least one channel");
    if (hp.input_shape.h < 8 || hp.input_shape.w < 8)
        throw ConfigError("input spatial dims must be >= 8, got " + std::to_string(hp.input_shape.h) + "x" +
                          std::to_string(hp.input_shape.w));
    const auto f = filter_schedule(hp);
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] < 1)
            throw ConfigError("macro-layer " + std::to_string(i) + " resolves to " + std::to_string(f[i]) +
                              " filters (k=" + std::to_string(hp.k) + ", width=" + std::to_string(hp.width) + ")");
}

ModelPlan build_plan(const HyperParams& hp, BatchNormPlacement placement) {
    validate(hp);
    ModelPlan plan;
    plan.hp = hp;
    plan.bn_placement = placement;
    plan.head = hp.flat ? Head::flatten : Head::gap;

    const auto f = filter_schedule(hp);
    const ConvKind kind = hp.separ ? ConvKind::separable : ConvKind::normal;
    std::size_t h = hp.input_shape.h, w = hp.input_shape.w, c = hp.input_shape.c;

    for (std::size_t i = 0; i < f.size(); ++i) {
        const std::size_t convs = i == 0 ? hp.nl1 : (i == 1 ? hp.nl2 : 1);
        const std::size_t oh = pooled_extent(h), ow = pooled_extent(w);
        if (oh < 1 || ow < 1) throw ConfigError("macro-layer " + std::to_string(i) + " collapses below 1x1");
        plan.macro_layers.push_back({f[i], convs, kind, h, w, oh, ow});

        const int macro = static_cast<int>(i);
        for (std::size_t j = 0; j < convs; ++j) {
            plan.layers.push_back({kind == ConvKind::normal ? LayerKind::conv : LayerKind::sepconv, c, f[i], macro,
                                   Shape4{1, h, w, f[i]}});
            plan.layers.push_back({LayerKind::relu, f[i], f[i], macro, Shape4{1, h, w, f[i]}});
            c = f[i];
        }
        if (placement == BatchNormPlacement::before_pool)
            plan.layers.push_back({LayerKind::batchnorm, c, c, macro, Shape4{1, h, w, c}});
        plan.layers.push_back({LayerKind::maxpool, c, c, macro, Shape4{1, oh, ow, c}});
        if (placement == BatchNormPlacement::after_pool)
            plan.layers.push_back({LayerKind::batchnorm, c, c, macro, Shape4{1, oh, ow, c}});
        h = oh;
        w = ow;
    }

    const std::size_t features = plan.dense_inputs();
    plan.layers.push_back({plan.head == Head::flatten ? LayerKind::flatten : LayerKind::gap, c, features, -1,
                           Shape4{1, 1, 1, features}});
    plan.layers.push_back({LayerKind::dense, features, hp.num_classes, -1, Shape4{1, 1, 1, hp.num_classes}});
    plan.layers.push_back({LayerKind::softmax, hp.num_classes, hp.num_classes, -1, Shape4{1, 1, 1, hp.num_classes}});
    return plan;
}

ParamReport count_params(const ModelPlan& plan) {
    ParamReport r;
    std::size_t index = 0;
    for (const LayerSpec& l : plan.layers) {
        ParamRow row{std::string(to_string(l.kind)) + "_" + std::to_string(index++), l.kind, l.out_shape, 0, 0};
        switch (l.kind) {
            case LayerKind::conv:
                row.params = row.trainable = (9 * l.c_in + 1) * l.c_out;
                break;
            case LayerKind::sepconv:
                row.params = row.trainable = 9 * l.c_in + l.c_in * l.c_out + l.c_out;
                break;
            case LayerKind::batchnorm:
                row.params = 4 * l.c_out;
                row.trainable = 2 * l.c_out;
                break;
            case LayerKind::dense:
                row.params = row.trainable = (l.c_in + 1) * l.c_out;
                break;
            default:
                break;
        }
        r.trainable += row.trainable;
        r.non_trainable += row.params - row.trainable;
        r.total += row.params;
        r.rows.push_back(std::move(row));
    }
    r.macs = estimate_macs(plan);
    return r;
}

std::uint64_t estimate_macs(const ModelPlan& plan) {
    std::uint64_t macs = 0;
    for (const LayerSpec& l : plan.layers) {
        const std::uint64_t hw = l.out_shape.h * l.out_shape.w;
        switch (l.kind) {
            case LayerKind::conv: macs += hw * 9 * l.c_in * l.c_out; break;
            case LayerKind::sepconv: macs += hw * (9 * l.c_in + l.c_in * l.c_out); break;
            case LayerKind::dense: macs += std::uint64_t(l.c_in) * l.c_out; break;
            default: break;
        }
    }
    return macs;
}

namespace {

std::string shape_text(const Shape4& s) {
    return "(" + std::to_string(s.h) + ", " + std::to_string(s.w) + ", " + std::to_string(s.c) + ")";
}

}  // namespace

std::string format_report_text(const ModelPlan& plan, const ParamReport& report) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "layer" << std::setw(20) << "kind" << std::setw(18) << "out_shape"
       << std::right << std::setw(10) << "params" << '\n';
    os << std::string(72, '-') << '\n';
    for (const auto& row : report.rows)
        os << std::left << std::setw(24) << row.layer << std::setw(20) << to_string(row.kind) << std::setw(18)
           << shape_text(row.out_shape) << std::right << std::setw(10) << row.params << '\n';
    os << std::string(72, '-') << '\n';
    os << "total params:         " << report.total << '\n';
    os << "trainable params:     " << report.trainable << '\n';
    os << "non-trainable params: " << report.non_trainable << '\n';
    os << "MACs per sample:      " << report.macs << '\n';
    for (std::size_t i = 0; i < plan.macro_layers.size(); ++i) {
        const auto& m = plan.macro_layers[i];
        const std::size_t rf = receptive_field(m.conv_count);
        os << "macro-layer " << i << ": filters=" << m.filters << " nl=" << m.conv_count << " receptive_field=" << rf
           << "x" << rf << " spatial " << m.in_h << "x" << m.in_w << " -> " << m.out_h << "x" << m.out_w << '\n';
    }
    return os.str();
}

std::string format_report_csv(const ParamReport& report) {
    std::ostringstream os;
    os << "layer,kind,out_shape,params\n";
    for (const auto& row : report.rows)
        os << row.layer << ',' << to_string(row.kind) << ",\"" << shape_text(row.out_shape) << "\"," << row.params
           << '\n';
    return os.str();
}

}  // namespace nlcnn
