#include "nlcnn/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace nlcnn {

namespace {

constexpr char kMagic[4] = {'N', 'L', 'C', 'W'};
constexpr std::size_t kPrefixBytes = 4 + 2 + 4;

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

std::uint32_t payload_crc(const std::uint8_t* bytes, std::size_t len) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in bounded pieces.
    while (len > 0) {
        const std::size_t piece = std::min<std::size_t>(len, 1u << 30);
        crc = crc32(crc, bytes, static_cast<uInt>(piece));
        bytes += piece;
        len -= piece;
    }
    return static_cast<std::uint32_t>(crc);
}

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& buf, std::size_t offset) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf[offset + i]) << (8 * i));
    return v;
}

}  // namespace

nlohmann::json hyperparams_to_json(const HyperParams& hp) {
    return {
        {"input_shape", {hp.input_shape.h, hp.input_shape.w, hp.input_shape.c}},
        {"num_classes", hp.num_classes},
        {"k", hp.k},
        {"width", hp.width},
        {"nl", {hp.nl1, hp.nl2}},
        {"separ", hp.separ},
        {"flat", hp.flat},
        {"add_layer", hp.add_layer},
    };
}

HyperParams hyperparams_from_json(const nlohmann::json& j) {
    HyperParams hp;
    const auto& in = j.at("input_shape");
    hp.input_shape = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
    hp.num_classes = j.at("num_classes").get<std::size_t>();
    hp.k = j.at("k").get<double>();
    hp.width = j.at("width").get<std::size_t>();
    hp.nl1 = j.at("nl").at(0).get<std::size_t>();
    hp.nl2 = j.at("nl").at(1).get<std::size_t>();
    hp.separ = j.at("separ").get<bool>();
    hp.flat = j.at("flat").get<bool>();
    hp.add_layer = j.at("add_layer").get<bool>();
    return hp;
}

void save_model(const Network<float>& net, const RunMetrics* metrics, const std::filesystem::path& path) {
    const ModelPlan& plan = net.plan();
    std::vector<std::uint8_t> payload;
    std::size_t scalars = 0;
    nlohmann::json arrays = nlohmann::json::array();
    for (const auto& a : net.state_arrays()) {
        arrays.push_back(a.size());
        scalars += a.size();
        for (float v : a) put_le(payload, std::bit_cast<std::uint32_t>(v));
    }

    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : plan.layers)
        layers.push_back({{"kind", to_string(l.kind)}, {"c_in", l.c_in}, {"c_out", l.c_out}, {"macro", l.macro}});

    nlohmann::json header = {
        {"format", "nlcnn-weights"},
        {"hyperparams", hyperparams_to_json(plan.hp)},
        {"batchnorm_placement", plan.bn_placement == BatchNormPlacement::after_pool ? "after_pool" : "before_pool"},
        {"layers", layers},
        {"seed", net.seed()},
        {"batchnorm_updates", net.batchnorm_updates()},
        {"array_sizes", arrays},
        {"scalar_count", scalars},
        {"payload_crc32", payload_crc(payload.data(), payload.size())},
    };
    if (metrics) {
        header["metrics"] = {{"epochs", metrics->rows.size()},
                             {"best_test_acc", metrics->best_test_acc},
                             {"final_test_acc", metrics->rows.empty() ? 0.0 : metrics->rows.back().test_acc},
                             {"total_train_seconds", metrics->total_train_seconds},
                             {"param_total", metrics->param_total}};
    }
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_le(out, kWeightFileVersion);
    put_le(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    out.insert(out.end(), payload.begin(), payload.end());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("failed writing " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open " + path.string());
    const std::vector<std::uint8_t> buf{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};

    if (buf.size() < kPrefixBytes) throw LoadError(path.string() + ": truncated file prefix");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw LoadError(path.string() + ": bad magic, not an NLCW file");
    const auto version = get_le<std::uint16_t>(buf, 4);
    if (version != kWeightFileVersion)
        throw LoadError(path.string() + ": unsupported format version " + std::to_string(version));
    const std::size_t header_len = get_le<std::uint32_t>(buf, 6);
    if (buf.size() < kPrefixBytes + header_len) throw LoadError(path.string() + ": truncated header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.begin() + kPrefixBytes, buf.begin() + std::ptrdiff_t(kPrefixBytes + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path.string() + ": malformed header: " + e.what());
    }

    try {
        const HyperParams hp = hyperparams_from_json(header.at("hyperparams"));
        const BatchNormPlacement placement = header.value("batchnorm_placement", std::string("after_pool")) ==
                                                     "before_pool"
                                                 ? BatchNormPlacement::before_pool
                                                 : BatchNormPlacement::after_pool;
        const std::size_t scalars = header.at("scalar_count").get<std::size_t>();
        const std::size_t payload_offset = kPrefixBytes + header_len;
        const std::size_t payload_bytes = buf.size() - payload_offset;
        if (payload_bytes != 4 * scalars)
            throw LoadError(path.string() + ": payload holds " + std::to_string(payload_bytes) + " bytes, header declares " +
                            std::to_string(scalars) + " scalars");
        const auto crc = header.at("payload_crc32").get<std::uint32_t>();
        if (payload_crc(buf.data() + payload_offset, payload_bytes) != crc)
            throw LoadError(path.string() + ": payload checksum mismatch");

        std::vector<std::vector<float>> arrays;
        std::size_t off = payload_offset;
        std::size_t declared = 0;
        for (const auto& n : header.at("array_sizes")) {
            const std::size_t count = n.get<std::size_t>();
            declared += count;
            if (declared > scalars) throw LoadError(path.string() + ": array sizes exceed scalar count");
            std::vector<float> a(count);
            for (std::size_t i = 0; i < count; ++i, off += 4)
                a[i] = std::bit_cast<float>(get_le<std::uint32_t>(buf, off));
            arrays.push_back(std::move(a));
        }
        if (declared != scalars) throw LoadError(path.string() + ": array sizes do not add up to scalar count");

        ModelPlan plan = build_plan(hp, placement);
        std::vector<std::uint64_t> updates;
        if (header.contains("batchnorm_updates")) updates = header.at("batchnorm_updates").get<std::vector<std::uint64_t>>();
        auto net = Network<float>::from_arrays(plan, header.at("seed").get<std::uint64_t>(), arrays, updates);
        return LoadedModel{std::move(net), hp, std::move(header)};
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(path.string() + ": incomplete header: " + e.what());
    } catch (const ConfigError& e) {
        throw LoadError(path.string() + ": header describes an invalid model: " + e.what());
    }
}

}  // namespace nlcnn
